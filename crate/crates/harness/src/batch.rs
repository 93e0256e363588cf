//! Multi-seed runs and their aggregation.

use std::path::Path;

use dialpolicy::agents::{CurvePoint, TrainOutcome};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Mean and population standard deviation per evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub frames: u64,
    pub runs: usize,
    pub success_mean: f64,
    pub success_std: f64,
    pub turn_mean: f64,
    pub turn_std: f64,
    pub reward_mean: Option<f64>,
    pub reward_std: Option<f64>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregates curves evaluated at identical frame counts.
pub fn aggregate(curves: &[Vec<CurvePoint>]) -> Result<Vec<AggregatePoint>> {
    let Some(first) = curves.first() else {
        return Ok(Vec::new());
    };
    for c in curves {
        if c.len() != first.len() || c.iter().zip(first).any(|(a, b)| a.frames != b.frames) {
            return Err(HarnessError::Config("curves were evaluated at different frame counts".into()));
        }
    }
    Ok((0..first.len())
        .map(|i| {
            let col = |f: fn(&CurvePoint) -> f64| curves.iter().map(|c| f(&c[i])).collect::<Vec<_>>();
            let (success_mean, success_std) = mean_std(&col(|p| p.success_rate));
            let (turn_mean, turn_std) = mean_std(&col(|p| p.average_turn));
            let rewards: Option<Vec<f64>> = curves.iter().map(|c| c[i].mean_learned_reward).collect();
            let (reward_mean, reward_std) = match rewards {
                Some(r) => {
                    let (m, s) = mean_std(&r);
                    (Some(m), Some(s))
                }
                None => (None, None),
            };
            AggregatePoint {
                frames: first[i].frames,
                runs: curves.len(),
                success_mean,
                success_std,
                turn_mean,
                turn_std,
                reward_mean,
                reward_std,
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: TrainOutcome,
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub runs: Vec<SeedRun>,
    /// Seeds whose run failed, with the error.
    pub failures: Vec<(u64, String)>,
    pub aggregate: Vec<AggregatePoint>,
}

impl BatchResult {
    /// Final evaluations of the completed runs, in seed order.
    pub fn finals(&self) -> Vec<CurvePoint> {
        self.runs.iter().map(|r| r.outcome.final_eval).collect()
    }

    pub fn final_success(&self) -> (f64, f64) {
        mean_std(&self.finals().iter().map(|p| p.success_rate).collect::<Vec<_>>())
    }

    pub fn final_turns(&self) -> (f64, f64) {
        mean_std(&self.finals().iter().map(|p| p.average_turn).collect::<Vec<_>>())
    }

    /// Mean success over seeds at the evaluation point `frames`.
    pub fn success_at(&self, frames: u64) -> Option<f64> {
        self.aggregate.iter().find(|p| p.frames == frames).map(|p| p.success_mean)
    }
}

/// Runs `train` once per seed. Failed seeds are recorded and skipped; the
/// aggregate covers the completed ones, and it is an error if none complete.
pub fn batch_runs(seeds: &[u64], mut train: impl FnMut(u64) -> Result<TrainOutcome>) -> Result<BatchResult> {
    if seeds.is_empty() {
        return Err(HarnessError::Config("batch needs at least one seed".into()));
    }
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for &seed in seeds {
        match train(seed) {
            Ok(outcome) => runs.push(SeedRun { seed, outcome }),
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                failures.push((seed, e.to_string()));
            }
        }
    }
    if runs.is_empty() {
        return Err(HarnessError::Config(format!("every seed failed: {:?}", failures)));
    }
    if !failures.is_empty() {
        log::warn!("aggregating {} of {} seeds", runs.len(), seeds.len());
    }
    let curves: Vec<Vec<CurvePoint>> = runs.iter().map(|r| r.outcome.curve.clone()).collect();
    let aggregate = aggregate(&curves)?;
    Ok(BatchResult {
        runs,
        failures,
        aggregate,
    })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn point(frames: u64, s: f64, t: f64, r: Option<f64>) -> CurvePoint {
        CurvePoint {
            frames,
            success_rate: s,
            average_turn: t,
            mean_learned_reward: r,
        }
    }

    #[test]
    fn single_curve_aggregates_to_itself() {
        let c = vec![point(0, 0.1, 5.0, None), point(10, 0.7, 4.0, None)];
        let agg = aggregate(std::slice::from_ref(&c)).unwrap();
        for (a, p) in agg.iter().zip(&c) {
            assert_eq!(a.success_mean, p.success_rate);
            assert_eq!(a.success_std, 0.0);
            assert_eq!(a.turn_std, 0.0);
            assert_eq!(a.reward_mean, None);
        }
    }

    #[test]
    fn misaligned_curves_are_rejected() {
        let a = vec![point(0, 0.0, 1.0, None)];
        let b = vec![point(5, 0.0, 1.0, None)];
        assert!(aggregate(&[a, b]).is_err());
    }

    #[test]
    fn known_mean_and_std() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert_eq!(s, 2.0);
    }

    #[test]
    fn csv_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("c.csv");
        let c = vec![point(0, 0.25, 5.5, Some(-1.5)), point(10, 0.5, 4.0, None)];
        write_csv(&path, &c).unwrap();
        assert_eq!(read_csv::<CurvePoint>(&path).unwrap(), c);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("frames,success_rate,average_turn,mean_learned_reward\n"));
    }

    #[test]
    fn all_failures_is_an_error_and_partial_failures_are_skipped() {
        let err = batch_runs(&[1, 2], |_| Err(HarnessError::Config("x".into())));
        assert!(err.is_err());
        assert!(batch_runs(&[], |_| unreachable!()).is_err());
    }

    proptest! {
        #[test]
        fn aggregate_matches_recomputation_from_written_files(
            values in proptest::collection::vec(proptest::collection::vec((0.0f64..1.0, 1.0f64..40.0), 3), 1..6)
        ) {
            let tmp = tempfile::tempdir().unwrap();
            let curves: Vec<Vec<CurvePoint>> = values
                .iter()
                .map(|c| c.iter().enumerate().map(|(i, &(s, t))| point(i as u64 * 10, s, t, Some(-s))).collect())
                .collect();
            for (i, c) in curves.iter().enumerate() {
                write_csv(&tmp.path().join(format!("{i}.csv")), c).unwrap();
            }
            let agg = aggregate(&curves).unwrap();
            // Recompute the mean column from the written files, row by row.
            for (row, a) in agg.iter().enumerate() {
                let mut sum = 0.0;
                let mut sq = Vec::new();
                for i in 0..curves.len() {
                    let back: Vec<CurvePoint> = read_csv(&tmp.path().join(format!("{i}.csv"))).unwrap();
                    sum += back[row].success_rate;
                    sq.push(back[row].success_rate);
                }
                let mean = sum / curves.len() as f64;
                let var = sq.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / curves.len() as f64;
                prop_assert!((a.success_mean - mean).abs() < 1e-12);
                prop_assert!((a.success_std - var.sqrt()).abs() < 1e-12);
                prop_assert!((a.reward_mean.unwrap() + mean).abs() < 1e-12);
                prop_assert_eq!(a.runs, curves.len());
            }
        }
    }
}
