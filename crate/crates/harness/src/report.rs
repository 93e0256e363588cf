//! Results table and per-figure curve files from completed runs.

use std::path::{Path, PathBuf};

use dialpolicy::agents::{Algo, RewardKind};
use serde::{Deserialize, Serialize};

use crate::batch::{read_csv, write_csv, AggregatePoint};
use crate::config::digest;
use crate::error::{IoContext, Result};
use crate::manifest::{Begin, RunManifest, StageRun, Status};
use crate::pipeline::{read_json, AgentSummary, Layout, RewardMetrics, AGGREGATE_FILE, METRICS_FILE, SUMMARY_FILE};
use crate::transfer;

pub const RESULTS_FILE: &str = "results.csv";
pub const DQN_FAMILY_FILE: &str = "dqn_family.csv";
pub const PPO_FAMILY_FILE: &str = "ppo_family.csv";
pub const REWARD_MONITOR_FILE: &str = "reward_monitor.csv";
pub const TRANSFER_FILE: &str = "transfer.csv";

/// Label of the expert-corpus reward line in the monitoring file.
pub const VALIDATION: &str = "validation";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub agent: String,
    pub success_rate: f64,
    pub average_turn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRow {
    pub agent: String,
    pub frames: u64,
    pub success_mean: f64,
    pub success_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub agent: String,
    pub frames: u64,
    pub reward_mean: f64,
    pub reward_std: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ResultRow>,
    pub dqn_family: Vec<SuccessRow>,
    pub ppo_family: Vec<SuccessRow>,
    pub reward_monitor: Vec<RewardRow>,
    pub transfer: Vec<SuccessRow>,
    pub warnings: Vec<String>,
}

impl Report {
    /// Fixed-width rendering of the results table.
    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.agent.len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}  {:>12}  {:>12}\n", "agent", "success_rate", "average_turn");
        for r in &self.rows {
            out += &format!("{:<width$}  {:>12.3}  {:>12.2}\n", r.agent, r.success_rate, r.average_turn);
        }
        out
    }
}

fn success_rows<'a>(agent: &str, agg: &'a [AggregatePoint]) -> impl Iterator<Item = SuccessRow> + 'a {
    let agent = agent.to_string();
    agg.iter().map(move |p| SuccessRow {
        agent: agent.clone(),
        frames: p.frames,
        success_mean: p.success_mean,
        success_std: p.success_std,
    })
}

fn completed(dir: &Path) -> bool {
    matches!(RunManifest::load(dir), Ok(Some(m)) if m.status == Status::Completed)
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Collects every completed agent run under each root. Missing or
/// incomplete runs are skipped with a warning.
pub fn collect(roots: &[PathBuf]) -> Result<Report> {
    let mut report = Report::default();
    let warn = |report: &mut Report, msg: String| {
        log::warn!("{msg}");
        report.warnings.push(msg);
    };
    if roots.is_empty() {
        warn(&mut report, "no run directories given; the table is empty".into());
    }
    let prefix = roots.len() > 1;
    for root in roots {
        if !root.is_dir() {
            warn(&mut report, format!("{}: no such run directory, omitted", root.display()));
            continue;
        }
        let layout = Layout::new(root);
        let name = |label: &str| {
            if prefix {
                format!("{}/{label}", root.file_name().map_or_else(|| root.display().to_string(), |n| n.to_string_lossy().into_owned()))
            } else {
                label.to_string()
            }
        };
        let mut frames = Vec::new();
        for dir in sorted_subdirs(&layout.agents_dir())? {
            if !completed(&dir) {
                warn(&mut report, format!("{}: run incomplete, omitted", dir.display()));
                continue;
            }
            let summary: AgentSummary = read_json(&dir.join(SUMMARY_FILE))?;
            let agg: Vec<AggregatePoint> = read_csv(&dir.join(AGGREGATE_FILE))?;
            let agent = name(&summary.agent);
            report.rows.push(ResultRow {
                agent: agent.clone(),
                success_rate: summary.success_rate,
                average_turn: summary.average_turn,
            });
            let family = if summary.algo == Algo::Ppo {
                &mut report.ppo_family
            } else {
                &mut report.dqn_family
            };
            family.extend(success_rows(&agent, &agg));
            for p in &agg {
                if let (Some(m), Some(s)) = (p.reward_mean, p.reward_std) {
                    report.reward_monitor.push(RewardRow {
                        agent: agent.clone(),
                        frames: p.frames,
                        reward_mean: m,
                        reward_std: s,
                    });
                    frames.push(p.frames);
                }
            }
        }
        let reward_dir = layout.reward_dir(RewardKind::GanVae);
        if completed(&reward_dir) && !frames.is_empty() {
            let metrics: RewardMetrics = read_json(&reward_dir.join(METRICS_FILE))?;
            frames.sort_unstable();
            frames.dedup();
            report.reward_monitor.extend(frames.into_iter().map(|f| RewardRow {
                agent: name(VALIDATION),
                frames: f,
                reward_mean: metrics.expert_log_d,
                reward_std: 0.0,
            }));
        }
        let tdir = layout.transfer_dir();
        if completed(&tdir) {
            for arm in transfer::ARMS {
                let agg: Vec<AggregatePoint> = read_csv(&tdir.join(arm).join(AGGREGATE_FILE))?;
                report.transfer.extend(success_rows(&name(arm), &agg));
            }
        }
    }
    Ok(report)
}

/// Writes the table and figure files to `out`, listed in its manifest.
pub fn report(roots: &[PathBuf], out: &Path) -> Result<Report> {
    let report = collect(roots)?;
    let hash = digest(&roots);
    let run = match StageRun::begin(out, "report", hash.clone(), hash, 0, true)? {
        Begin::Fresh(run) => run,
        Begin::Reused(m) => unreachable!("forced stage reused {}", m.stage),
    };
    run.run(|s| {
        write_table(&s.file(RESULTS_FILE)?, &report.rows)?;
        write_csv(&s.file(DQN_FAMILY_FILE)?, &report.dqn_family)?;
        write_csv(&s.file(PPO_FAMILY_FILE)?, &report.ppo_family)?;
        write_csv(&s.file(REWARD_MONITOR_FILE)?, &report.reward_monitor)?;
        write_csv(&s.file(TRANSFER_FILE)?, &report.transfer)?;
        Ok(())
    })?;
    Ok(report)
}

/// Like `write_csv`, but keeps the header when there are no rows.
fn write_table(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["agent", "success_rate", "average_turn"])?;
    for r in rows {
        w.write_record([r.agent.clone(), r.success_rate.to_string(), r.average_turn.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_gives_an_empty_table_with_a_warning() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("report");
        let r = report(&[], &out).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!(r.warnings.len(), 1);
        let text = std::fs::read_to_string(out.join(RESULTS_FILE)).unwrap();
        assert_eq!(text, "agent,success_rate,average_turn\n");
        let r = report(&[tmp.path().join("missing")], &out).unwrap();
        assert!(r.rows.is_empty() && r.warnings[0].contains("omitted"));
    }
}
