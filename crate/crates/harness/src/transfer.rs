//! Domain-holdout transfer: a factored-action reward trained without one
//! domain guides a fresh agent on that domain.

use std::path::Path;

use dialpolicy::agents::{train_agent, AgentConfig, AgentReward, Algo, TrainContext};
use dialpolicy::dialenv::Corpus;
use dialpolicy::rewardgan::{train_reward, EmbeddingMode, GanConfig, RewardModel};
use dialpolicy::statevae::{train_vae, VaeConfig, VaeParams};
use dialpolicy::xfer::{audit_corpus, filter_corpus, HoldoutAudit};
use serde::{Deserialize, Serialize};

use crate::batch::{batch_runs, read_csv, write_csv, AggregatePoint};
use crate::config::{digest, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::manifest::Begin;
use crate::pipeline::{read_json, write_json, Pipeline, AGGREGATE_FILE, CURVE_FILE, REWARD_FILE};
use crate::rng::{self, substream};

pub const FULL: &str = "dqn_new_gan_vae_full";
pub const HOLDOUT: &str = "dqn_new_gan_vae_holdout";
pub const HUMAN: &str = "dqn_human";
pub const SUMMARY_FILE: &str = "transfer.csv";
pub const AUDIT_FILE: &str = "audit.json";
pub const FINALS_FILE: &str = "finals.csv";
pub const ARMS: [&str; 3] = [FULL, HOLDOUT, HUMAN];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SeedSuccess {
    seed: u64,
    success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub agent: String,
    pub success_rate: f64,
    pub success_std: f64,
    pub average_turn: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub holdout: String,
    pub corpus_turns: usize,
    pub filtered_turns: usize,
    pub audit: HoldoutAudit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferArm {
    pub summary: ArmSummary,
    pub finals: Vec<f64>,
    pub aggregate: Vec<AggregatePoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub audit: AuditRecord,
    /// Full-domain reward, holdout reward and handcrafted reward, in order.
    pub arms: Vec<TransferArm>,
}

impl TransferReport {
    pub fn arm(&self, label: &str) -> Option<&TransferArm> {
        self.arms.iter().find(|a| a.summary.agent == label)
    }
}

fn load_report(dir: &Path) -> Result<TransferReport> {
    let summaries: Vec<ArmSummary> = read_csv(&dir.join(SUMMARY_FILE))?;
    let arms = summaries
        .into_iter()
        .map(|summary| {
            let arm = dir.join(&summary.agent);
            let finals: Vec<SeedSuccess> = read_csv(&arm.join(FINALS_FILE))?;
            Ok(TransferArm {
                finals: finals.iter().map(|f| f.success_rate).collect(),
                aggregate: read_csv(&arm.join(AGGREGATE_FILE))?,
                summary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferReport {
        audit: read_json(&dir.join(AUDIT_FILE))?,
        arms,
    })
}

fn factored(cfg: &GanConfig) -> GanConfig {
    GanConfig {
        embedding: EmbeddingMode::Factored,
        ..*cfg
    }
}

fn transfer_hash(cfg: &ExperimentConfig) -> String {
    digest(&(
        cfg.vae_hash(true),
        factored(&cfg.gan),
        &cfg.transfer,
        cfg.agent,
        &cfg.experiment.seeds,
    ))
}

fn train_factored_reward(cfg: &ExperimentConfig, corpus: &Corpus, encoder: &VaeParams, stream: &str) -> Result<RewardModel> {
    let env = cfg.env()?;
    let mut rng = substream(cfg.experiment.seed, &format!("{stream}/{}", rng::GAN));
    Ok(train_reward(corpus, encoder, env.registry(), &factored(&cfg.gan), env.t_max(), &mut rng)?.0)
}

/// Trains factored rewards on the full corpus (reusing its VAE) and on the
/// holdout-filtered corpus (with an encoder that never saw the held-out
/// domain), then fresh DQN agents on held-out-domain goals under each
/// reward and under the handcrafted reward.
pub fn transfer_experiment(pipeline: &Pipeline<'_>) -> Result<TransferReport> {
    let cfg = pipeline.config();
    let dir = pipeline.layout().transfer_dir();
    let run = match pipeline.begin(&dir, "transfer", transfer_hash(cfg))? {
        Begin::Fresh(run) => run,
        Begin::Reused(_) => return load_report(&dir),
    };
    let (env, corpus) = pipeline.load_corpus()?;
    let full_encoder = pipeline.load_encoder(true)?;
    let reg = env.registry();
    let holdout = reg
        .domain_id(&cfg.transfer.holdout)
        .ok_or_else(|| HarnessError::Config(format!("unknown holdout domain {}", cfg.transfer.holdout)))?;
    let target = cfg.transfer_env()?;
    let agent_cfg = AgentConfig {
        algo: Algo::Dqn,
        budget_frames: cfg.transfer.budget_frames,
        eval_every: cfg.transfer.eval_every,
        ..cfg.agent
    };
    let seeds = cfg.experiment.seeds.clone();
    let (report, _) = run.run(|s| {
        let filtered = filter_corpus(&corpus, holdout, reg)?;
        let audit = audit_corpus(&filtered, holdout, env.layout(), reg);
        let record = AuditRecord {
            holdout: cfg.transfer.holdout.clone(),
            corpus_turns: corpus.num_turns(),
            filtered_turns: filtered.num_turns(),
            audit,
        };
        write_json(&s.file(AUDIT_FILE)?, &record)?;
        if !record.audit.is_clean() {
            return Err(HarnessError::Config(format!("holdout corpus still touches {}: {:?}", record.holdout, record.audit)));
        }
        let full = train_factored_reward(cfg, &corpus, &full_encoder, "transfer/full")?;
        full.save(&s.file(&format!("full_{REWARD_FILE}"))?, reg)?;
        let mut vae_rng = substream(cfg.experiment.seed, &format!("transfer/holdout/{}", rng::VAE));
        let vae_cfg = VaeConfig {
            variational: true,
            ..cfg.vae.clone()
        };
        let (held_encoder, _) = train_vae(&filtered.states(), &vae_cfg, &mut vae_rng)?;
        let held = train_factored_reward(cfg, &filtered, &held_encoder, "transfer/holdout")?;
        held.save(&s.file(&format!("holdout_{REWARD_FILE}"))?, reg)?;

        let mut arms = Vec::new();
        for (label, reward) in [
            (ARMS[0], AgentReward::Learned(&full)),
            (ARMS[1], AgentReward::Learned(&held)),
            (ARMS[2], AgentReward::Human),
        ] {
            let ctx = TrainContext {
                env: &target,
                catalog: &corpus.catalog,
                reward,
                corpus: None,
                monitor: None,
            };
            let batch = batch_runs(&seeds, |seed| {
                let out = train_agent(&ctx, &agent_cfg, &mut substream(seed, rng::AGENT))?;
                write_csv(&s.file(&format!("{label}/seed_{seed}/{CURVE_FILE}"))?, &out.curve)?;
                log::info!("{label} seed {seed}: final success {:.3}", out.final_eval.success_rate);
                Ok(out)
            })?;
            write_csv(&s.file(&format!("{label}/{AGGREGATE_FILE}"))?, &batch.aggregate)?;
            let finals: Vec<SeedSuccess> = batch
                .runs
                .iter()
                .map(|r| SeedSuccess {
                    seed: r.seed,
                    success_rate: r.outcome.final_eval.success_rate,
                })
                .collect();
            write_csv(&s.file(&format!("{label}/{FINALS_FILE}"))?, &finals)?;
            s.add_run(label, batch.runs.iter().map(|r| r.seed).collect());
            let (success_rate, success_std) = batch.final_success();
            arms.push(TransferArm {
                summary: ArmSummary {
                    agent: label.to_string(),
                    success_rate,
                    success_std,
                    average_turn: batch.final_turns().0,
                    seeds: batch.runs.len(),
                },
                finals: batch.finals().iter().map(|p| p.success_rate).collect(),
                aggregate: batch.aggregate,
            });
        }
        let rows: Vec<&ArmSummary> = arms.iter().map(|a| &a.summary).collect();
        write_csv(&s.file(SUMMARY_FILE)?, &rows)?;
        Ok(TransferReport { audit: record, arms })
    })?;
    Ok(report)
}
