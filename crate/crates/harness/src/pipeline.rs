//! The training stages, each reading its inputs from and writing its
//! outputs to a stage directory with a manifest.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use dialpolicy::agents::{
    evaluate_policy, train_agent, AgentConfig, AgentPolicy, AgentReward, Algo, CurvePoint, GreedyPolicy, RewardKind,
    TrainContext,
};
use dialpolicy::dialenv::{generate_corpus, Corpus, DialogueEnv, RandomPolicy};
use dialpolicy::rewardgan::{train_reward, RewardModel};
use dialpolicy::statevae::{state_matrix, train_vae, VaeConfig, VaeParams};
use serde::{Deserialize, Serialize};

use crate::batch::{batch_runs, mean_std, read_csv, write_csv, AggregatePoint, BatchResult};
use crate::config::{digest, ExperimentConfig};
use crate::error::{HarnessError, IoContext, Result};
use crate::manifest::{Begin, RunManifest, StageRun};
use crate::rng::{self, substream};

pub const CORPUS_FILE: &str = "corpus.txt";
pub const ENCODER_FILE: &str = "encoder.bin";
pub const REWARD_FILE: &str = "reward.bin";
pub const POLICY_FILE: &str = "policy.bin";
pub const CURVE_FILE: &str = "curve.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EVAL_FILE: &str = "eval.csv";

/// Episodes used to measure the random-policy reward level.
const RANDOM_PROBE_EPISODES: usize = 300;

/// Where each stage keeps its outputs under one root.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn encoder_dir(&self, variational: bool) -> PathBuf {
        self.root.join(if variational { "vae" } else { "ae" })
    }

    pub fn reward_dir(&self, kind: RewardKind) -> PathBuf {
        self.root.join("reward").join(kind.name())
    }

    pub fn agents_dir(&self) -> PathBuf {
        self.root.join("agents")
    }

    pub fn agent_dir(&self, algo: Algo, kind: RewardKind) -> PathBuf {
        self.agents_dir().join(agent_label(algo, kind))
    }

    pub fn eval_dir(&self, algo: Algo, kind: RewardKind) -> PathBuf {
        self.root.join("eval").join(agent_label(algo, kind))
    }

    pub fn transfer_dir(&self) -> PathBuf {
        self.root.join("transfer")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

pub fn agent_label(algo: Algo, kind: RewardKind) -> String {
    format!("{algo}_{kind}")
}

/// Encoder training results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderMetrics {
    pub variational: bool,
    pub states: usize,
    pub reconstruction_accuracy: f64,
    pub final_loss: f64,
    pub final_kl: f64,
}

/// Reward training results, including the reward levels of expert and
/// random behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardMetrics {
    pub kind: RewardKind,
    pub best_auc: f64,
    pub steps: usize,
    pub train_pairs: usize,
    pub heldout_pairs: usize,
    /// Mean per-turn `log D` on expert corpus pairs.
    pub expert_log_d: f64,
    /// Mean per-turn `log D` along random-policy rollouts.
    pub random_log_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFinal {
    pub seed: u64,
    pub success_rate: f64,
    pub average_turn: f64,
    pub best_frames: u64,
    pub imitation_accuracy: Option<f64>,
}

/// Outcome of a multi-seed agent run, as stored in `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent: String,
    pub algo: Algo,
    pub reward: RewardKind,
    pub budget_frames: u64,
    pub finals: Vec<SeedFinal>,
    pub failed_seeds: Vec<u64>,
    pub success_rate: f64,
    pub success_std: f64,
    pub average_turn: f64,
    pub average_turn_std: f64,
}

impl AgentSummary {
    fn from_batch(label: String, algo: Algo, kind: RewardKind, budget: u64, batch: &BatchResult) -> Self {
        let (success_rate, success_std) = batch.final_success();
        let (average_turn, average_turn_std) = batch.final_turns();
        Self {
            agent: label,
            algo,
            reward: kind,
            budget_frames: budget,
            finals: batch
                .runs
                .iter()
                .map(|r| SeedFinal {
                    seed: r.seed,
                    success_rate: r.outcome.final_eval.success_rate,
                    average_turn: r.outcome.final_eval.average_turn,
                    best_frames: r.outcome.best_point.frames,
                    imitation_accuracy: r.outcome.imitation_accuracy,
                })
                .collect(),
            failed_seeds: batch.failures.iter().map(|f| f.0).collect(),
            success_rate,
            success_std,
            average_turn,
            average_turn_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentResult {
    pub summary: AgentSummary,
    pub aggregate: Vec<AggregatePoint>,
}

impl AgentResult {
    pub fn success_at(&self, frames: u64) -> Option<f64> {
        self.aggregate.iter().find(|p| p.frames == frames).map(|p| p.success_mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub seed: u64,
    pub episodes: usize,
    pub success_rate: f64,
    pub average_turn: f64,
    pub mean_learned_reward: Option<f64>,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").at(path)
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).at(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Runs stages of one experiment configuration.
pub struct Pipeline<'a> {
    cfg: &'a ExperimentConfig,
    layout: Layout,
    force: bool,
}

impl<'a> Pipeline<'a> {
    /// Writes under the configured (or environment-overridden) output root.
    pub fn new(cfg: &'a ExperimentConfig, force: bool) -> Self {
        Self::with_root(cfg, cfg.out_dir(), force)
    }

    pub fn with_root(cfg: &'a ExperimentConfig, root: impl Into<PathBuf>, force: bool) -> Self {
        Self {
            cfg,
            layout: Layout::new(root),
            force,
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub(crate) fn begin(&self, dir: &Path, stage: &str, stage_hash: String) -> Result<Begin> {
        StageRun::begin(dir, stage, stage_hash, self.cfg.hash(), self.cfg.experiment.seed, self.force)
    }

    pub fn gen_corpus(&self) -> Result<Corpus> {
        let dir = self.layout.corpus_dir();
        match self.begin(&dir, "gen-corpus", self.cfg.corpus_hash())? {
            Begin::Reused(_) => Ok(self.load_corpus()?.1),
            Begin::Fresh(run) => {
                let env = self.cfg.env()?;
                let (corpus, _) = run.run(|s| {
                    let mut rng = substream(self.cfg.experiment.seed, rng::CORPUS);
                    let corpus = generate_corpus(&env, &self.cfg.corpus, &mut rng)?;
                    corpus.save(&s.file(CORPUS_FILE)?, env.registry())?;
                    log::info!("corpus: {} episodes, {} turns", corpus.episodes.len(), corpus.num_turns());
                    Ok(corpus)
                })?;
                Ok(corpus)
            }
        }
    }

    pub fn load_corpus(&self) -> Result<(DialogueEnv, Corpus)> {
        let dir = self.layout.corpus_dir();
        RunManifest::require(&dir, "gen-corpus", &self.cfg.corpus_hash())?;
        let env = self.cfg.env()?;
        let corpus = Corpus::load(&dir.join(CORPUS_FILE), env.registry())?;
        corpus.check_layout(&env)?;
        Ok((env, corpus))
    }

    pub fn train_encoder(&self, variational: bool) -> Result<EncoderMetrics> {
        let dir = self.layout.encoder_dir(variational);
        match self.begin(&dir, "train-vae", self.cfg.vae_hash(variational))? {
            Begin::Reused(_) => read_json(&dir.join(METRICS_FILE)),
            Begin::Fresh(run) => {
                let (_, corpus) = self.load_corpus()?;
                let cfg = VaeConfig {
                    variational,
                    ..self.cfg.vae.clone()
                };
                let stream = if variational { rng::VAE } else { rng::AE };
                let (metrics, _) = run.run(|s| {
                    let states = corpus.states();
                    let mut rng = substream(self.cfg.experiment.seed, stream);
                    let (params, curve) = train_vae(&states, &cfg, &mut rng)?;
                    let last = curve.last().copied();
                    let metrics = EncoderMetrics {
                        variational,
                        states: states.len(),
                        reconstruction_accuracy: params.reconstruction_accuracy(&state_matrix(&states))?,
                        final_loss: last.map_or(f64::NAN, |l| l.total),
                        final_kl: last.map_or(0.0, |l| l.kl),
                    };
                    let path = s.file(ENCODER_FILE)?;
                    params.save(BufWriter::new(File::create(&path).at(&path)?))?;
                    write_csv(&s.file(CURVE_FILE)?, &curve)?;
                    write_json(&s.file(METRICS_FILE)?, &metrics)?;
                    log::info!("encoder: reconstruction accuracy {:.4}", metrics.reconstruction_accuracy);
                    Ok(metrics)
                })?;
                Ok(metrics)
            }
        }
    }

    pub fn load_encoder(&self, variational: bool) -> Result<VaeParams> {
        let dir = self.layout.encoder_dir(variational);
        RunManifest::require(&dir, "train-vae", &self.cfg.vae_hash(variational))?;
        let path = dir.join(ENCODER_FILE);
        Ok(VaeParams::load(BufReader::new(File::open(&path).at(&path)?))?)
    }

    pub fn train_reward(&self, kind: RewardKind) -> Result<RewardMetrics> {
        let variational = learned_variant(kind)?;
        let dir = self.layout.reward_dir(kind);
        match self.begin(&dir, "train-reward", self.cfg.reward_hash(kind))? {
            Begin::Reused(_) => read_json(&dir.join(METRICS_FILE)),
            Begin::Fresh(run) => {
                let (env, corpus) = self.load_corpus()?;
                let encoder = self.load_encoder(variational)?;
                let (metrics, _) = run.run(|s| {
                    let mut rng = substream(self.cfg.experiment.seed, rng::GAN);
                    let (model, report) =
                        train_reward(&corpus, &encoder, env.registry(), &self.cfg.gan, env.t_max(), &mut rng)?;
                    let (expert_log_d, random_log_d) =
                        reward_levels(&model, &env, &corpus, &mut substream(self.cfg.experiment.seed, rng::EVAL))?;
                    let metrics = RewardMetrics {
                        kind,
                        best_auc: report.best_auc,
                        steps: report.steps,
                        train_pairs: report.train_pairs,
                        heldout_pairs: report.heldout_pairs,
                        expert_log_d,
                        random_log_d,
                    };
                    model.save(&s.file(REWARD_FILE)?, env.registry())?;
                    write_csv(&s.file(CURVE_FILE)?, &report.curve)?;
                    write_json(&s.file(METRICS_FILE)?, &metrics)?;
                    log::info!(
                        "reward {kind}: auc {:.3}, expert log D {:.3}, random log D {:.3}",
                        metrics.best_auc,
                        expert_log_d,
                        random_log_d
                    );
                    Ok(metrics)
                })?;
                Ok(metrics)
            }
        }
    }

    pub fn load_reward(&self, kind: RewardKind) -> Result<RewardModel> {
        learned_variant(kind)?;
        let dir = self.layout.reward_dir(kind);
        RunManifest::require(&dir, "train-reward", &self.cfg.reward_hash(kind))?;
        Ok(RewardModel::load(&dir.join(REWARD_FILE), &self.cfg.registry()?)?)
    }

    /// The GAN-VAE model used to monitor `log D` on the curves of agents
    /// trained on other rewards, when it exists.
    fn monitor_model(&self) -> Option<RewardModel> {
        self.load_reward(RewardKind::GanVae).ok()
    }

    fn agent_config(&self, algo: Algo) -> AgentConfig {
        AgentConfig {
            algo,
            ..self.cfg.agent
        }
    }

    fn agent_hash(&self, algo: Algo, kind: RewardKind, monitored: bool) -> String {
        let reward = match kind {
            RewardKind::Human => "human".to_string(),
            k => self.cfg.reward_hash(k),
        };
        let monitor = if monitored {
            self.cfg.reward_hash(RewardKind::GanVae)
        } else {
            String::new()
        };
        digest(&(
            self.cfg.corpus_hash(),
            reward,
            monitor,
            self.agent_config(algo),
            &self.cfg.experiment.seeds,
        ))
    }

    /// Trains one agent per configured seed and aggregates the curves.
    pub fn train_agents(&self, algo: Algo, kind: RewardKind) -> Result<AgentResult> {
        let (env, corpus) = self.load_corpus()?;
        let learned = match kind {
            RewardKind::Human => None,
            k => Some(self.load_reward(k)?),
        };
        let fallback = if learned.is_none() { self.monitor_model() } else { None };
        let monitor = learned.as_ref().or(fallback.as_ref());
        let dir = self.layout.agent_dir(algo, kind);
        let label = agent_label(algo, kind);
        let run = match self.begin(&dir, "train-agent", self.agent_hash(algo, kind, fallback.is_some()))? {
            Begin::Reused(_) => return self.load_agents(algo, kind),
            Begin::Fresh(run) => run,
        };
        let cfg = self.agent_config(algo);
        let ctx = TrainContext {
            env: &env,
            catalog: &corpus.catalog,
            reward: learned.as_ref().map_or(AgentReward::Human, AgentReward::Learned),
            corpus: Some(&corpus),
            monitor,
        };
        let fingerprint = corpus.catalog.fingerprint(env.registry());
        let seeds = self.cfg.experiment.seeds.clone();
        let (result, _) = run.run(|s| {
            let batch = batch_runs(&seeds, |seed| {
                let out = train_agent(&ctx, &cfg, &mut substream(seed, rng::AGENT))?;
                write_csv(&s.file(&format!("seed_{seed}/{CURVE_FILE}"))?, &out.curve)?;
                let path = s.file(&format!("seed_{seed}/{POLICY_FILE}"))?;
                out.best_policy.write(BufWriter::new(File::create(&path).at(&path)?), &fingerprint)?;
                log::info!("{label} seed {seed}: final success {:.3}", out.final_eval.success_rate);
                Ok(out)
            })?;
            let summary = AgentSummary::from_batch(label.clone(), algo, kind, cfg.budget_frames, &batch);
            write_csv(&s.file(AGGREGATE_FILE)?, &batch.aggregate)?;
            write_json(&s.file(SUMMARY_FILE)?, &summary)?;
            s.add_run(&label, summary.finals.iter().map(|f| f.seed).collect());
            Ok(AgentResult {
                summary,
                aggregate: batch.aggregate,
            })
        })?;
        Ok(result)
    }

    pub fn load_agents(&self, algo: Algo, kind: RewardKind) -> Result<AgentResult> {
        let dir = self.layout.agent_dir(algo, kind);
        if RunManifest::load(&dir)?.is_none_or(|m| m.status != crate::manifest::Status::Completed) {
            return Err(HarnessError::MissingArtifact {
                path: dir,
                stage: "train-agent",
            });
        }
        Ok(AgentResult {
            summary: read_json(&dir.join(SUMMARY_FILE))?,
            aggregate: read_csv(&dir.join(AGGREGATE_FILE))?,
        })
    }

    /// Fresh greedy evaluation of every saved policy of an agent run.
    pub fn evaluate(&self, algo: Algo, kind: RewardKind, episodes: usize) -> Result<Vec<EvalRow>> {
        if episodes == 0 {
            return Err(HarnessError::Config("evaluation needs at least one episode".into()));
        }
        let agent_dir = self.layout.agent_dir(algo, kind);
        let agents = RunManifest::load(&agent_dir)?
            .filter(|m| m.status == crate::manifest::Status::Completed)
            .ok_or_else(|| HarnessError::MissingArtifact {
                path: agent_dir.clone(),
                stage: "train-agent",
            })?;
        let (env, corpus) = self.load_corpus()?;
        let learned = match kind {
            RewardKind::Human => None,
            k => Some(self.load_reward(k)?),
        };
        let fingerprint = corpus.catalog.fingerprint(env.registry());
        let seeds: Vec<u64> = agents.runs.iter().flat_map(|r| r.seeds.clone()).collect();
        let dir = self.layout.eval_dir(algo, kind);
        let hash = digest(&(&agents.stage_hash, episodes));
        match self.begin(&dir, "evaluate", hash)? {
            Begin::Reused(_) => read_csv(&dir.join(EVAL_FILE)),
            Begin::Fresh(run) => {
                let (rows, _) = run.run(|s| {
                    let mut rows = Vec::with_capacity(seeds.len());
                    for &seed in &seeds {
                        let path = agent_dir.join(format!("seed_{seed}")).join(POLICY_FILE);
                        let (policy, fp) = AgentPolicy::read(BufReader::new(File::open(&path).at(&path)?))?;
                        if fp != fingerprint || policy.state_dim() != env.state_dim() || policy.num_actions() != corpus.catalog.len()
                        {
                            return Err(HarnessError::Stale {
                                path,
                                reason: "policy was trained against a different action catalog or state layout".into(),
                            });
                        }
                        let mut greedy = GreedyPolicy(&policy);
                        let mut rng = substream(seed, rng::EVAL);
                        let p = evaluate_policy(&env, &mut greedy, &corpus.catalog, episodes, learned.as_ref(), &mut rng)?;
                        rows.push(EvalRow {
                            seed,
                            episodes,
                            success_rate: p.success_rate,
                            average_turn: p.average_turn,
                            mean_learned_reward: p.mean_learned_reward,
                        });
                    }
                    write_csv(&s.file(EVAL_FILE)?, &rows)?;
                    Ok(rows)
                })?;
                Ok(rows)
            }
        }
    }
}

/// Whether a learned reward uses the variational encoder.
pub fn learned_variant(kind: RewardKind) -> Result<bool> {
    match kind {
        RewardKind::GanVae => Ok(true),
        RewardKind::GanAe => Ok(false),
        RewardKind::Human => Err(HarnessError::Config("the human reward has no learned model".into())),
    }
}

/// Mean per-turn `log D` on expert pairs and along random rollouts.
pub fn reward_levels<R: rand::RngCore>(
    model: &RewardModel,
    env: &DialogueEnv,
    corpus: &Corpus,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let pairs = corpus.pairs();
    let states: Vec<_> = pairs.iter().map(|p| p.0.clone()).collect();
    let indices: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let (expert, _) = mean_std(&model.log_d_indexed(&states, &indices)?);
    let mut random = RandomPolicy {
        num_actions: corpus.catalog.len(),
    };
    let p: CurvePoint = evaluate_policy(env, &mut random, &corpus.catalog, RANDOM_PROBE_EPISODES, Some(model), rng)?;
    Ok((expert, p.mean_learned_reward.unwrap_or(f64::NAN)))
}
