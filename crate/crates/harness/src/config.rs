use std::path::{Path, PathBuf};

use dialpolicy::agents::{AgentConfig, RewardKind};
use dialpolicy::dialenv::{CorpusConfig, DialogueEnv, EnvConfig, SchemaRegistry};
use dialpolicy::rewardgan::GanConfig;
use dialpolicy::statevae::VaeConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, IoContext, Result};

/// Overrides `experiment.out_dir` when set.
pub const OUT_ENV: &str = "DIALPOLICY_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 5 domains, 120-dim state, 60-action catalog.
    #[default]
    Desk,
    /// 7 domains, 392-dim state, 300-action catalog; checks shapes only.
    PaperShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub profile: Profile,
    /// Root seed for corpus, encoder and reward training.
    pub seed: u64,
    /// One agent run per seed.
    pub seeds: Vec<u64>,
    pub reward: RewardKind,
    pub out_dir: PathBuf,
    /// Schema file; empty selects the profile's built-in schema.
    pub schema: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    /// Domain withheld from reward training.
    pub holdout: String,
    pub budget_frames: u64,
    pub eval_every: u64,
    /// Goal settings of the held-out-domain target task.
    pub booking_prob: f64,
    pub max_requests: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub env: EnvConfig,
    pub corpus: CorpusConfig,
    pub vae: VaeConfig,
    pub gan: GanConfig,
    pub agent: AgentConfig,
    pub transfer: TransferSection,
}

impl ExperimentConfig {
    /// Built-in defaults of a profile.
    pub fn profile(profile: Profile) -> Self {
        let mut agent = AgentConfig {
            warmup_initial_fraction: 0.2,
            ..AgentConfig::default()
        };
        agent.dqn.sync_every = 250;
        agent.ppo.lr = 1e-3;
        agent.ppo.imitation_pairs = 5000;
        let mut cfg = Self {
            experiment: ExperimentSection {
                name: "desk".into(),
                profile,
                seed: 0,
                seeds: (0..8).collect(),
                reward: RewardKind::GanVae,
                out_dir: PathBuf::from("runs"),
                schema: String::new(),
            },
            env: EnvConfig::default(),
            corpus: CorpusConfig::default(),
            vae: VaeConfig {
                epochs: 10,
                ..VaeConfig::default()
            },
            gan: GanConfig::default(),
            agent,
            transfer: TransferSection {
                holdout: "hotel".into(),
                budget_frames: 20_000,
                eval_every: 2_000,
                booking_prob: 1.0,
                max_requests: 3,
            },
        };
        if profile == Profile::PaperShape {
            cfg.experiment.name = "paper_shape".into();
            cfg.env.state_dim = 392;
            cfg.corpus.catalog_size = 300;
            cfg.agent.budget_frames = 500_000;
            cfg.agent.eval_every = 50_000;
        }
        cfg
    }

    /// Parses TOML layered over the defaults of the profile it names.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e| HarnessError::Config(format!("{e}")))?;
        let profile = match user.get("experiment").and_then(|e| e.get("profile")) {
            Some(v) => Profile::deserialize(v.clone()).map_err(|e| HarnessError::Config(format!("profile: {e}")))?,
            None => Profile::Desk,
        };
        let mut base = toml::Table::try_from(Self::profile(profile)).map_err(|e| HarnessError::Config(e.to_string()))?;
        merge(&mut base, user);
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(HarnessError::Config(format!("config file {} not found", path.display())));
        }
        Self::from_toml(&std::fs::read_to_string(path).at(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.name.is_empty() {
            return Err(HarnessError::Config("experiment.name is empty".into()));
        }
        if e.seeds.is_empty() {
            return Err(HarnessError::Config("experiment.seeds is empty".into()));
        }
        let mut sorted = e.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != e.seeds.len() {
            return Err(HarnessError::Config("experiment.seeds has duplicates".into()));
        }
        let reg = self.registry()?;
        if reg.domain_id(&self.transfer.holdout).is_none() {
            return Err(HarnessError::Config(format!("unknown holdout domain {}", self.transfer.holdout)));
        }
        if self.transfer.eval_every == 0 {
            return Err(HarnessError::Config("transfer.eval_every must be positive".into()));
        }
        Ok(())
    }

    pub fn registry(&self) -> Result<SchemaRegistry> {
        if !self.experiment.schema.is_empty() {
            return Ok(SchemaRegistry::load(Path::new(&self.experiment.schema))?);
        }
        Ok(match self.experiment.profile {
            Profile::Desk => SchemaRegistry::desk(),
            Profile::PaperShape => SchemaRegistry::paper_shape(),
        })
    }

    pub fn env(&self) -> Result<DialogueEnv> {
        Ok(DialogueEnv::new(self.registry()?, self.env.clone())?)
    }

    /// Environment whose goals only involve the held-out domain.
    pub fn transfer_env(&self) -> Result<DialogueEnv> {
        let cfg = EnvConfig {
            goal_domains: vec![self.transfer.holdout.clone()],
            booking_prob: self.transfer.booking_prob,
            max_requests: self.transfer.max_requests,
            ..self.env.clone()
        };
        Ok(DialogueEnv::new(self.registry()?, cfg)?)
    }

    pub fn out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.experiment.out_dir.clone(),
        }
    }

    /// Digest of the canonical form (sorted keys, output directory
    /// excluded), so it is stable under key reordering.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(e) = v.get_mut("experiment").and_then(|e| e.as_object_mut()) {
            e.remove("out_dir");
        }
        digest(&v)
    }

    pub fn corpus_hash(&self) -> String {
        digest(&(
            self.experiment.profile,
            &self.experiment.schema,
            self.experiment.seed,
            &self.env,
            &self.corpus,
        ))
    }

    pub fn vae_hash(&self, variational: bool) -> String {
        let vae = VaeConfig {
            variational,
            ..self.vae.clone()
        };
        digest(&(self.corpus_hash(), vae))
    }

    pub fn reward_hash(&self, kind: RewardKind) -> String {
        digest(&(self.vae_hash(kind != RewardKind::GanAe), &self.gan, kind))
    }
}

/// Hex SHA-256 of the canonical JSON form. serde_json maps keep keys
/// sorted, so the digest does not depend on field or key order.
pub fn digest<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable");
    let text = serde_json::to_string(&v).expect("serializable");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for p in [Profile::Desk, Profile::PaperShape] {
            let cfg = ExperimentConfig::profile(p);
            let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn partial_files_layer_over_profile_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "[experiment]\nprofile = \"paper_shape\"\nseeds = [3]\n[agent]\nbudget_frames = 10\n[agent.dqn]\nhidden = 8\n",
        )
        .unwrap();
        assert_eq!(cfg.env.state_dim, 392);
        assert_eq!(cfg.experiment.seeds, vec![3]);
        assert_eq!(cfg.agent.budget_frames, 10);
        assert_eq!(cfg.agent.dqn.hidden, 8);
        assert_eq!(cfg.agent.dqn.sync_every, 250);
        assert_eq!(cfg.env().unwrap().state_dim(), 392);
    }

    #[test]
    fn hash_ignores_key_order_and_output_dir() {
        let a = ExperimentConfig::from_toml("[agent]\nbudget_frames = 7\neval_every = 3\n[experiment]\nseed = 4\n").unwrap();
        let b = ExperimentConfig::from_toml("[experiment]\nseed = 4\nout_dir = \"elsewhere\"\n[agent]\neval_every = 3\nbudget_frames = 7\n")
            .unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::from_toml("[experiment]\nseed = 5\n").unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn stage_hashes_only_follow_their_inputs() {
        let a = ExperimentConfig::profile(Profile::Desk);
        let mut b = a.clone();
        b.agent.budget_frames += 1;
        assert_eq!(a.reward_hash(RewardKind::GanVae), b.reward_hash(RewardKind::GanVae));
        b.gan.tau = 0.5;
        assert_eq!(a.vae_hash(true), b.vae_hash(true));
        assert_ne!(a.reward_hash(RewardKind::GanVae), b.reward_hash(RewardKind::GanVae));
        assert_ne!(a.reward_hash(RewardKind::GanVae), a.reward_hash(RewardKind::GanAe));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            "[experiment]\nseeds = []\n",
            "[experiment]\nseeds = [1, 1]\n",
            "[transfer]\nholdout = \"spa\"\n",
            "[agent]\nbogus = 1\n",
            "[experiment]\nprofile = \"huge\"\n",
            "not toml [",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(HarnessError::Config(_))), "{text}");
        }
    }
}
