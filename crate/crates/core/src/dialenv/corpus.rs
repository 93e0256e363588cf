//! Expert dialogue corpus: generation, catalog construction and the
//! line-oriented text format.
//!
//! ```text
//! # dialpolicy-corpus v1 layout=<layout id> state_dim=<n> catalog=<fingerprint> actions=<k> episodes=<m>
//! # action <index> <label>                     (k lines, catalog order)
//! <episode> <turn> <state hex> <action index> <next hex> <done> <success> <goal domains> <raw label>
//! ```
//!
//! Fields are tab separated; `done` and `success` are `0`/`1`; goal domains
//! are comma separated names.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::action::{ActionCatalog, CompositeAction};
use super::episode::{DialogueEnv, EpisodeLog};
use super::expert::noisy_expert;
use super::layout::StateVector;
use super::reward::TurnStatus;
use super::schema::{DomainId, SchemaRegistry};

const MAGIC: &str = "# dialpolicy-corpus v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub episodes: usize,
    pub noise: f64,
    pub catalog_size: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            episodes: 8000,
            noise: 0.1,
            catalog_size: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusTurn {
    pub state: StateVector,
    /// The action the expert actually played.
    pub action: CompositeAction,
    /// Catalog entry for `action` (nearest entry when not cataloged).
    pub index: usize,
    pub next_state: StateVector,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEpisode {
    pub goal_domains: Vec<DomainId>,
    pub success: bool,
    pub turns: Vec<CorpusTurn>,
}

impl CorpusEpisode {
    /// Domains named by the goal or by any played atomic act.
    pub fn touched_domains(&self) -> HashSet<DomainId> {
        let mut out: HashSet<DomainId> = self.goal_domains.iter().copied().collect();
        for t in &self.turns {
            out.extend(t.action.domains());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub layout_id: String,
    pub state_dim: usize,
    pub catalog: ActionCatalog,
    pub episodes: Vec<CorpusEpisode>,
}

/// Catalog of the `size` most frequent actions across `logs`.
pub fn build_action_catalog(
    logs: &[EpisodeLog],
    size: usize,
    reg: &SchemaRegistry,
) -> Result<(ActionCatalog, bool)> {
    ActionCatalog::from_frequencies(logs.iter().flat_map(|l| l.turns.iter().map(|t| &t.action)), size, reg)
}

/// Plays `cfg.episodes` noisy expert dialogues, builds the catalog from
/// them and maps every turn to its catalog index.
pub fn generate_corpus<R: Rng + ?Sized>(env: &DialogueEnv, cfg: &CorpusConfig, rng: &mut R) -> Result<Corpus> {
    if cfg.episodes == 0 {
        return Err(Error::Config("corpus needs at least one episode".into()));
    }
    let reg = env.registry();
    let mut logs = Vec::with_capacity(cfg.episodes);
    for _ in 0..cfg.episodes {
        let mut session = env.reset(rng)?;
        let goal = session.goal().clone();
        let mut turns = Vec::new();
        while !session.is_done() {
            let action = noisy_expert(session.tracker(), reg, cfg.noise, rng);
            let state = session.state().clone();
            let out = session.step(&action)?;
            turns.push(super::episode::Turn {
                state,
                action,
                index: None,
                reward: 0.0,
                done: out.done(),
                next_state: out.next_state,
            });
        }
        let success = session.status() == TurnStatus::Success;
        logs.push(EpisodeLog { goal, turns, success });
    }
    let (catalog, _) = build_action_catalog(&logs, cfg.catalog_size, reg)?;
    let episodes = logs
        .into_iter()
        .map(|log| CorpusEpisode {
            goal_domains: log.goal.domain_ids().collect(),
            success: log.success,
            turns: log
                .turns
                .into_iter()
                .map(|t| CorpusTurn {
                    index: catalog.nearest(&t.action),
                    state: t.state,
                    action: t.action,
                    next_state: t.next_state,
                    done: t.done,
                })
                .collect(),
        })
        .collect();
    Ok(Corpus {
        layout_id: env.layout().version_id(),
        state_dim: env.state_dim(),
        catalog,
        episodes,
    })
}

impl Corpus {
    pub fn num_turns(&self) -> usize {
        self.episodes.iter().map(|e| e.turns.len()).sum()
    }

    pub fn turns(&self) -> impl Iterator<Item = &CorpusTurn> {
        self.episodes.iter().flat_map(|e| e.turns.iter())
    }

    /// Every visited state, in corpus order.
    pub fn states(&self) -> Vec<StateVector> {
        self.turns().map(|t| t.state.clone()).collect()
    }

    /// `(state, catalog index)` pairs, in corpus order.
    pub fn pairs(&self) -> Vec<(StateVector, usize)> {
        self.turns().map(|t| (t.state.clone(), t.index)).collect()
    }

    pub fn success_rate(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().filter(|e| e.success).count() as f64 / self.episodes.len() as f64
    }

    /// Checks the corpus was recorded under `env`'s state layout.
    pub fn check_layout(&self, env: &DialogueEnv) -> Result<()> {
        let expected = env.layout().version_id();
        if self.layout_id != expected || self.state_dim != env.state_dim() {
            return Err(Error::Config(format!(
                "corpus layout {} does not match environment layout {expected}",
                self.layout_id
            )));
        }
        Ok(())
    }

    pub fn to_text(&self, reg: &SchemaRegistry) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{MAGIC} layout={} state_dim={} catalog={} actions={} episodes={}",
            self.layout_id,
            self.state_dim,
            self.catalog.fingerprint(reg),
            self.catalog.len(),
            self.episodes.len()
        );
        for (i, a) in self.catalog.actions().iter().enumerate() {
            let _ = writeln!(out, "# action\t{i}\t{}", a.label(reg));
        }
        for (e, ep) in self.episodes.iter().enumerate() {
            let domains: Vec<&str> = ep.goal_domains.iter().map(|&d| reg.domain(d).name.as_str()).collect();
            let domains = domains.join(",");
            for (k, t) in ep.turns.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{e}\t{k}\t{}\t{}\t{}\t{}\t{}\t{domains}\t{}",
                    t.state.to_hex(),
                    t.index,
                    t.next_state.to_hex(),
                    t.done as u8,
                    ep.success as u8,
                    t.action.label(reg)
                );
            }
        }
        out
    }

    pub fn from_text(text: &str, reg: &SchemaRegistry) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Schema(format!("corpus line {}: {msg}", line + 1));
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(0, "empty file"))?;
        let rest = header.strip_prefix(MAGIC).ok_or_else(|| bad(0, "missing corpus header"))?;
        let field = |key: &str| -> Result<String> {
            rest.split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                .map(str::to_string)
                .ok_or_else(|| bad(0, &format!("header lacks {key}")))
        };
        let layout_id = field("layout")?;
        let state_dim: usize = field("state_dim")?.parse().map_err(|_| bad(0, "bad state_dim"))?;
        let fingerprint = field("catalog")?;
        let num_episodes: usize = field("episodes")?.parse().map_err(|_| bad(0, "bad episode count"))?;

        let mut actions = Vec::new();
        let mut episodes: Vec<CorpusEpisode> = Vec::new();
        for (n, line) in lines {
            if let Some(a) = line.strip_prefix("# action\t") {
                let (idx, label) = a.split_once('\t').ok_or_else(|| bad(n, "bad action line"))?;
                if idx.parse::<usize>().ok() != Some(actions.len()) {
                    return Err(bad(n, "catalog entries out of order"));
                }
                actions.push(CompositeAction::parse(label, reg)?);
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 9 {
                return Err(bad(n, "expected 9 fields"));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(n, "bad integer"));
            let flag = |s: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(bad(n, "bad flag")),
            };
            let (e, k) = (num(f[0])?, num(f[1])?);
            if e == episodes.len() {
                let goal_domains = f[7]
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| reg.domain_id(s).ok_or_else(|| bad(n, "unknown domain")))
                    .collect::<Result<Vec<_>>>()?;
                episodes.push(CorpusEpisode {
                    goal_domains,
                    success: flag(f[6])?,
                    turns: Vec::new(),
                });
            } else if e + 1 != episodes.len() {
                return Err(bad(n, "episodes out of order"));
            }
            let ep = episodes.last_mut().expect("pushed above");
            if k != ep.turns.len() {
                return Err(bad(n, "turns out of order"));
            }
            ep.turns.push(CorpusTurn {
                state: StateVector::from_hex(f[2], state_dim)?,
                index: num(f[3])?,
                next_state: StateVector::from_hex(f[4], state_dim)?,
                done: flag(f[5])?,
                action: CompositeAction::parse(f[8], reg)?,
            });
        }
        let catalog = ActionCatalog::new(actions)?;
        if catalog.fingerprint(reg) != fingerprint {
            return Err(Error::Schema("corpus catalog fingerprint mismatch".into()));
        }
        if episodes.len() != num_episodes {
            return Err(Error::Schema(format!(
                "corpus header promises {num_episodes} episodes, found {}",
                episodes.len()
            )));
        }
        if episodes.iter().flat_map(|e| &e.turns).any(|t| t.index >= catalog.len()) {
            return Err(Error::Schema("action index outside catalog".into()));
        }
        Ok(Self {
            layout_id,
            state_dim,
            catalog,
            episodes,
        })
    }

    pub fn save(&self, path: &Path, reg: &SchemaRegistry) -> Result<()> {
        std::fs::write(path, self.to_text(reg))?;
        Ok(())
    }

    pub fn load(path: &Path, reg: &SchemaRegistry) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, reg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialenv::episode::{evaluate, DialoguePolicy, Observation, PolicyAction};
    use crate::dialenv::expert::expert_policy;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn small() -> (DialogueEnv, Corpus) {
        let env = DialogueEnv::desk();
        let cfg = CorpusConfig {
            episodes: 400,
            ..CorpusConfig::default()
        };
        let c = generate_corpus(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (env, c)
    }

    #[test]
    fn catalog_order_matches_brute_force_count() {
        let (env, c) = small();
        let reg = env.registry();
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in c.turns() {
            *counts.entry(t.action.label(reg)).or_default() += 1;
        }
        let mut expected: Vec<(usize, String)> = counts.into_iter().map(|(l, n)| (n, l)).collect();
        expected.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let got: Vec<String> = c.catalog.actions().iter().map(|a| a.label(reg)).collect();
        let want: Vec<String> = expected.into_iter().take(60).map(|(_, l)| l).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn catalog_does_not_depend_on_episode_order() {
        let (env, c) = small();
        let reg = env.registry();
        let mut actions: Vec<&CompositeAction> = c.turns().map(|t| &t.action).collect();
        let (a, _) = ActionCatalog::from_frequencies(actions.iter().copied(), 60, reg).unwrap();
        actions.reverse();
        let (b, _) = ActionCatalog::from_frequencies(actions.iter().copied(), 60, reg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn text_round_trip_and_determinism() {
        let (env, c) = small();
        let reg = env.registry();
        let text = c.to_text(reg);
        let back = Corpus::from_text(&text, reg).unwrap();
        assert_eq!(back, c);
        back.check_layout(&env).unwrap();
        let again = generate_corpus(
            &env,
            &CorpusConfig {
                episodes: 400,
                ..CorpusConfig::default()
            },
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(again.to_text(reg), text);
        assert!(Corpus::from_text(&text.replacen("state_dim=120", "state_dim=121", 1), reg).is_err());
        assert!(Corpus::from_text("garbage", reg).is_err());
    }

    #[test]
    fn noisy_corpus_still_mostly_succeeds() {
        let (_, c) = small();
        assert!(c.success_rate() > 0.8, "{}", c.success_rate());
        for e in &c.episodes {
            assert_eq!(e.turns.iter().filter(|t| t.done).count(), 1);
            assert!(e.turns.last().unwrap().done);
        }
    }

    struct CatalogExpert<'a>(&'a ActionCatalog);

    impl DialoguePolicy for CatalogExpert<'_> {
        fn act(&mut self, obs: &Observation<'_>, _: &mut dyn RngCore) -> PolicyAction {
            PolicyAction::Index(self.0.nearest(&expert_policy(obs.tracker, obs.reg)))
        }
    }

    #[test]
    fn catalog_covers_the_expert() {
        let env = DialogueEnv::desk();
        let c = generate_corpus(&env, &CorpusConfig::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let r = evaluate(&env, &mut CatalogExpert(&c.catalog), Some(&c.catalog), 500, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        assert!(r.success_rate >= 0.9, "{r:?}");
    }
}
