//! Environment, episode rollout and evaluation.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{reject, Result};

use super::action::{ActionCatalog, CompositeAction};
use super::expert::expert_policy;
use super::goal::{GoalSampler, UserGoal};
use super::layout::{StateLayout, StateVector};
use super::reward::{handcrafted_reward, TurnStatus};
use super::schema::{DomainId, SchemaRegistry};
use super::tracker::{track_state, TrackerState};
use super::user::{UserAct, UserSimulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub t_max: u32,
    pub patience: u32,
    pub state_dim: usize,
    pub max_domains: usize,
    pub dontcare_prob: f64,
    pub booking_prob: f64,
    pub max_requests: usize,
    /// Domain names goals are drawn from; empty means every domain.
    pub goal_domains: Vec<String>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            t_max: 40,
            patience: 3,
            state_dim: 120,
            max_domains: 2,
            dontcare_prob: 0.15,
            booking_prob: 0.5,
            max_requests: 2,
            goal_domains: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DialogueEnv {
    reg: SchemaRegistry,
    layout: StateLayout,
    config: EnvConfig,
    sampler: GoalSampler,
    goal_pool: Vec<DomainId>,
}

impl DialogueEnv {
    pub fn new(reg: SchemaRegistry, config: EnvConfig) -> Result<Self> {
        if config.t_max == 0 {
            reject!("t_max must be positive");
        }
        if config.patience == 0 {
            reject!("patience must be positive");
        }
        let layout = StateLayout::new(&reg, config.state_dim)?;
        let goal_pool = config
            .goal_domains
            .iter()
            .map(|n| {
                reg.domain_id(n)
                    .ok_or_else(|| crate::Error::Config(format!("unknown goal domain {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let sampler = GoalSampler {
            max_domains: config.max_domains,
            dontcare_prob: config.dontcare_prob,
            booking_prob: config.booking_prob,
            max_requests: config.max_requests,
        };
        Ok(Self {
            reg,
            layout,
            config,
            sampler,
            goal_pool,
        })
    }

    pub fn desk() -> Self {
        Self::new(SchemaRegistry::desk(), EnvConfig::default()).expect("desk env is valid")
    }

    pub fn registry(&self) -> &SchemaRegistry {
        &self.reg
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn t_max(&self) -> u32 {
        self.config.t_max
    }

    pub fn sample_goal<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<UserGoal> {
        self.sampler.sample(rng, &self.reg, &self.goal_pool)
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Session<'_>> {
        let goal = self.sample_goal(rng)?;
        Ok(self.start(goal))
    }

    /// Starts a dialogue for a given goal.
    pub fn start(&self, goal: UserGoal) -> Session<'_> {
        let mut user = UserSimulator::new(goal, self.config.patience);
        let opening = user.start(&self.reg);
        let tracker = track_state(&TrackerState::initial(&self.reg), &opening, &self.reg);
        let state = self.layout.vectorize(&tracker, &self.reg);
        Session {
            env: self,
            user,
            tracker,
            state,
            turn: 0,
            status: TurnStatus::Ongoing,
        }
    }
}

/// Result of one system turn.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next_state: StateVector,
    pub status: TurnStatus,
    pub user_acts: Vec<UserAct>,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.status.is_terminal()
    }
}

/// One running dialogue.
#[derive(Debug, Clone)]
pub struct Session<'e> {
    env: &'e DialogueEnv,
    user: UserSimulator,
    tracker: TrackerState,
    state: StateVector,
    turn: u32,
    status: TurnStatus,
}

impl Session<'_> {
    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn tracker(&self) -> &TrackerState {
        &self.tracker
    }

    pub fn goal(&self) -> &UserGoal {
        self.user.goal()
    }

    /// System turns taken so far.
    pub fn turn(&self) -> u32 {
        self.turn
    }

    pub fn is_done(&self) -> bool {
        self.status.is_terminal()
    }

    pub fn status(&self) -> TurnStatus {
        self.status
    }

    pub fn observation(&self) -> Observation<'_> {
        Observation {
            state: &self.state,
            tracker: &self.tracker,
            reg: &self.env.reg,
            turn: self.turn,
        }
    }

    /// Plays one system action. Reaching `t_max` without success fails the
    /// dialogue. Stepping a finished session is rejected.
    pub fn step(&mut self, action: &CompositeAction) -> Result<StepOutcome> {
        if self.is_done() {
            reject!("session already finished");
        }
        let reg = &self.env.reg;
        let turn = self.user.step(reg, action);
        self.turn += 1;
        self.tracker = track_state(&self.tracker, &turn.acts, reg);
        self.state = self.env.layout.vectorize(&self.tracker, reg);
        self.status = if turn.done && turn.success {
            TurnStatus::Success
        } else if turn.done || self.turn >= self.env.config.t_max {
            TurnStatus::Failure
        } else {
            TurnStatus::Ongoing
        };
        Ok(StepOutcome {
            next_state: self.state.clone(),
            status: self.status,
            user_acts: turn.acts,
        })
    }
}

/// What a policy sees each turn. The tracker is exposed for scripted
/// policies; learned policies use `state` only.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub state: &'a StateVector,
    pub tracker: &'a TrackerState,
    pub reg: &'a SchemaRegistry,
    pub turn: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyAction {
    Index(usize),
    Raw(CompositeAction),
}

pub trait DialoguePolicy {
    fn act(&mut self, obs: &Observation<'_>, rng: &mut dyn RngCore) -> PolicyAction;
}

impl<F> DialoguePolicy for F
where
    F: FnMut(&Observation<'_>, &mut dyn RngCore) -> PolicyAction,
{
    fn act(&mut self, obs: &Observation<'_>, rng: &mut dyn RngCore) -> PolicyAction {
        self(obs, rng)
    }
}

/// The scripted expert as a policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpertPolicy;

impl DialoguePolicy for ExpertPolicy {
    fn act(&mut self, obs: &Observation<'_>, _rng: &mut dyn RngCore) -> PolicyAction {
        PolicyAction::Raw(expert_policy(obs.tracker, obs.reg))
    }
}

/// Uniformly random catalog index.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    pub num_actions: usize,
}

impl DialoguePolicy for RandomPolicy {
    fn act(&mut self, _obs: &Observation<'_>, rng: &mut dyn RngCore) -> PolicyAction {
        PolicyAction::Index(rng.random_range(0..self.num_actions))
    }
}

/// Always the same catalog index.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub usize);

impl DialoguePolicy for ConstantPolicy {
    fn act(&mut self, _obs: &Observation<'_>, _rng: &mut dyn RngCore) -> PolicyAction {
        PolicyAction::Index(self.0)
    }
}

/// Per-turn reward provider.
pub trait RewardSource {
    fn reward(
        &self,
        state: &StateVector,
        action: &CompositeAction,
        index: Option<usize>,
        status: TurnStatus,
        t: u32,
    ) -> f64;
}

/// The handcrafted −1 / 2T / −T reward.
#[derive(Debug, Clone, Copy, Default)]
pub struct Handcrafted;

impl RewardSource for Handcrafted {
    fn reward(&self, _: &StateVector, _: &CompositeAction, _: Option<usize>, status: TurnStatus, t: u32) -> f64 {
        handcrafted_reward(status, t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub state: StateVector,
    pub action: CompositeAction,
    /// Catalog index when the action came from (or was mapped into) a catalog.
    pub index: Option<usize>,
    pub reward: f64,
    pub next_state: StateVector,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub goal: UserGoal,
    pub turns: Vec<Turn>,
    pub success: bool,
}

impl EpisodeLog {
    pub fn num_turns(&self) -> usize {
        self.turns.len()
    }

    pub fn total_reward(&self) -> f64 {
        self.turns.iter().map(|t| t.reward).sum()
    }
}

/// Resolves a policy decision into a concrete action.
pub fn resolve_action(
    decision: PolicyAction,
    catalog: Option<&ActionCatalog>,
) -> Result<(CompositeAction, Option<usize>)> {
    match decision {
        PolicyAction::Raw(a) => {
            let index = catalog.and_then(|c| c.index_of(&a));
            Ok((a, index))
        }
        PolicyAction::Index(i) => {
            let Some(c) = catalog else {
                reject!("policy returned an index but no catalog is configured");
            };
            match c.get(i) {
                Some(a) => Ok((a.clone(), Some(i))),
                None => reject!("action index {i} outside catalog of {}", c.len()),
            }
        }
    }
}

/// Plays one dialogue to termination.
pub fn run_episode<R: RngCore>(
    env: &DialogueEnv,
    policy: &mut dyn DialoguePolicy,
    catalog: Option<&ActionCatalog>,
    reward: &dyn RewardSource,
    rng: &mut R,
) -> Result<EpisodeLog> {
    let mut session = env.reset(rng)?;
    let goal = session.goal().clone();
    let mut turns = Vec::new();
    while !session.is_done() {
        let decision = policy.act(&session.observation(), rng);
        let (action, index) = resolve_action(decision, catalog)?;
        let state = session.state().clone();
        let out = session.step(&action)?;
        let r = reward.reward(&state, &action, index, out.status, env.t_max());
        turns.push(Turn {
            state,
            action,
            index,
            reward: r,
            done: out.done(),
            next_state: out.next_state,
        });
    }
    Ok(EpisodeLog {
        goal,
        success: session.status == TurnStatus::Success,
        turns,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub success_rate: f64,
    pub average_turn: f64,
}

/// Success rate and mean dialogue length over `n` episodes.
pub fn evaluate<R: RngCore>(
    env: &DialogueEnv,
    policy: &mut dyn DialoguePolicy,
    catalog: Option<&ActionCatalog>,
    n: usize,
    rng: &mut R,
) -> Result<EvalResult> {
    if n == 0 {
        reject!("evaluation needs at least one episode");
    }
    let mut successes = 0usize;
    let mut turns = 0usize;
    for _ in 0..n {
        let log = run_episode(env, policy, catalog, &Handcrafted, rng)?;
        successes += log.success as usize;
        turns += log.num_turns();
    }
    Ok(EvalResult {
        success_rate: successes as f64 / n as f64,
        average_turn: turns as f64 / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialenv::action::{AtomicAct, SysActType};
    use crate::dialenv::schema::NONE_SLOT;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noop_catalog() -> ActionCatalog {
        ActionCatalog::new(vec![CompositeAction::single(AtomicAct::new(0, SysActType::NoOffer, NONE_SLOT))]).unwrap()
    }

    #[test]
    fn expert_succeeds_on_every_goal() {
        let env = DialogueEnv::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = evaluate(&env, &mut ExpertPolicy, None, 1000, &mut rng).unwrap();
        assert_eq!(r.success_rate, 1.0);
        assert!(r.average_turn <= 12.0, "{}", r.average_turn);
    }

    #[test]
    fn expert_answers_pending_phone_request() {
        let env = DialogueEnv::desk();
        let reg = env.registry();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut s = env.reset(&mut rng).unwrap();
            while !s.is_done() {
                let t = s.tracker();
                let a = expert_policy(t, reg);
                if t.missing_slots(reg).is_empty() {
                    let d = t.active.unwrap();
                    for p in t.pending_requests(reg) {
                        assert!(a.acts().contains(&AtomicAct::new(d, SysActType::Inform, p)));
                    }
                }
                s.step(&a).unwrap();
            }
        }
    }

    #[test]
    fn constant_noop_never_succeeds_and_fails_with_penalty() {
        let env = DialogueEnv::desk();
        let cat = noop_catalog();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = evaluate(&env, &mut ConstantPolicy(0), Some(&cat), 100, &mut rng).unwrap();
        assert_eq!(r.success_rate, 0.0);
        let log = run_episode(&env, &mut ConstantPolicy(0), Some(&cat), &Handcrafted, &mut rng).unwrap();
        assert_eq!(log.turns.last().unwrap().reward, -40.0);
        assert_eq!(log.turns.iter().filter(|t| t.done).count(), 1);
    }

    #[test]
    fn t_max_cutoff_fails() {
        let env = DialogueEnv::new(
            SchemaRegistry::desk(),
            EnvConfig {
                patience: 1000,
                ..EnvConfig::default()
            },
        )
        .unwrap();
        let cat = noop_catalog();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let log = run_episode(&env, &mut ConstantPolicy(0), Some(&cat), &Handcrafted, &mut rng).unwrap();
        assert_eq!(log.num_turns(), 40);
        assert!(!log.success);
        assert_eq!(log.total_reward(), -40.0 - 39.0);
    }

    #[test]
    fn success_return_identity() {
        let env = DialogueEnv::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let log = run_episode(&env, &mut ExpertPolicy, None, &Handcrafted, &mut rng).unwrap();
            let t = log.num_turns() as f64;
            assert!(log.success);
            assert_eq!(log.total_reward(), 80.0 - (t - 1.0));
        }
    }

    #[test]
    fn seeded_episodes_are_identical() {
        let env = DialogueEnv::desk();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = RandomPolicy { num_actions: 1 };
            let cat = noop_catalog();
            (0..20)
                .map(|_| run_episode(&env, &mut p, Some(&cat), &Handcrafted, &mut rng).unwrap())
                .chain((0..20).map(|_| {
                    run_episode(&env, &mut ExpertPolicy, None, &Handcrafted, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
                }))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(1));
    }

    #[test]
    fn informed_slots_never_disappear() {
        let env = DialogueEnv::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let mut s = env.reset(&mut rng).unwrap();
            while !s.is_done() {
                let before = s.tracker().clone();
                let a = crate::dialenv::expert::noisy_expert(s.tracker(), env.registry(), 0.5, &mut rng);
                s.step(&a).unwrap();
                for (old, new) in before.informed.iter().flatten().zip(s.tracker().informed.iter().flatten()) {
                    assert!(old.is_none() || new.is_some());
                }
                for (old, new) in before.requested.iter().flatten().zip(s.tracker().requested.iter().flatten()) {
                    assert!(!old || *new);
                }
            }
        }
    }

    #[test]
    fn stepping_a_finished_session_is_rejected() {
        let env = DialogueEnv::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = env.reset(&mut rng).unwrap();
        let noop = CompositeAction::single(AtomicAct::new(0, SysActType::NoOffer, NONE_SLOT));
        while !s.is_done() {
            s.step(&noop).unwrap();
        }
        assert!(s.step(&noop).is_err());
        assert!(evaluate(&env, &mut ExpertPolicy, None, 0, &mut rng).is_err());
    }
}
