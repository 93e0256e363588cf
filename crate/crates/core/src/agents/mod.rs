//! Dialogue agents trained against a handcrafted or learned reward: DQN,
//! WDQN (expert-seeded replay, removal or keep schedule) and PPO with an
//! imitation warm-up.

pub mod dqn;
pub mod ppo;
pub mod replay;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use dqn::{dqn_select, dqn_update, greedy, q_spec, q_values, td_loss_and_grad, td_targets, DqnConfig, QNet};
pub use ppo::{
    gae, imitation_loss_and_grad, imitation_warmup, ppo_loss_and_grad, ppo_objective, ppo_update, PolicyValueParams,
    PpoBatch, PpoConfig, PpoLosses, RewardScaler,
};
pub use replay::{expert_transitions, wdqn_seed, ReplayBuffer, Transition, WarmupMode, WarmupSchedule};

use crate::dialenv::{
    run_episode, ActionCatalog, CompositeAction, Corpus, DialogueEnv, DialoguePolicy, Handcrafted, Observation,
    PolicyAction, RewardSource, Session, StateVector, TurnStatus,
};
use crate::diffcore::{CheckpointReader, CheckpointWriter, NetParams, OptState, Optimizer};
use crate::error::{reject, Error, Result};
use crate::rewardgan::RewardModel;
use crate::statevae::state_matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Dqn,
    Wdqn,
    WdqnKeep,
    Ppo,
}

impl Algo {
    pub const ALL: [Algo; 4] = [Algo::Dqn, Algo::Wdqn, Algo::WdqnKeep, Algo::Ppo];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Dqn => "dqn",
            Algo::Wdqn => "wdqn",
            Algo::WdqnKeep => "wdqn_keep",
            Algo::Ppo => "ppo",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Human,
    GanVae,
    GanAe,
}

impl RewardKind {
    pub const ALL: [RewardKind; 3] = [RewardKind::Human, RewardKind::GanVae, RewardKind::GanAe];

    pub fn name(self) -> &'static str {
        match self {
            RewardKind::Human => "human",
            RewardKind::GanVae => "gan_vae",
            RewardKind::GanAe => "gan_ae",
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RewardKind::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown reward source {s:?}")))
    }
}

/// The reward an agent is trained on.
#[derive(Debug, Clone, Copy)]
pub enum AgentReward<'a> {
    Human,
    Learned(&'a RewardModel),
}

impl RewardSource for AgentReward<'_> {
    fn reward(&self, state: &StateVector, action: &CompositeAction, index: Option<usize>, status: TurnStatus, t: u32) -> f64 {
        match self {
            AgentReward::Human => Handcrafted.reward(state, action, index, status, t),
            AgentReward::Learned(m) => m.reward(state, action, index, status, t),
        }
    }
}

/// Per-turn clamped `log D` only, for monitoring.
#[derive(Debug, Clone, Copy)]
pub struct LogDMonitor<'a>(pub &'a RewardModel);

impl RewardSource for LogDMonitor<'_> {
    fn reward(&self, state: &StateVector, action: &CompositeAction, index: Option<usize>, _: TurnStatus, _: u32) -> f64 {
        self.0.log_d(state, action, index).unwrap_or(crate::rewardgan::LOG_D_FLOOR)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub algo: Algo,
    /// Environment turns of training.
    pub budget_frames: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Episodes used to score the retained best checkpoint.
    pub final_eval_episodes: usize,
    /// Share of the expert corpus loaded into the WDQN buffer.
    pub warmup_initial_fraction: f64,
    /// Share of the budget over which WDQN removal decays to zero.
    pub warmup_removal_frac: f64,
    pub dqn: DqnConfig,
    pub ppo: PpoConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Dqn,
            budget_frames: 100_000,
            eval_every: 10_000,
            eval_episodes: 200,
            final_eval_episodes: 500,
            warmup_initial_fraction: 1.0,
            warmup_removal_frac: 0.25,
            dqn: DqnConfig::default(),
            ppo: PpoConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn warmup_schedule(&self) -> Option<WarmupSchedule> {
        let mode = match self.algo {
            Algo::Wdqn => WarmupMode::Removal,
            Algo::WdqnKeep => WarmupMode::Keep,
            _ => return None,
        };
        Some(WarmupSchedule {
            mode,
            initial_fraction: self.warmup_initial_fraction,
            horizon_frames: (self.warmup_removal_frac * self.budget_frames as f64).round() as u64,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.eval_every == 0 || self.eval_episodes == 0 || self.final_eval_episodes == 0 {
            return Err(Error::Config("evaluation interval and episode counts must be positive".into()));
        }
        if self.dqn.batch_size == 0 || self.dqn.sync_every == 0 || self.dqn.train_every == 0 {
            return Err(Error::Config("DQN batch size, sync and train intervals must be positive".into()));
        }
        if self.ppo.rollout_steps == 0 || self.ppo.epochs == 0 {
            return Err(Error::Config("PPO rollout length and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// One evaluation of a greedy policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub frames: u64,
    pub success_rate: f64,
    pub average_turn: f64,
    /// Mean per-turn `log D` under the monitoring reward model, if any.
    pub mean_learned_reward: Option<f64>,
}

/// Trained network of either algorithm family.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentPolicy {
    Q(NetParams),
    PolicyValue(PolicyValueParams),
}

const POLICY_MAGIC: &[u8; 4] = b"DAGT";
const POLICY_VERSION: u32 = 1;

impl AgentPolicy {
    pub fn state_dim(&self) -> usize {
        self.decision_net().spec().input_dim()
    }

    pub fn num_actions(&self) -> usize {
        self.decision_net().spec().output_dim()
    }

    fn decision_net(&self) -> &NetParams {
        match self {
            AgentPolicy::Q(q) => q,
            AgentPolicy::PolicyValue(pv) => &pv.policy,
        }
    }

    /// Highest-scoring catalog index (Q value or policy logit).
    pub fn greedy(&self, s: &StateVector) -> Result<usize> {
        let out = self.decision_net().predict(&state_matrix(std::slice::from_ref(s)))?;
        Ok(greedy(out.row(0).as_slice().expect("contiguous")))
    }

    /// Checkpoint tagged with the catalog fingerprint the indices refer to.
    pub fn write<W: Write>(&self, w: W, catalog_fingerprint: &str) -> Result<()> {
        let mut w = CheckpointWriter::new(w);
        w.magic(POLICY_MAGIC)?;
        w.u32(POLICY_VERSION)?;
        w.str(catalog_fingerprint)?;
        match self {
            AgentPolicy::Q(q) => {
                w.u8(0)?;
                w.net(q)
            }
            AgentPolicy::PolicyValue(pv) => {
                w.u8(1)?;
                w.net(&pv.policy)?;
                w.net(&pv.value)
            }
        }
    }

    /// Returns the policy and its catalog fingerprint.
    pub fn read<R: Read>(r: R) -> Result<(Self, String)> {
        let mut r = CheckpointReader::new(r);
        r.expect_magic(POLICY_MAGIC)?;
        let v = r.u32()?;
        if v != POLICY_VERSION {
            return Err(Error::Checkpoint(format!("unsupported policy checkpoint version {v}")));
        }
        let fp = r.str()?;
        let p = match r.u8()? {
            0 => AgentPolicy::Q(r.net()?),
            1 => AgentPolicy::PolicyValue(PolicyValueParams {
                policy: r.net()?,
                value: r.net()?,
            }),
            k => return Err(Error::Checkpoint(format!("unknown policy kind {k}"))),
        };
        Ok((p, fp))
    }
}

/// Greedy catalog policy for rollouts.
pub struct GreedyPolicy<'a>(pub &'a AgentPolicy);

impl DialoguePolicy for GreedyPolicy<'_> {
    fn act(&mut self, obs: &Observation<'_>, _: &mut dyn RngCore) -> PolicyAction {
        PolicyAction::Index(self.0.greedy(obs.state).expect("policy width checked against the environment"))
    }
}

/// Success rate, mean length and (optionally) mean per-turn `log D` of a
/// policy over `n` episodes.
pub fn evaluate_policy<R: RngCore>(
    env: &DialogueEnv,
    policy: &mut dyn DialoguePolicy,
    catalog: &ActionCatalog,
    n: usize,
    monitor: Option<&RewardModel>,
    rng: &mut R,
) -> Result<CurvePoint> {
    if n == 0 {
        reject!("evaluation needs at least one episode");
    }
    let (mut successes, mut turns, mut reward) = (0usize, 0usize, 0.0);
    for _ in 0..n {
        let log = match monitor {
            Some(m) => run_episode(env, policy, Some(catalog), &LogDMonitor(m), rng)?,
            None => run_episode(env, policy, Some(catalog), &Handcrafted, rng)?,
        };
        successes += log.success as usize;
        turns += log.num_turns();
        reward += log.total_reward();
    }
    Ok(CurvePoint {
        frames: 0,
        success_rate: successes as f64 / n as f64,
        average_turn: turns as f64 / n as f64,
        mean_learned_reward: monitor.map(|_| if turns == 0 { 0.0 } else { reward / turns as f64 }),
    })
}

/// Everything an agent trains against.
#[derive(Clone, Copy)]
pub struct TrainContext<'a> {
    pub env: &'a DialogueEnv,
    pub catalog: &'a ActionCatalog,
    pub reward: AgentReward<'a>,
    /// Expert corpus for WDQN seeding and the PPO warm-up.
    pub corpus: Option<&'a Corpus>,
    /// Reward model used only to report mean `log D` on the curve.
    pub monitor: Option<&'a RewardModel>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the best periodic evaluation.
    pub best_policy: AgentPolicy,
    pub final_policy: AgentPolicy,
    pub curve: Vec<CurvePoint>,
    pub best_point: CurvePoint,
    /// Fresh evaluation of `best_policy`.
    pub final_eval: CurvePoint,
    /// Training accuracy of the imitation warm-up (PPO only).
    pub imitation_accuracy: Option<f64>,
    pub expert_seeded: usize,
}

struct Tracker<'a> {
    ctx: &'a TrainContext<'a>,
    cfg: &'a AgentConfig,
    eval_seed: u64,
    curve: Vec<CurvePoint>,
    best: Option<(CurvePoint, AgentPolicy)>,
}

impl Tracker<'_> {
    fn evaluate(&mut self, frames: u64, policy: AgentPolicy) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.eval_seed);
        let mut p = GreedyPolicy(&policy);
        let mut point =
            evaluate_policy(self.ctx.env, &mut p, self.ctx.catalog, self.cfg.eval_episodes, self.ctx.monitor, &mut rng)?;
        point.frames = frames;
        log::debug!(
            "{} frames {frames}: success {:.3} turns {:.2}",
            self.cfg.algo,
            point.success_rate,
            point.average_turn
        );
        self.curve.push(point);
        if self.best.as_ref().is_none_or(|(b, _)| point.success_rate > b.success_rate) {
            self.best = Some((point, policy));
        }
        Ok(())
    }

    fn due(&self, frames: u64) -> bool {
        frames % self.cfg.eval_every == 0 || frames == self.cfg.budget_frames
    }

    fn finish(self, final_policy: AgentPolicy, imitation_accuracy: Option<f64>, expert_seeded: usize) -> Result<TrainOutcome> {
        let (best_point, best_policy) = self.best.expect("baseline evaluation always runs");
        let mut rng = ChaCha8Rng::seed_from_u64(self.eval_seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut p = GreedyPolicy(&best_policy);
        let mut final_eval = evaluate_policy(
            self.ctx.env,
            &mut p,
            self.ctx.catalog,
            self.cfg.final_eval_episodes,
            self.ctx.monitor,
            &mut rng,
        )?;
        final_eval.frames = best_point.frames;
        Ok(TrainOutcome {
            best_policy,
            final_policy,
            curve: self.curve,
            best_point,
            final_eval,
            imitation_accuracy,
            expert_seeded,
        })
    }
}

fn check_context(ctx: &TrainContext<'_>, cfg: &AgentConfig) -> Result<()> {
    let env = ctx.env;
    if ctx.catalog.is_empty() {
        return Err(Error::Config("empty action catalog".into()));
    }
    if let AgentReward::Learned(m) = ctx.reward {
        m.check_compatible(ctx.catalog, env.registry(), env.state_dim(), env.t_max())?;
    }
    if let Some(m) = ctx.monitor {
        m.check_compatible(ctx.catalog, env.registry(), env.state_dim(), env.t_max())?;
    }
    let needs_corpus = matches!(cfg.algo, Algo::Wdqn | Algo::WdqnKeep | Algo::Ppo);
    match ctx.corpus {
        None if needs_corpus => Err(Error::Config(format!("{} needs an expert corpus", cfg.algo))),
        Some(c) if needs_corpus => {
            c.check_layout(env)?;
            let reg = env.registry();
            if c.catalog.fingerprint(reg) != ctx.catalog.fingerprint(reg) {
                return Err(Error::Config("expert corpus uses a different action catalog".into()));
            }
            if c.num_turns() == 0 {
                return Err(Error::Config("expert corpus is empty".into()));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Trains one agent for `cfg.budget_frames` environment turns, evaluating
/// the greedy policy every `cfg.eval_every` frames and keeping the best.
pub fn train_agent<R: Rng + ?Sized>(ctx: &TrainContext<'_>, cfg: &AgentConfig, rng: &mut R) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_context(ctx, cfg)?;
    let tracker = Tracker {
        ctx,
        cfg,
        eval_seed: rng.random(),
        curve: Vec::new(),
        best: None,
    };
    match cfg.algo {
        Algo::Ppo => train_ppo(ctx, cfg, tracker, rng),
        _ => train_dqn(ctx, cfg, tracker, rng),
    }
}

fn train_dqn<R: Rng + ?Sized>(ctx: &TrainContext<'_>, cfg: &AgentConfig, mut tracker: Tracker<'_>, rng: &mut R) -> Result<TrainOutcome> {
    let env = ctx.env;
    let d = &cfg.dqn;
    let t_max = env.t_max();
    let mut q = QNet::init(env.state_dim(), d.hidden, ctx.catalog.len(), rng)?;
    let mut opt = OptState::for_params(Optimizer::adam(d.lr), &q.online);
    let mut buffer = ReplayBuffer::new(d.buffer_capacity)?;
    let schedule = cfg.warmup_schedule();
    let mut expert_turns = 0;
    let mut seeded = 0;
    if let (Some(s), Some(corpus)) = (&schedule, ctx.corpus) {
        let expert = expert_transitions(corpus, &ctx.reward, t_max);
        expert_turns = expert.len();
        seeded = wdqn_seed(&mut buffer, expert, s, rng)?;
    }
    let learning_starts = if seeded > 0 { 0 } else { d.learning_starts };

    tracker.evaluate(0, AgentPolicy::Q(q.online.clone()))?;
    let mut frames = 0u64;
    let mut session = None;
    while frames < cfg.budget_frames {
        if session.as_ref().is_none_or(|s: &Session<'_>| s.is_done()) {
            session = Some(env.reset(rng)?);
        }
        let sess = session.as_mut().expect("session just ensured");
        let state = sess.state().clone();
        let a = dqn_select(&q.online, &state, d.epsilon(frames, cfg.budget_frames), rng)?;
        let action = &ctx.catalog.actions()[a];
        let out = sess.step(action)?;
        let reward = ctx.reward.reward(&state, action, Some(a), out.status, t_max);
        let done = out.done();
        buffer.push(Transition {
            state,
            action: a,
            reward,
            next_state: out.next_state,
            done,
        });
        frames += 1;
        if let Some(s) = &schedule {
            buffer.evict_expert_to(s.target_count(frames, expert_turns), rng);
        }
        if frames >= learning_starts && frames % d.train_every == 0 && buffer.len() >= d.batch_size {
            let batch = buffer.sample(d.batch_size, rng);
            dqn_update(&mut q, &mut opt, &batch, d.gamma, d.grad_clip)?;
        }
        if frames % d.sync_every == 0 {
            q.sync();
        }
        if tracker.due(frames) {
            tracker.evaluate(frames, AgentPolicy::Q(q.online.clone()))?;
        }
    }
    tracker.finish(AgentPolicy::Q(q.online), None, seeded)
}

fn sample_pairs<R: Rng + ?Sized>(corpus: &Corpus, limit: usize, rng: &mut R) -> Vec<(StateVector, usize)> {
    let pairs = corpus.pairs();
    if limit == 0 || limit >= pairs.len() {
        return pairs;
    }
    let mut idx = sample(rng, pairs.len(), limit).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pairs[i].clone()).collect()
}

fn train_ppo<R: Rng + ?Sized>(ctx: &TrainContext<'_>, cfg: &AgentConfig, mut tracker: Tracker<'_>, rng: &mut R) -> Result<TrainOutcome> {
    let env = ctx.env;
    let p = &cfg.ppo;
    let t_max = env.t_max();
    let corpus = ctx.corpus.expect("checked by check_context");
    let mut pv = PolicyValueParams::init(env.state_dim(), p.hidden, ctx.catalog.len(), rng)?;
    let pairs = sample_pairs(corpus, p.imitation_pairs, rng);
    let accuracy = imitation_warmup(&mut pv, &pairs, p.imitation_epochs, 64, p.imitation_lr, rng)?;
    let mut opt = OptState::for_params(Optimizer::adam(p.lr), &pv);

    tracker.evaluate(0, AgentPolicy::PolicyValue(pv.clone()))?;
    let mut frames = 0u64;
    let mut updates = 0usize;
    let mut scaler = RewardScaler::default();
    while frames < cfg.budget_frames {
        let mut states = Vec::new();
        let (mut actions, mut logps, mut advs, mut rets) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        while states.len() < p.rollout_steps && frames < cfg.budget_frames {
            let mut session = env.reset(rng)?;
            let mut ep_states = Vec::new();
            let mut ep_rewards = Vec::new();
            let mut last_next = None;
            scaler.start_episode();
            loop {
                let s = session.state().clone();
                let (a, lp) = pv.sample(&s, rng)?;
                let action = &ctx.catalog.actions()[a];
                let out = session.step(action)?;
                let r = ctx.reward.reward(&s, action, Some(a), out.status, t_max);
                ep_rewards.push(if p.scale_rewards { scaler.scale(r, p.gamma) } else { r });
                ep_states.push(s);
                actions.push(a);
                logps.push(lp);
                frames += 1;
                if tracker.due(frames) {
                    tracker.evaluate(frames, AgentPolicy::PolicyValue(pv.clone()))?;
                }
                if out.done() {
                    break;
                }
                if frames >= cfg.budget_frames {
                    last_next = Some(out.next_state);
                    break;
                }
            }
            let values = pv.values(&state_matrix(&ep_states))?;
            let bootstrap = match &last_next {
                Some(s) => pv.values(&state_matrix(std::slice::from_ref(s)))?[0],
                None => 0.0,
            };
            let (a, r) = gae(&ep_rewards, values.as_slice().expect("contiguous"), bootstrap, p.gamma, p.lambda);
            advs.extend(a);
            rets.extend(r);
            states.extend(ep_states);
        }
        let batch = PpoBatch {
            states: state_matrix(&states),
            actions,
            old_log_probs: logps,
            advantages: advs,
            returns: rets,
        };
        ppo_update(&mut pv, &mut opt, &batch, p, rng)?;
        updates += 1;
        if p.teacher_every > 0 && updates % p.teacher_every == 0 {
            imitation_warmup(&mut pv, &pairs, 1, 64, p.imitation_lr, rng)?;
        }
    }
    tracker.finish(AgentPolicy::PolicyValue(pv), Some(accuracy), 0)
}
