//! Synthetic multi-domain task-oriented dialogue environment.

pub mod action;
pub mod corpus;
pub mod episode;
pub mod expert;
pub mod goal;
pub mod layout;
pub mod reward;
pub mod schema;
pub mod tracker;
pub mod user;

pub use action::{ActionCatalog, AtomicAct, CompositeAction, SysActType};
pub use corpus::{build_action_catalog, generate_corpus, Corpus, CorpusConfig, CorpusEpisode, CorpusTurn};
pub use episode::{
    evaluate, resolve_action, run_episode, ConstantPolicy, DialogueEnv, DialoguePolicy, EnvConfig, EpisodeLog,
    EvalResult, ExpertPolicy, Handcrafted, Observation, PolicyAction, RandomPolicy, RewardSource, Session,
    StepOutcome, Turn,
};
pub use expert::{expert_policy, noisy_expert, random_atomic_action};
pub use goal::{sample_goal, DomainGoal, GoalSampler, SlotValue, UserGoal};
pub use layout::{vectorize_state, StateLayout, StateVector};
pub use reward::{handcrafted_reward, TurnStatus};
pub use schema::{DomainId, DomainSchema, SchemaRegistry, SlotId, NONE_SLOT};
pub use tracker::{track_state, MatchBucket, TrackerState};
pub use user::{user_step, UserAct, UserActType, UserSimulator, UserTurn};
