//! Two-stage dialogue policy training: a state-action reward model is
//! learned offline with a VAE state encoder and a Gumbel-Softmax generator,
//! then frozen and used as the reward for off-policy (DQN/WDQN) and
//! on-policy (PPO) agents on a synthetic multi-domain dialogue environment.

pub mod agents;
pub mod dialenv;
pub mod diffcore;
mod error;
pub mod rewardgan;
pub mod statevae;
pub mod xfer;

pub use error::{Error, Result};
