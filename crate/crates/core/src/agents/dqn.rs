use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::Transition;
use crate::dialenv::StateVector;
use crate::diffcore::{clip_grad_norm, Activation, NetParams, NetSpec, OptState};
use crate::error::{reject, Error, Result};
use crate::statevae::state_matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub hidden: usize,
    pub lr: f64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub sync_every: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of the budget over which epsilon decays linearly.
    pub epsilon_decay_frac: f64,
    pub grad_clip: f64,
    /// Frames collected before the first update (ignored when the buffer
    /// is seeded with expert data).
    pub learning_starts: u64,
    pub train_every: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            lr: 1e-3,
            gamma: 0.99,
            buffer_capacity: 50_000,
            batch_size: 64,
            sync_every: 1000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_frac: 0.2,
            grad_clip: 10.0,
            learning_starts: 500,
            train_every: 1,
        }
    }
}

impl DqnConfig {
    pub fn epsilon(&self, frame: u64, budget: u64) -> f64 {
        let horizon = self.epsilon_decay_frac * budget as f64;
        if horizon <= 0.0 {
            return self.epsilon_end;
        }
        let t = (frame as f64 / horizon).min(1.0);
        self.epsilon_start + t * (self.epsilon_end - self.epsilon_start)
    }
}

/// Online Q-network plus its target copy.
#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    pub online: NetParams,
    pub target: NetParams,
}

pub fn q_spec(state_dim: usize, hidden: usize, num_actions: usize) -> Result<NetSpec> {
    NetSpec::mlp(&[state_dim, hidden, hidden, num_actions], Activation::Relu, Activation::Identity)
}

impl QNet {
    pub fn init<R: Rng + ?Sized>(state_dim: usize, hidden: usize, num_actions: usize, rng: &mut R) -> Result<Self> {
        let online = NetParams::init(q_spec(state_dim, hidden, num_actions)?, rng);
        Ok(Self {
            target: online.clone(),
            online,
        })
    }

    pub fn sync(&mut self) {
        self.target = self.online.clone();
    }
}

pub fn q_values(net: &NetParams, s: &StateVector) -> Result<Array1<f64>> {
    Ok(net.predict(&state_matrix(std::slice::from_ref(s)))?.row(0).to_owned())
}

/// Index of the largest entry, lowest index on ties.
pub fn greedy(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy selection.
pub fn dqn_select<R: Rng + ?Sized>(net: &NetParams, s: &StateVector, epsilon: f64, rng: &mut R) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        reject!("epsilon {epsilon} outside [0, 1]");
    }
    let k = net.spec().output_dim();
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..k));
    }
    Ok(greedy(q_values(net, s)?.as_slice().expect("contiguous")))
}

/// `r + γ (1 − done) max_a' Q_target(s', a')`.
pub fn td_targets(target: &NetParams, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>> {
    let next: Vec<StateVector> = batch.iter().map(|t| t.next_state.clone()).collect();
    let q = target.predict(&state_matrix(&next))?;
    let mut out = Vec::with_capacity(batch.len());
    for (t, row) in batch.iter().zip(q.rows()) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let y = t.reward + if t.done { 0.0 } else { gamma * max };
        if !y.is_finite() {
            return Err(Error::TrainingDivergence(format!("non-finite TD target {y}")));
        }
        out.push(y);
    }
    Ok(out)
}

/// Mean squared TD error on the taken actions and its gradient.
pub fn td_loss_and_grad(
    net: &NetParams,
    states: &Array2<f64>,
    actions: &[usize],
    targets: &[f64],
) -> Result<(f64, NetParams)> {
    let n = states.nrows();
    if n == 0 || actions.len() != n || targets.len() != n {
        reject!("TD batch needs matching non-empty states, actions and targets");
    }
    let (q, cache) = net.forward(states)?;
    let mut g = Array2::zeros(q.dim());
    let mut loss = 0.0;
    for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        if a >= q.ncols() {
            reject!("action {a} outside {} Q outputs", q.ncols());
        }
        let d = q[[i, a]] - y;
        loss += d * d / n as f64;
        g[[i, a]] = 2.0 * d / n as f64;
    }
    let (grads, _) = net.backward(&cache, &g)?;
    Ok((loss, grads))
}

/// One gradient step on a sampled batch; returns the TD loss.
pub fn dqn_update(q: &mut QNet, opt: &mut OptState, batch: &[&Transition], gamma: f64, grad_clip: f64) -> Result<f64> {
    if batch.is_empty() {
        reject!("empty DQN batch");
    }
    let targets = td_targets(&q.target, batch, gamma)?;
    let states: Vec<StateVector> = batch.iter().map(|t| t.state.clone()).collect();
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    let (loss, mut grads) = td_loss_and_grad(&q.online, &state_matrix(&states), &actions, &targets)?;
    if !loss.is_finite() {
        return Err(Error::TrainingDivergence(format!("TD loss became {loss}")));
    }
    clip_grad_norm(&mut grads, grad_clip);
    opt.step(&mut q.online, &grads)?;
    Ok(loss)
}
