use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dialenv::StateVector;
use crate::diffcore::{
    clip_grad_norm, log_softmax_rows, Activation, NetParams, NetSpec, OptState, Optimizer, ParamSet,
};
use crate::error::{reject, Error, Result};
use crate::statevae::state_matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub hidden: usize,
    pub lr: f64,
    pub clip_eps: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub rollout_steps: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub grad_clip: f64,
    pub imitation_epochs: usize,
    pub imitation_lr: f64,
    /// Expert pairs used for the imitation warm-up (0 = all).
    pub imitation_pairs: usize,
    /// Supervised pass on expert pairs after every this many updates
    /// (0 = off).
    pub teacher_every: usize,
    /// Divide rewards by a running std of the discounted return.
    pub scale_rewards: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            lr: 3e-4,
            clip_eps: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            epochs: 4,
            rollout_steps: 2048,
            minibatch: 256,
            value_coef: 0.5,
            entropy_coef: 0.01,
            grad_clip: 10.0,
            imitation_epochs: 1,
            imitation_lr: 1e-3,
            imitation_pairs: 2000,
            teacher_every: 0,
            scale_rewards: true,
        }
    }
}

/// Policy logits and state value, as two separate networks.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValueParams {
    pub policy: NetParams,
    pub value: NetParams,
}

impl ParamSet for PolicyValueParams {
    fn num_params(&self) -> usize {
        self.policy.num_params() + self.value.num_params()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        self.policy.write_flat(out);
        self.value.write_flat(out);
    }

    fn read_flat(&mut self, src: &[f64]) -> usize {
        let at = self.policy.read_flat(src);
        at + self.value.read_flat(&src[at..])
    }
}

impl PolicyValueParams {
    pub fn init<R: Rng + ?Sized>(state_dim: usize, hidden: usize, num_actions: usize, rng: &mut R) -> Result<Self> {
        let mlp = |out| NetSpec::mlp(&[state_dim, hidden, hidden, out], Activation::Relu, Activation::Identity);
        Ok(Self {
            policy: NetParams::init(mlp(num_actions)?, rng),
            value: NetParams::init(mlp(1)?, rng),
        })
    }

    pub fn num_actions(&self) -> usize {
        self.policy.spec().output_dim()
    }

    pub fn log_probs(&self, states: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(log_softmax_rows(&self.policy.predict(states)?))
    }

    pub fn probs(&self, states: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.log_probs(states)?.mapv(f64::exp))
    }

    pub fn values(&self, states: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.value.predict(states)?.column(0).to_owned())
    }

    /// Samples an action; returns it with its log-probability.
    pub fn sample<R: Rng + ?Sized>(&self, s: &StateVector, rng: &mut R) -> Result<(usize, f64)> {
        let lp = self.log_probs(&state_matrix(std::slice::from_ref(s)))?;
        let row = lp.row(0);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &l) in row.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                return Ok((i, l));
            }
        }
        let last = row.len() - 1;
        Ok((last, row[last]))
    }

    pub fn greedy(&self, s: &StateVector) -> Result<usize> {
        let logits = self.policy.predict(&state_matrix(std::slice::from_ref(s)))?;
        Ok(super::dqn::greedy(logits.row(0).as_slice().expect("contiguous")))
    }
}

/// Generalized advantage estimates and value targets for one episode.
/// `bootstrap` is the value after the last step (0 for a terminal end).
/// Running std of the per-episode discounted return, used to bring
/// rewards of any magnitude onto a unit scale.
#[derive(Debug, Clone, Default)]
pub struct RewardScaler {
    count: f64,
    mean: f64,
    m2: f64,
    ret: f64,
}

impl RewardScaler {
    pub fn start_episode(&mut self) {
        self.ret = 0.0;
    }

    pub fn scale(&mut self, r: f64, gamma: f64) -> f64 {
        self.ret = gamma * self.ret + r;
        self.count += 1.0;
        let d = self.ret - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (self.ret - self.mean);
        r / self.std().max(1e-8)
    }

    pub fn std(&self) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2 / self.count).sqrt()
        }
    }
}

pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Flattened rollout data for the clipped-surrogate update.
#[derive(Debug, Clone)]
pub struct PpoBatch {
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn select(&self, rows: &[usize]) -> PpoBatch {
        PpoBatch {
            states: self.states.select(Axis(0), rows),
            actions: rows.iter().map(|&i| self.actions[i]).collect(),
            old_log_probs: rows.iter().map(|&i| self.old_log_probs[i]).collect(),
            advantages: rows.iter().map(|&i| self.advantages[i]).collect(),
            returns: rows.iter().map(|&i| self.returns[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoLosses {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    /// Share of samples whose ratio left the clip range.
    pub clip_fraction: f64,
}

/// Clipped surrogate, value regression and entropy bonus with gradients of
/// `policy + value_coef·value − entropy_coef·entropy`.
pub fn ppo_loss_and_grad(
    pv: &PolicyValueParams,
    batch: &PpoBatch,
    clip_eps: f64,
    value_coef: f64,
    entropy_coef: f64,
) -> Result<(PpoLosses, PolicyValueParams)> {
    let n = batch.len();
    if n == 0 {
        reject!("empty PPO batch");
    }
    let nf = n as f64;
    let (logits, pcache) = pv.policy.forward(&batch.states)?;
    let logp = log_softmax_rows(&logits);
    let mut g_logits = Array2::zeros(logits.dim());
    let mut losses = PpoLosses::default();
    for i in 0..n {
        let a = batch.actions[i];
        let adv = batch.advantages[i];
        let ratio = (logp[[i, a]] - batch.old_log_probs[i]).exp();
        let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
        let (s1, s2) = (ratio * adv, clipped * adv);
        losses.policy -= s1.min(s2) / nf;
        if clipped != ratio {
            losses.clip_fraction += 1.0 / nf;
        }
        // d(-min)/dlogp is -ratio·A on the unclipped branch, 0 otherwise
        let coef = if s1 <= s2 { -ratio * adv / nf } else { 0.0 };
        let row = logp.row(i);
        let h: f64 = -row.iter().map(|&l| l.exp() * l).sum::<f64>();
        losses.entropy += h / nf;
        for j in 0..logits.ncols() {
            let p = row[j].exp();
            let onehot = if j == a { 1.0 } else { 0.0 };
            let dh = -p * (row[j] + h);
            g_logits[[i, j]] = coef * (onehot - p) - entropy_coef * dh / nf;
        }
    }
    let (v, vcache) = pv.value.forward(&batch.states)?;
    let mut g_v = Array2::zeros(v.dim());
    for i in 0..n {
        let d = v[[i, 0]] - batch.returns[i];
        losses.value += d * d / nf;
        g_v[[i, 0]] = value_coef * 2.0 * d / nf;
    }
    let (gp, _) = pv.policy.backward(&pcache, &g_logits)?;
    let (gv, _) = pv.value.backward(&vcache, &g_v)?;
    Ok((losses, PolicyValueParams { policy: gp, value: gv }))
}

/// Scalar objective matching [`ppo_loss_and_grad`].
pub fn ppo_objective(losses: &PpoLosses, value_coef: f64, entropy_coef: f64) -> f64 {
    losses.policy + value_coef * losses.value - entropy_coef * losses.entropy
}

/// `epochs` passes of shuffled minibatch updates with per-minibatch
/// advantage normalization; returns the mean losses of the first pass.
pub fn ppo_update<R: Rng + ?Sized>(
    pv: &mut PolicyValueParams,
    opt: &mut OptState,
    batch: &PpoBatch,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        reject!("empty PPO batch");
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let (mut pl, mut vl, mut count) = (0.0, 0.0, 0usize);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch.max(1)) {
            let mut mb = batch.select(chunk);
            normalize(&mut mb.advantages);
            let (losses, mut grads) = ppo_loss_and_grad(pv, &mb, cfg.clip_eps, cfg.value_coef, cfg.entropy_coef)?;
            if !losses.policy.is_finite() || !losses.value.is_finite() {
                return Err(Error::TrainingDivergence(format!("PPO losses became {losses:?}")));
            }
            // Clipped per head so large value errors cannot drown the policy step.
            clip_grad_norm(&mut grads.policy, cfg.grad_clip);
            clip_grad_norm(&mut grads.value, cfg.grad_clip);
            opt.step(pv, &grads)?;
            if epoch == 0 {
                pl += losses.policy;
                vl += losses.value;
                count += 1;
            }
        }
    }
    Ok((pl / count as f64, vl / count as f64))
}

fn normalize(v: &mut [f64]) {
    if v.len() < 2 {
        return;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    for x in v.iter_mut() {
        *x = (*x - mean) / (std + 1e-8);
    }
}

/// Mean cross-entropy of the policy on `(state, action)` pairs.
pub fn imitation_loss_and_grad(policy: &NetParams, states: &Array2<f64>, actions: &[usize]) -> Result<(f64, NetParams)> {
    let n = states.nrows();
    if n == 0 || actions.len() != n {
        reject!("imitation batch needs matching non-empty states and actions");
    }
    let (logits, cache) = policy.forward(states)?;
    let logp = log_softmax_rows(&logits);
    let mut g = logp.mapv(f64::exp);
    let mut loss = 0.0;
    for (i, &a) in actions.iter().enumerate() {
        if a >= logits.ncols() {
            reject!("action {a} outside {} policy outputs", logits.ncols());
        }
        loss -= logp[[i, a]] / n as f64;
        g[[i, a]] -= 1.0;
    }
    g /= n as f64;
    let (grads, _) = policy.backward(&cache, &g)?;
    Ok((loss, grads))
}

/// Behaviour cloning on expert pairs; returns the final training accuracy.
pub fn imitation_warmup<R: Rng + ?Sized>(
    pv: &mut PolicyValueParams,
    pairs: &[(StateVector, usize)],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Config("imitation warm-up needs a non-empty corpus".into()));
    }
    let states: Vec<StateVector> = pairs.iter().map(|p| p.0.clone()).collect();
    let x = state_matrix(&states);
    let actions: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let mut opt = OptState::for_params(Optimizer::adam(lr), &pv.policy);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size.max(1)) {
            let xs = x.select(Axis(0), chunk);
            let acts: Vec<usize> = chunk.iter().map(|&i| actions[i]).collect();
            let (_, grads) = imitation_loss_and_grad(&pv.policy, &xs, &acts)?;
            opt.step(&mut pv.policy, &grads)?;
        }
    }
    let logits = pv.policy.predict(&x)?;
    let hits = logits
        .rows()
        .into_iter()
        .zip(&actions)
        .filter(|(r, &a)| super::dqn::greedy(r.as_slice().expect("contiguous")) == a)
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}
