use serde::{Deserialize, Serialize};

use crate::error::{reject, Error, Result};

use super::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam(1e-3)
    }
}

/// Optimizer hyperparameters plus moment accumulators for one parameter set.
#[derive(Debug, Clone)]
pub struct OptState {
    optimizer: Optimizer,
    steps: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptState {
    pub fn new(optimizer: Optimizer, num_params: usize) -> Self {
        let (m, v) = match optimizer {
            Optimizer::Sgd { .. } => (Vec::new(), Vec::new()),
            Optimizer::Adam { .. } => (vec![0.0; num_params], vec![0.0; num_params]),
        };
        Self {
            optimizer,
            steps: 0,
            m,
            v,
        }
    }

    pub fn for_params<P: ParamSet>(optimizer: Optimizer, params: &P) -> Self {
        Self::new(optimizer, params.num_params())
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn optimizer(&self) -> Optimizer {
        self.optimizer
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let mut p = params.to_flat();
        let g = grads.to_flat();
        self.step_flat(&mut p, &g)?;
        params.read_flat(&p);
        Ok(())
    }

    pub fn step_flat(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            reject!("{} parameters but {} gradients", params.len(), grads.len());
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::TrainingDivergence(format!(
                "non-finite gradient at index {i}"
            )));
        }
        self.steps += 1;
        match self.optimizer {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if self.m.len() != params.len() {
                    reject!(
                        "optimizer state sized for {} parameters, got {}",
                        self.m.len(),
                        params.len()
                    );
                }
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDivergence("non-finite parameter after update".into()));
        }
        Ok(())
    }
}

/// Rescales `grads` in place so that its global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<P: ParamSet>(grads: &mut P, max_norm: f64) -> f64 {
    let mut flat = grads.to_flat();
    let norm = flat.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        flat.iter_mut().for_each(|g| *g *= scale);
        grads.read_flat(&flat);
    }
    norm
}
