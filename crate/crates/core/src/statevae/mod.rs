//! Variational autoencoder over binary dialogue states.
//!
//! The encoder trunk feeds a mean head and a log-variance head; the decoder
//! maps a latent sample back to Bernoulli logits. The autoencoder variant
//! drops the log-variance head and the KL term and decodes the mean.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dialenv::StateVector;
use crate::diffcore::{
    softplus, sigmoid, Activation, CheckpointReader, CheckpointWriter, NetParams, NetSpec, OptState, Optimizer,
    ParamSet,
};
use crate::error::{reject, Error, Result};

const MAGIC: &[u8; 4] = b"DVAE";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub hidden: usize,
    pub latent: usize,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// `false` trains the deterministic autoencoder variant.
    pub variational: bool,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            latent: 64,
            beta: 1.0,
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            variational: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeParams {
    pub trunk: NetParams,
    pub mean: NetParams,
    /// Absent for the autoencoder variant.
    pub logvar: Option<NetParams>,
    pub decoder: NetParams,
}

impl ParamSet for VaeParams {
    fn num_params(&self) -> usize {
        self.trunk.num_params()
            + self.mean.num_params()
            + self.logvar.as_ref().map_or(0, |n| n.num_params())
            + self.decoder.num_params()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        self.trunk.write_flat(out);
        self.mean.write_flat(out);
        if let Some(l) = &self.logvar {
            l.write_flat(out);
        }
        self.decoder.write_flat(out);
    }

    fn read_flat(&mut self, src: &[f64]) -> usize {
        let mut at = self.trunk.read_flat(src);
        at += self.mean.read_flat(&src[at..]);
        if let Some(l) = &mut self.logvar {
            at += l.read_flat(&src[at..]);
        }
        at + self.decoder.read_flat(&src[at..])
    }
}

/// Loss terms averaged over the batch; reconstruction and KL are summed
/// over bits and latent dimensions respectively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

/// Stacks state vectors into a batch-major 0/1 matrix.
pub fn state_matrix(states: &[StateVector]) -> Array2<f64> {
    let dim = states.first().map_or(0, StateVector::dim);
    let mut m = Array2::zeros((states.len(), dim));
    for (mut row, s) in m.rows_mut().into_iter().zip(states) {
        for (o, &b) in row.iter_mut().zip(s.bits()) {
            *o = b as f64;
        }
    }
    m
}

/// Closed-form `KL(N(μ, e^lv) ‖ N(0, 1))` summed over dimensions.
pub fn gaussian_kl(mean: &[f64], logvar: &[f64]) -> f64 {
    mean.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

/// `z = μ + exp(lv/2) ⊙ ε`.
pub fn reparameterize(mean: &Array2<f64>, logvar: &Array2<f64>, noise: &Array2<f64>) -> Array2<f64> {
    let mut z = logvar.mapv(|lv| (0.5 * lv).exp());
    z *= noise;
    z += mean;
    z
}

/// Draws standard-normal noise and reparameterizes.
pub fn reparam_sample<R: Rng + ?Sized>(mean: &Array1<f64>, logvar: &Array1<f64>, rng: &mut R) -> Array1<f64> {
    let eps: Array1<f64> = Array1::from_shape_fn(mean.len(), |_| rng.sample(StandardNormal));
    mean + &(logvar.mapv(|lv| (0.5 * lv).exp()) * &eps)
}

impl VaeParams {
    pub fn init<R: Rng + ?Sized>(state_dim: usize, cfg: &VaeConfig, rng: &mut R) -> Result<Self> {
        if state_dim == 0 || cfg.hidden == 0 || cfg.latent == 0 {
            reject!("VAE dimensions must be positive");
        }
        let trunk = NetParams::init(NetSpec::new(vec![state_dim, cfg.hidden], vec![Activation::Relu])?, rng);
        let head = || NetSpec::new(vec![cfg.hidden, cfg.latent], vec![Activation::Identity]);
        let mean = NetParams::init(head()?, rng);
        let logvar = if cfg.variational {
            Some(NetParams::init(head()?, rng))
        } else {
            None
        };
        let decoder = NetParams::init(
            NetSpec::mlp(&[cfg.latent, cfg.hidden, state_dim], Activation::Relu, Activation::Identity)?,
            rng,
        );
        Ok(Self {
            trunk,
            mean,
            logvar,
            decoder,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.read_flat(&vec![0.0; self.num_params()]);
        z
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.spec().input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.mean.spec().output_dim()
    }

    pub fn is_variational(&self) -> bool {
        self.logvar.is_some()
    }

    fn check(&self, batch: &Array2<f64>) -> Result<()> {
        if batch.ncols() != self.state_dim() {
            reject!("state batch has {} columns, VAE expects {}", batch.ncols(), self.state_dim());
        }
        Ok(())
    }

    /// Mean and log-variance for every row. The autoencoder variant reports
    /// a zero log-variance.
    pub fn encode_batch(&self, batch: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check(batch)?;
        let h = self.trunk.predict(batch)?;
        let mean = self.mean.predict(&h)?;
        let logvar = match &self.logvar {
            Some(l) => l.predict(&h)?,
            None => Array2::zeros(mean.dim()),
        };
        Ok((mean, logvar))
    }

    pub fn encode(&self, s: &StateVector) -> Result<(Array1<f64>, Array1<f64>)> {
        let (m, lv) = self.encode_batch(&state_matrix(std::slice::from_ref(s)))?;
        Ok((m.row(0).to_owned(), lv.row(0).to_owned()))
    }

    /// Encoder means of every row.
    pub fn embed_batch(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(batch)?;
        self.mean.predict(&self.trunk.predict(batch)?)
    }

    pub fn embed_state(&self, s: &StateVector) -> Result<Array1<f64>> {
        Ok(self.embed_batch(&state_matrix(std::slice::from_ref(s)))?.row(0).to_owned())
    }

    /// Bernoulli logits of the decoder.
    pub fn decode_logits(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        self.decoder.predict(z)
    }

    /// Fraction of bits recovered by thresholding the decoded encoder mean.
    pub fn reconstruction_accuracy(&self, batch: &Array2<f64>) -> Result<f64> {
        if batch.nrows() == 0 {
            return Ok(1.0);
        }
        let logits = self.decode_logits(&self.embed_batch(batch)?)?;
        let hits = logits
            .iter()
            .zip(batch.iter())
            .filter(|(l, x)| (**l > 0.0) == (**x > 0.5))
            .count();
        Ok(hits as f64 / batch.len() as f64)
    }

    /// Loss and gradient for `batch`, with reparameterization noise fixed
    /// by `noise` (same shape as the latent batch; ignored by the
    /// autoencoder variant).
    pub fn loss_and_grad(&self, batch: &Array2<f64>, noise: &Array2<f64>, beta: f64) -> Result<(VaeLoss, VaeParams)> {
        self.check(batch)?;
        let n = batch.nrows();
        if n == 0 {
            reject!("empty VAE batch");
        }
        let nf = n as f64;
        let (h, trunk_cache) = self.trunk.forward(batch)?;
        let (mean, mean_cache) = self.mean.forward(&h)?;
        let lv = match &self.logvar {
            Some(l) => Some(l.forward(&h)?),
            None => None,
        };
        let z = match &lv {
            Some((lv, _)) => {
                if noise.dim() != mean.dim() {
                    reject!("noise shape {:?} does not match latent {:?}", noise.dim(), mean.dim());
                }
                reparameterize(&mean, lv, noise)
            }
            None => mean.clone(),
        };
        let (logits, dec_cache) = self.decoder.forward(&z)?;

        let mut recon = 0.0;
        let mut g_logits = Array2::zeros(logits.dim());
        for ((g, &l), &x) in g_logits.iter_mut().zip(logits.iter()).zip(batch.iter()) {
            recon += softplus(l) - x * l;
            *g = (sigmoid(l) - x) / nf;
        }
        recon /= nf;
        let (g_dec, g_z) = self.decoder.backward(&dec_cache, &g_logits)?;

        let mut kl = 0.0;
        let mut g_mean = g_z.clone();
        let mut g_h: Array2<f64>;
        let mut g_logvar = None;
        match (&self.logvar, &lv) {
            (Some(lnet), Some((lv, lv_cache))) => {
                let mut g_lv = Array2::zeros(lv.dim());
                for i in 0..n {
                    for j in 0..mean.ncols() {
                        let m = mean[[i, j]];
                        let v = lv[[i, j]];
                        kl += 0.5 * (m * m + v.exp() - 1.0 - v);
                        g_mean[[i, j]] += beta * m / nf;
                        g_lv[[i, j]] = g_z[[i, j]] * 0.5 * (0.5 * v).exp() * noise[[i, j]]
                            + beta * 0.5 * (v.exp() - 1.0) / nf;
                    }
                }
                kl /= nf;
                let (gl, gh_lv) = lnet.backward(lv_cache, &g_lv)?;
                g_logvar = Some(gl);
                g_h = gh_lv;
            }
            _ => g_h = Array2::zeros(h.dim()),
        }
        let (g_mean_net, gh_mean) = self.mean.backward(&mean_cache, &g_mean)?;
        g_h += &gh_mean;
        let (g_trunk, _) = self.trunk.backward(&trunk_cache, &g_h)?;
        let total = recon + if self.logvar.is_some() { beta * kl } else { 0.0 };
        Ok((
            VaeLoss {
                total,
                reconstruction: recon,
                kl,
            },
            VaeParams {
                trunk: g_trunk,
                mean: g_mean_net,
                logvar: g_logvar,
                decoder: g_dec,
            },
        ))
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let mut w = CheckpointWriter::new(w);
        w.magic(MAGIC)?;
        w.u32(VERSION)?;
        w.u8(self.is_variational() as u8)?;
        w.net(&self.trunk)?;
        w.net(&self.mean)?;
        if let Some(l) = &self.logvar {
            w.net(l)?;
        }
        w.net(&self.decoder)
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let mut r = CheckpointReader::new(r);
        r.expect_magic(MAGIC)?;
        let v = r.u32()?;
        if v != VERSION {
            return Err(Error::Checkpoint(format!("unsupported VAE checkpoint version {v}")));
        }
        let variational = r.u8()? == 1;
        let trunk = r.net()?;
        let mean = r.net()?;
        let logvar = if variational { Some(r.net()?) } else { None };
        let decoder = r.net()?;
        let p = Self {
            trunk,
            mean,
            logvar,
            decoder,
        };
        let ok = p.trunk.spec().output_dim() == p.mean.spec().input_dim()
            && p.logvar.as_ref().is_none_or(|l| l.spec() == p.mean.spec())
            && p.decoder.spec().input_dim() == p.latent_dim()
            && p.decoder.spec().output_dim() == p.state_dim();
        if !ok {
            return Err(Error::Checkpoint("inconsistent VAE network shapes".into()));
        }
        Ok(p)
    }
}

/// Draws standard-normal reparameterization noise for a batch.
pub fn sample_noise<R: Rng + ?Sized>(rows: usize, latent: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, latent), |_| rng.sample(StandardNormal))
}

/// Loss on `batch` with freshly drawn noise.
pub fn vae_loss<R: Rng + ?Sized>(params: &VaeParams, batch: &Array2<f64>, beta: f64, rng: &mut R) -> Result<VaeLoss> {
    let noise = sample_noise(batch.nrows(), params.latent_dim(), rng);
    Ok(params.loss_and_grad(batch, &noise, beta)?.0)
}

/// Minibatch Adam training. Returns the parameters and one loss point per
/// epoch (batch-size weighted means).
pub fn train_vae<R: Rng + ?Sized>(
    states: &[StateVector],
    cfg: &VaeConfig,
    rng: &mut R,
) -> Result<(VaeParams, Vec<EpochLoss>)> {
    if states.is_empty() {
        reject!("VAE training needs at least one state");
    }
    let data = state_matrix(states);
    let mut params = VaeParams::init(data.ncols(), cfg, rng)?;
    let mut opt = OptState::for_params(Optimizer::adam(cfg.lr), &params);
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let bs = cfg.batch_size.max(1);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut sums = [0.0f64; 3];
        for chunk in order.chunks(bs) {
            let batch = data.select(Axis(0), chunk);
            let noise = sample_noise(chunk.len(), cfg.latent, rng);
            let (loss, grads) = params.loss_and_grad(&batch, &noise, cfg.beta)?;
            if !loss.total.is_finite() {
                return Err(Error::TrainingDivergence(format!("VAE loss became {} in epoch {epoch}", loss.total)));
            }
            opt.step(&mut params, &grads)?;
            let w = chunk.len() as f64;
            sums[0] += loss.total * w;
            sums[1] += loss.reconstruction * w;
            sums[2] += loss.kl * w;
        }
        let n = data.nrows() as f64;
        let point = EpochLoss {
            epoch: epoch + 1,
            total: sums[0] / n,
            reconstruction: sums[1] / n,
            kl: sums[2] / n,
        };
        log::debug!("vae epoch {} total {:.4} recon {:.4} kl {:.4}", point.epoch, point.total, point.reconstruction, point.kl);
        curve.push(point);
    }
    Ok((params, curve))
}
