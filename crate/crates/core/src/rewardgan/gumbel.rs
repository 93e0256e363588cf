//! Gumbel-Max sampling, its softmax relaxation and the straight-through
//! estimator.

use ndarray::{Array2, ArrayView1, ArrayViewMut1};
use rand::Rng;

use crate::error::{reject, Result};

/// Uniform draws are clamped to `[U_EPS, 1 - U_EPS]` before the double log.
const U_EPS: f64 = 1e-12;

pub fn gumbel_sample<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>().clamp(U_EPS, 1.0 - U_EPS);
    -(-u.ln()).ln()
}

/// `k` independent Gumbel(0, 1) draws, `g = −log(−log u)`.
pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    (0..k).map(|_| gumbel_sample(rng)).collect()
}

pub fn gumbel_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| gumbel_sample(rng))
}

fn relax_row(logits: ArrayView1<f64>, g: ArrayView1<f64>, tau: f64, mut out: ArrayViewMut1<f64>) {
    let mut max = f64::NEG_INFINITY;
    for ((o, &l), &n) in out.iter_mut().zip(logits).zip(g) {
        *o = (l + n) / tau;
        max = max.max(*o);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `y_i = exp((l_i + g_i)/τ) / Σ_j exp((l_j + g_j)/τ)`.
pub fn gumbel_softmax(logits: &[f64], tau: f64, g: &[f64]) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        reject!("temperature must be positive, got {tau}");
    }
    if logits.len() != g.len() || logits.is_empty() {
        reject!("logits ({}) and noise ({}) must be non-empty and equal length", logits.len(), g.len());
    }
    let mut out = vec![0.0; logits.len()];
    relax_row(
        ArrayView1::from(logits),
        ArrayView1::from(g),
        tau,
        ArrayViewMut1::from(out.as_mut_slice()),
    );
    Ok(out)
}

/// Row-wise [`gumbel_softmax`].
pub fn gumbel_softmax_rows(logits: &Array2<f64>, tau: f64, g: &Array2<f64>) -> Result<Array2<f64>> {
    if !(tau > 0.0) {
        reject!("temperature must be positive, got {tau}");
    }
    if logits.dim() != g.dim() {
        reject!("logits {:?} and noise {:?} differ in shape", logits.dim(), g.dim());
    }
    let mut y = Array2::zeros(logits.dim());
    for ((l, n), o) in logits.rows().into_iter().zip(g.rows()).zip(y.rows_mut()) {
        relax_row(l, n, tau, o);
    }
    Ok(y)
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(y: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in y.iter().enumerate() {
        if v > y[best] {
            best = i;
        }
    }
    best
}

/// Forward value of the straight-through estimator: the one-hot vector of
/// `argmax y`. Its backward pass is the identity, so callers route the
/// gradient of the one-hot output straight to `y`.
pub fn straight_through(y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    if !y.is_empty() {
        out[argmax(y)] = 1.0;
    }
    out
}

pub fn straight_through_rows(y: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(y.dim());
    for (r, mut o) in y.rows().into_iter().zip(out.rows_mut()) {
        let r = r.to_vec();
        o[argmax(&r)] = 1.0;
    }
    out
}

/// Gradient w.r.t. the logits given the gradient w.r.t. the relaxed
/// sample `y` (row-wise softmax Jacobian scaled by `1/τ`).
pub fn gumbel_softmax_backward(y: &Array2<f64>, grad_y: &Array2<f64>, tau: f64) -> Array2<f64> {
    let mut out = Array2::zeros(y.dim());
    for ((yr, gr), mut o) in y.rows().into_iter().zip(grad_y.rows()).zip(out.rows_mut()) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot) / tau;
        }
    }
    out
}
