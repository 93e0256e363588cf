//! Minimal differentiable layer shared by every learned model: MLPs with
//! hand-written backward passes, SGD/Adam, a finite-difference gradient
//! checker and a binary checkpoint format.

mod checkpoint;
mod gradcheck;
mod net;
mod optim;

pub use checkpoint::{read_net, write_net, CheckpointReader, CheckpointWriter};
pub use gradcheck::{grad_check, relative_error};
pub use net::{
    log_softmax_rows, sigmoid, softmax_rows_inplace, softplus, Activation, Cache, Layer,
    NetGrads, NetParams, NetSpec,
};
pub use optim::{clip_grad_norm, OptState, Optimizer};

/// Anything whose trainable parameters can be viewed as one flat vector.
///
/// Gradient containers implement it with the same layout as the parameters
/// they belong to, so optimizers and the gradient checker work on any model.
pub trait ParamSet {
    fn num_params(&self) -> usize;

    fn write_flat(&self, out: &mut Vec<f64>);

    /// Overwrites parameters from the front of `src`; returns how many
    /// values were consumed.
    fn read_flat(&mut self, src: &[f64]) -> usize;

    fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.write_flat(&mut v);
        v
    }

    fn all_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}
