use super::ParamSet;

/// Gradients smaller than this are compared in absolute rather than
/// relative terms.
const FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares the analytic gradient returned by `loss_and_grad` against central
/// differences with step `epsilon` over every parameter, and returns the
/// largest relative error.
///
/// `loss_and_grad` must be deterministic: any noise it uses has to be sampled
/// once up front and captured.
pub fn grad_check<P, F>(params: &P, loss_and_grad: F, epsilon: f64) -> f64
where
    P: ParamSet + Clone,
    F: Fn(&P) -> (f64, P),
{
    let (_, analytic) = loss_and_grad(params);
    let analytic = analytic.to_flat();
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut theta = base.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        theta[i] = base[i] + epsilon;
        probe.read_flat(&theta);
        let up = loss_and_grad(&probe).0;
        theta[i] = base[i] - epsilon;
        probe.read_flat(&theta);
        let down = loss_and_grad(&probe).0;
        theta[i] = base[i];
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Activation, NetParams, NetSpec};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mse_loss(net: &NetParams, x: &Array2<f64>, t: &Array2<f64>) -> (f64, NetParams) {
        let (y, cache) = net.forward(x).unwrap();
        let n = x.nrows() as f64;
        let diff = &y - t;
        let loss = 0.5 * diff.mapv(|d| d * d).sum() / n;
        let (g, _) = net.backward(&cache, &(diff / n)).unwrap();
        (loss, g)
    }

    #[test]
    fn linear_regression_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let spec = NetSpec::mlp(&[4, 2], Activation::Identity, Activation::Identity).unwrap();
        let net = NetParams::init(spec, &mut rng);
        let x = Array2::from_shape_fn((8, 4), |_| rng.random_range(-1.0..1.0));
        let t = Array2::from_shape_fn((8, 2), |_| rng.random_range(-1.0..1.0));
        let err = grad_check(&net, |p| mse_loss(p, &x, &t), 1e-5);
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn three_layer_nets_all_activations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (hidden, out) in [
            (Activation::Tanh, Activation::Identity),
            (Activation::Sigmoid, Activation::Softmax),
            (Activation::Relu, Activation::Sigmoid),
            (Activation::Tanh, Activation::Tanh),
        ] {
            let spec = NetSpec::mlp(&[5, 6, 4, 3], hidden, out).unwrap();
            let net = NetParams::init(spec, &mut rng);
            let x = Array2::from_shape_fn((6, 5), |_| rng.random_range(-1.0..1.0));
            let t = Array2::from_shape_fn((6, 3), |_| rng.random_range(0.0..1.0));
            let err = grad_check(&net, |p| mse_loss(p, &x, &t), 1e-5);
            assert!(err < 1e-4, "{hidden:?}/{out:?}: max relative error {err}");
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = NetSpec::mlp(&[3, 2], Activation::Identity, Activation::Identity).unwrap();
        let net = NetParams::init(spec, &mut rng);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let t = Array2::zeros((4, 2));
        let err = grad_check(
            &net,
            |p| {
                let (l, g) = mse_loss(p, &x, &t);
                let mut flat = g.to_flat();
                flat[0] *= 2.0;
                let mut g = g;
                g.read_flat(&flat);
                (l, g)
            },
            1e-5,
        );
        assert!(err > 0.1);
    }
}
