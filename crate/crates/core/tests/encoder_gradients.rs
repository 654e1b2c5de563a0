//! Encoder backward pass against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackcentre::encoder::{backward, forward_train, EncoderConfig, EncoderParams};
use trackcentre::linalg::{dot, Mat};
use trackcentre::params::ParamTensors;

const STEP: f64 = 1e-5;

/// Relative error with a floor so that near-zero gradients compare on an
/// absolute scale.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn objective(params: &EncoderParams, clip: &Mat, upstream: &[f64]) -> f64 {
    let (z, _) = forward_train(params, clip).unwrap();
    dot(&z, upstream)
}

fn max_fd_error(params: &EncoderParams, clip: &Mat, upstream: &[f64]) -> f64 {
    let (_, cache) = forward_train(params, clip).unwrap();
    let analytic = backward(params, &cache, upstream).unwrap().flat();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let mut idx = 0;
    let n_tensors = probe.tensors().len();
    for t in 0..n_tensors {
        let len = probe.tensors()[t].data.len();
        for k in 0..len {
            let orig = probe.tensors()[t].data[k];
            probe.tensors_mut()[t].data[k] = orig + STEP;
            let fp = objective(&probe, clip, upstream);
            probe.tensors_mut()[t].data[k] = orig - STEP;
            let fm = objective(&probe, clip, upstream);
            probe.tensors_mut()[t].data[k] = orig;
            let numeric = (fp - fm) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[idx], numeric));
            idx += 1;
        }
    }
    worst
}

#[test]
fn backward_matches_finite_differences_on_tiny_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..6 {
        let heads = [1, 2, 4][case % 3];
        let d = heads * rng.gen_range(1..=3);
        let layers = 1 + case % 2;
        let cfg = EncoderConfig::new(d, layers, heads, 2)
            .unwrap()
            .with_mlp_hidden(rng.gen_range(2..=2 * d))
            .unwrap();
        let mut params = EncoderParams::init(&cfg, &mut rng).unwrap();
        // Perturb gains/biases away from their init values.
        for t in params.tensors_mut() {
            for v in t.data.iter_mut() {
                *v += rng.gen_range(-0.2..0.2);
            }
        }
        let n = rng.gen_range(1..=4);
        let clip = Mat::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let upstream: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = max_fd_error(&params, &clip, &upstream);
        assert!(err <= 1e-4, "case {case}: max rel err {err}");
    }
}

#[test]
fn positional_table_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cfg = EncoderConfig::new(4, 2, 2, 2).unwrap().with_mlp_hidden(6).unwrap();
    cfg.use_positional_embedding = true;
    cfg.max_positions = 6;
    let params = EncoderParams::init(&cfg, &mut rng).unwrap();
    let clip = Mat::from_vec(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let err = max_fd_error(&params, &clip, &[0.4, -1.1]);
    assert!(err <= 1e-4, "max rel err {err}");
}
