//! One-cycle learning-rate schedule and SGD with momentum.

use crate::params::ParamTensors;

/// Divisor giving the starting learning rate (`max / 25`).
pub const ONECYCLE_START_DIV: f64 = 25.0;
/// Divisor giving the final learning rate (`max / 1e4`).
pub const ONECYCLE_END_DIV: f64 = 1e4;

fn cos_anneal(from: f64, to: f64, pct: f64) -> f64 {
    to + (from - to) / 2.0 * ((std::f64::consts::PI * pct).cos() + 1.0)
}

/// Cosine one-cycle schedule. The warm-up covers the first
/// `warmup_epochs / epochs` of all steps and peaks at `max_lr` on its last
/// step; the learning rate then anneals to `max_lr / 1e4` at the final step.
pub fn onecycle_lr(step: usize, total_steps: usize, max_lr: f64, warmup_epochs: usize, epochs: usize) -> f64 {
    let start = max_lr / ONECYCLE_START_DIV;
    let end = max_lr / ONECYCLE_END_DIV;
    if total_steps <= 1 {
        return max_lr;
    }
    let last = total_steps - 1;
    let peak = (total_steps * warmup_epochs / epochs.max(1)).saturating_sub(1).min(last);
    if step <= peak {
        if peak == 0 {
            return max_lr;
        }
        cos_anneal(start, max_lr, step as f64 / peak as f64)
    } else {
        cos_anneal(max_lr, end, (step - peak) as f64 / (last - peak) as f64)
    }
}

/// SGD with classical momentum and L2 weight decay on projection matrices.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new<P: ParamTensors>(params: &P, momentum: f64, weight_decay: f64) -> Self {
        let velocity = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.data.len()])
            .collect();
        Self {
            momentum,
            weight_decay,
            velocity,
        }
    }

    /// `v ← μ·v + (g + λ·w)`, `w ← w − lr·v`.
    pub fn step<P: ParamTensors>(&mut self, params: &mut P, grads: &P, lr: f64) {
        let grads = grads.tensors();
        let params = params.tensors_mut();
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.velocity.len());
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            let decay = if p.decay { self.weight_decay } else { 0.0 };
            for ((w, &gi), vi) in p.data.iter_mut().zip(g.data).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi + decay * *w;
                *w -= lr * *vi;
            }
        }
    }
}
