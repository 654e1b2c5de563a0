use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add_into, gelu, gelu_grad, Mat};
use crate::params::{tmut, tref, ParamTensors, TensorMut, TensorRef};

/// Frame-level Siamese MLP `d → hidden → out` with a GELU in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiameseMlpParams {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

/// Activations of one forward pass over a batch of frames.
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Mat,
    pre: Mat,
    hidden: Mat,
}

impl SiameseMlpParams {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, out: usize, rng: &mut R) -> Result<Self> {
        if input == 0 || hidden == 0 || out == 0 {
            return Err(Error::InvalidConfig("MLP widths must be positive".into()));
        }
        let uniform = |rows: usize, cols: usize, rng: &mut R| {
            let bound = 1.0 / (rows as f64).sqrt();
            Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect())
        };
        Ok(Self {
            w1: uniform(input, hidden, rng),
            b1: vec![0.0; hidden],
            w2: uniform(hidden, out, rng),
            b2: vec![0.0; out],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.set_zero();
        z
    }

    fn check(&self, frames: &Mat) -> Result<()> {
        if frames.cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: frames.cols,
            });
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite("MLP input".into()));
        }
        Ok(())
    }

    /// Projects every row of `frames`.
    pub fn forward(&self, frames: &Mat) -> Result<(Mat, MlpCache)> {
        self.check(frames)?;
        let pre = frames.affine(&self.w1, &self.b1);
        let hidden = Mat::from_vec(pre.rows, pre.cols, pre.data.iter().map(|&v| gelu(v)).collect());
        let out = hidden.affine(&self.w2, &self.b2);
        Ok((
            out,
            MlpCache {
                input: frames.clone(),
                pre,
                hidden,
            },
        ))
    }

    /// Accumulates parameter gradients for upstream `dout` (one row per
    /// projected frame).
    pub fn backward(&self, cache: &MlpCache, dout: &Mat, grads: &mut Self) {
        cache.hidden.t_matmul_acc(dout, &mut grads.w2);
        dout.col_sum_acc(&mut grads.b2);
        let mut dpre = dout.matmul_t(&self.w2);
        for (g, &x) in dpre.data.iter_mut().zip(&cache.pre.data) {
            *g *= gelu_grad(x);
        }
        cache.input.t_matmul_acc(&dpre, &mut grads.w1);
        let mut db1 = vec![0.0; self.b1.len()];
        dpre.col_sum_acc(&mut db1);
        add_into(&mut grads.b1, &db1);
    }

    /// Track representation: mean of the per-frame projections.
    pub fn track_representation(&self, frames: &Mat) -> Result<Vec<f64>> {
        let (out, _) = self.forward(frames)?;
        let mut mean = vec![0.0; out.cols];
        out.col_sum_acc(&mut mean);
        let n = out.rows as f64;
        mean.iter_mut().for_each(|v| *v /= n);
        Ok(mean)
    }
}

impl ParamTensors for SiameseMlpParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            tref("w1".into(), vec![self.w1.rows, self.w1.cols], true, &self.w1.data),
            tref("b1".into(), vec![self.b1.len()], false, &self.b1),
            tref("w2".into(), vec![self.w2.rows, self.w2.cols], true, &self.w2.data),
            tref("b2".into(), vec![self.b2.len()], false, &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let (s1, s2) = (vec![self.w1.rows, self.w1.cols], vec![self.w2.rows, self.w2.cols]);
        let (l1, l2) = (self.b1.len(), self.b2.len());
        vec![
            tmut("w1".into(), s1, true, &mut self.w1.data),
            tmut("b1".into(), vec![l1], false, &mut self.b1),
            tmut("w2".into(), s2, true, &mut self.w2.data),
            tmut("b2".into(), vec![l2], false, &mut self.b2),
        ]
    }
}
