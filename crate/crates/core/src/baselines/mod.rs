//! Comparison systems: plain temporal averaging, and pairwise contrastive
//! training of either a frame-level Siamese MLP or the clip transformer.

mod mlp;
mod pairwise;

pub use mlp::{MlpCache, SiameseMlpParams};
pub use pairwise::{train_pairwise, PairwiseKind, PairwiseModel, PairwiseOutcome};

use crate::error::{Error, Result};
use crate::linalg::{euclidean, Mat};

/// Mean over frames.
pub fn temporal_average(frames: &Mat) -> Vec<f64> {
    let mut mean = vec![0.0; frames.cols];
    if frames.rows == 0 {
        return mean;
    }
    frames.col_sum_acc(&mut mean);
    let n = frames.rows as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    mean
}

fn check_pair(zi: &[f64], zj: &[f64], y: u8, margin: f64) -> Result<()> {
    if zi.len() != zj.len() {
        return Err(Error::DimensionMismatch {
            expected: zi.len(),
            found: zj.len(),
        });
    }
    if !zi.iter().chain(zj).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("contrastive loss input".into()));
    }
    if y > 1 {
        return Err(Error::InvalidConfig(format!("pair label must be 0 or 1, got {y}")));
    }
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::InvalidConfig(format!("margin must be > 0, got {margin}")));
    }
    Ok(())
}

/// `(y/2)·d² + ((1−y)/2)·max(g − d, 0)²` with `d = ‖z_i − z_j‖`.
pub fn pairwise_contrastive_loss(zi: &[f64], zj: &[f64], y: u8, margin: f64) -> Result<f64> {
    check_pair(zi, zj, y, margin)?;
    let d = euclidean(zi, zj);
    Ok(if y == 1 {
        0.5 * d * d
    } else {
        let h = (margin - d).max(0.0);
        0.5 * h * h
    })
}

/// Gradient of [`pairwise_contrastive_loss`] with respect to `z_i`; the
/// gradient for `z_j` is its negation. A coincident negative pair has no
/// defined direction and yields zero with the flag set.
pub fn pairwise_contrastive_grad(zi: &[f64], zj: &[f64], y: u8, margin: f64) -> Result<(Vec<f64>, bool)> {
    check_pair(zi, zj, y, margin)?;
    let diff: Vec<f64> = zi.iter().zip(zj).map(|(a, b)| a - b).collect();
    if y == 1 {
        return Ok((diff, false));
    }
    let d = euclidean(zi, zj);
    if d >= margin {
        return Ok((vec![0.0; diff.len()], false));
    }
    if d <= crate::vcl::SINGULAR_EPS {
        return Ok((vec![0.0; diff.len()], true));
    }
    let coef = -(margin - d) / d;
    Ok((diff.iter().map(|v| coef * v).collect(), false))
}
