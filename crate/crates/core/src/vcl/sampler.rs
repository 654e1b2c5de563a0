//! Temporal augmentation: which frames of a track form a training clip.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Frames `start ..= start + extra` of a track, 1-indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClipSpan {
    pub start: usize,
    pub extra: usize,
}

impl ClipSpan {
    pub fn len(&self) -> usize {
        self.extra + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// 0-based half-open frame range.
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start - 1..self.start + self.extra
    }
}

/// Consecutive clip: `start` uniform on `1..n`, then `extra` uniform on
/// `1..=min(n − start, cap − 1)`. A single-frame track yields itself.
pub fn sample_clip_consecutive<R: Rng + ?Sized>(n: usize, cap: usize, rng: &mut R) -> ClipSpan {
    debug_assert!(n >= 1 && cap >= 2);
    if n == 1 {
        return ClipSpan { start: 1, extra: 0 };
    }
    let start = rng.gen_range(1..n);
    let max_extra = (n - start).min(cap.max(2) - 1);
    let extra = rng.gen_range(1..=max_extra);
    ClipSpan { start, extra }
}

/// `len` distinct frame indices (1-indexed, ascending) drawn uniformly
/// without replacement.
pub fn sample_clip_uniform<R: Rng + ?Sized>(n: usize, len: usize, rng: &mut R) -> Result<Vec<usize>> {
    if len == 0 || len > n {
        return Err(Error::InvalidConfig(format!(
            "uniform clip length {len} must lie in 1..={n}"
        )));
    }
    let mut idx: Vec<usize> = rand::seq::index::sample(rng, n, len)
        .into_iter()
        .map(|i| i + 1)
        .collect();
    idx.sort_unstable();
    Ok(idx)
}

/// Which temporal augmentation training uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipSampler {
    #[default]
    Consecutive,
    /// Random frame subset whose size is uniform on `min(2, n)..=min(n, cap)`.
    Uniform,
}

impl ClipSampler {
    /// 0-based frame indices of one sampled clip.
    pub fn sample<R: Rng + ?Sized>(self, n: usize, cap: usize, rng: &mut R) -> Vec<usize> {
        match self {
            ClipSampler::Consecutive => sample_clip_consecutive(n, cap, rng).range().collect(),
            ClipSampler::Uniform => {
                let hi = n.min(cap);
                let lo = n.min(2);
                let len = rng.gen_range(lo..=hi);
                sample_clip_uniform(n, len, rng)
                    .expect("length within bounds")
                    .into_iter()
                    .map(|i| i - 1)
                    .collect()
            }
        }
    }
}

/// Gathers the given rows of a track into a clip matrix.
pub fn gather_frames(track: &Mat, frames: &[usize]) -> Mat {
    let d = track.cols;
    let mut data = Vec::with_capacity(frames.len() * d);
    for &f in frames {
        data.extend_from_slice(track.row(f));
    }
    Mat::from_vec(frames.len(), d, data)
}
