//! Must-link / cannot-link supervision derived from track metadata.
//!
//! Must-links are frame pairs inside one track. Cannot-links join tracks
//! whose frame spans intersect; labels are never consulted.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};
use crate::trackio::TrackSet;

/// Symmetric binary co-occurrence matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CannotLinkMatrix {
    size: usize,
    bits: Vec<bool>,
}

impl CannotLinkMatrix {
    pub fn empty(size: usize) -> Self {
        Self {
            size,
            bits: vec![false; size * size],
        }
    }

    /// Sets `N_ab = N_ba = 1`. Diagonal requests are ignored.
    pub fn link(&mut self, a: usize, b: usize) {
        if a != b {
            self.bits[a * self.size + b] = true;
            self.bits[b * self.size + a] = true;
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> bool {
        self.bits[a * self.size + b]
    }

    /// Indices `b` with `N_ab = 1`, ascending.
    pub fn partners(&self, a: usize) -> Vec<usize> {
        (0..self.size).filter(|&b| self.get(a, b)).collect()
    }

    pub fn link_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count() / 2
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.size).all(|a| !self.get(a, a) && (0..a).all(|b| self.get(a, b) == self.get(b, a)))
    }
}

pub fn derive_cannot_links(set: &TrackSet) -> CannotLinkMatrix {
    let m = set.len();
    let mut n = CannotLinkMatrix::empty(m);
    // Sweep over spans sorted by start; only tracks still open can intersect.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by_key(|&i| (set.tracks[i].start_frame, i));
    let mut open: Vec<usize> = Vec::new();
    for &i in &order {
        let start = set.tracks[i].start_frame;
        open.retain(|&j| set.tracks[j].end_frame >= start);
        for &j in &open {
            n.link(i, j);
        }
        open.push(i);
    }
    n
}

/// A frame pair with its must-link (`y = 1`) or cannot-link (`y = 0`) flag.
/// Track fields are indices into the trackset; frame fields are 0-based
/// positions inside the track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConstraintPair {
    pub track_a: usize,
    pub frame_a: usize,
    pub track_b: usize,
    pub frame_b: usize,
    pub y: u8,
}

/// Draws `count_pos` must-link pairs uniformly from all within-track frame
/// pairs and `count_neg` cannot-link pairs uniformly from all frame pairs of
/// cannot-linked tracks. Positives come first in the returned list.
pub fn sample_pairs<R: Rng + ?Sized>(
    set: &TrackSet,
    n: &CannotLinkMatrix,
    rng: &mut R,
    count_pos: usize,
    count_neg: usize,
) -> Result<Vec<ConstraintPair>> {
    let mut out = Vec::with_capacity(count_pos + count_neg);

    if count_pos > 0 {
        let weights: Vec<u64> = set
            .tracks
            .iter()
            .map(|t| {
                let n = t.len() as u64;
                n * n.saturating_sub(1) / 2
            })
            .collect();
        let dist = WeightedIndex::new(&weights).map_err(|_| Error::NoMustLinks)?;
        for _ in 0..count_pos {
            let t = dist.sample(rng);
            let len = set.tracks[t].len();
            let i = rng.gen_range(0..len);
            let mut j = rng.gen_range(0..len - 1);
            if j >= i {
                j += 1;
            }
            out.push(ConstraintPair {
                track_a: t,
                frame_a: i.min(j),
                track_b: t,
                frame_b: i.max(j),
                y: 1,
            });
        }
    }

    if count_neg > 0 {
        let mut pairs = Vec::new();
        let mut weights = Vec::new();
        for a in 0..n.size() {
            for b in a + 1..n.size() {
                if n.get(a, b) {
                    pairs.push((a, b));
                    weights.push((set.tracks[a].len() * set.tracks[b].len()) as u64);
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::NoCannotLinks);
        }
        let dist = WeightedIndex::new(&weights).map_err(|_| Error::NoCannotLinks)?;
        for _ in 0..count_neg {
            let (a, b) = pairs[dist.sample(rng)];
            out.push(ConstraintPair {
                track_a: a,
                frame_a: rng.gen_range(0..set.tracks[a].len()),
                track_b: b,
                frame_b: rng.gen_range(0..set.tracks[b].len()),
                y: 0,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::trackio::EmbeddingTrack;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn track(id: u64, start: u64, end: u64) -> EmbeddingTrack {
        let n = (end - start + 1) as usize;
        EmbeddingTrack::new(id, start, None, Mat::zeros(n, 1)).unwrap()
    }

    fn set_of(spans: &[(u64, u64)]) -> TrackSet {
        let tracks = spans
            .iter()
            .enumerate()
            .map(|(i, &(s, e))| track(i as u64, s, e))
            .collect();
        TrackSet::new("v", 1, tracks).unwrap()
    }

    #[test]
    fn overlapping_and_disjoint_spans() {
        let n = derive_cannot_links(&set_of(&[(0, 10), (5, 12)]));
        assert!(n.get(0, 1) && n.get(1, 0));
        let n = derive_cannot_links(&set_of(&[(0, 4), (5, 9)]));
        assert!(!n.get(0, 1));
        // Touching at a single frame counts.
        let n = derive_cannot_links(&set_of(&[(0, 5), (5, 9)]));
        assert!(n.get(0, 1));
    }

    #[test]
    fn single_length_two_track_gives_unique_positive() {
        let set = set_of(&[(3, 4)]);
        let n = derive_cannot_links(&set);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pairs = sample_pairs(&set, &n, &mut rng, 1, 0).unwrap();
        assert_eq!(
            pairs,
            vec![ConstraintPair {
                track_a: 0,
                frame_a: 0,
                track_b: 0,
                frame_b: 1,
                y: 1
            }]
        );
    }

    #[test]
    fn empty_supports_are_errors() {
        let set = set_of(&[(0, 3), (10, 12)]);
        let n = derive_cannot_links(&set);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_pairs(&set, &n, &mut rng, 0, 5).unwrap_err();
        assert!(err.to_string().contains("no cannot-links available"));

        let singles = set_of(&[(0, 0), (0, 0)]);
        let n = derive_cannot_links(&singles);
        assert!(matches!(
            sample_pairs(&singles, &n, &mut rng, 3, 0),
            Err(Error::NoMustLinks)
        ));
        // Zero counts never fail.
        assert!(sample_pairs(&singles, &CannotLinkMatrix::empty(2), &mut rng, 0, 0)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn diagonal_links_ignored() {
        let mut n = CannotLinkMatrix::empty(3);
        n.link(1, 1);
        n.link(0, 2);
        assert!(n.is_symmetric());
        assert_eq!(n.link_count(), 1);
        assert_eq!(n.partners(2), vec![0]);
    }
}
