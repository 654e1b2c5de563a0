use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::euclidean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
}

impl std::str::FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(Error::Usage(format!("unknown linkage '{other}'"))),
        }
    }
}

/// When agglomeration stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stop {
    /// Stop once exactly `k` clusters remain.
    KnownK(usize),
    /// Keep merging while the next merge height is `<= t`.
    Threshold(f64),
}

/// One agglomeration step. `a < b` are the representative (smallest) input
/// indices of the two merged clusters; the merged cluster keeps `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

/// Flat clustering of the input vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster label per input vector, `0..k` numbered by first appearance.
    pub labels: Vec<usize>,
    pub k: usize,
    pub merges: Vec<Merge>,
}

impl ClusterAssignment {
    /// Members of each cluster, in label order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

#[inline]
fn key_less(a: (f64, usize, usize), b: (f64, usize, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && (a.1, a.2) < (b.1, b.2))
}

/// Agglomerative clustering with Euclidean distances and Lance–Williams
/// updates. Ties between equal merge heights go to the lexicographically
/// smallest pair of cluster representatives.
pub fn hac(vectors: &[Vec<f64>], linkage: Linkage, stop: Stop) -> Result<ClusterAssignment> {
    let m = vectors.len();
    if m == 0 {
        return Err(Error::InvalidClustering("no vectors to cluster".into()));
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: v.len(),
        });
    }
    let target_k = match stop {
        Stop::KnownK(k) if k == 0 || k > m => {
            return Err(Error::InvalidClustering(format!(
                "known k={k} must lie in 1..={m}"
            )))
        }
        Stop::KnownK(k) => k,
        Stop::Threshold(t) if t.is_nan() => {
            return Err(Error::InvalidClustering("threshold is NaN".into()))
        }
        Stop::Threshold(_) => 1,
    };

    let mut dist = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let d = euclidean(&vectors[i], &vectors[j]);
            dist[i * m + j] = d;
            dist[j * m + i] = d;
        }
    }
    let mut active = vec![true; m];
    let mut size = vec![1usize; m];
    let mut parent: Vec<usize> = (0..m).collect();

    // Nearest active neighbour per active cluster, by (distance, index).
    let mut nn = vec![usize::MAX; m];
    let mut nn_d = vec![f64::INFINITY; m];
    let rescan = |i: usize, active: &[bool], dist: &[f64], nn: &mut [usize], nn_d: &mut [f64]| {
        nn[i] = usize::MAX;
        nn_d[i] = f64::INFINITY;
        for j in 0..m {
            if j != i && active[j] && (nn[i] == usize::MAX || dist[i * m + j] < nn_d[i]) {
                nn[i] = j;
                nn_d[i] = dist[i * m + j];
            }
        }
    };
    for i in 0..m {
        rescan(i, &active, &dist, &mut nn, &mut nn_d);
    }

    let mut merges = Vec::new();
    let mut clusters = m;
    while clusters > target_k {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in (0..m).filter(|&i| active[i]) {
            let j = nn[i];
            let cand = (nn_d[i], i.min(j), i.max(j));
            if best.is_none_or(|b| key_less(cand, b)) {
                best = Some(cand);
            }
        }
        let (height, a, b) = best.expect("at least two active clusters");
        if let Stop::Threshold(t) = stop {
            if height > t {
                break;
            }
        }

        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in (0..m).filter(|&k| active[k] && k != a && k != b) {
            let (dka, dkb) = (dist[k * m + a], dist[k * m + b]);
            let d = match linkage {
                Linkage::Single => dka.min(dkb),
                Linkage::Complete => dka.max(dkb),
                Linkage::Average => (na * dka + nb * dkb) / (na + nb),
            };
            dist[k * m + a] = d;
            dist[a * m + k] = d;
        }
        active[b] = false;
        size[a] += size[b];
        parent[b] = a;
        clusters -= 1;
        merges.push(Merge {
            a,
            b,
            height,
            size: size[a],
        });

        rescan(a, &active, &dist, &mut nn, &mut nn_d);
        for k in (0..m).filter(|&k| active[k] && k != a) {
            if nn[k] == a || nn[k] == b {
                rescan(k, &active, &dist, &mut nn, &mut nn_d);
            } else if key_less((dist[k * m + a], a, 0), (nn_d[k], nn[k], 0)) {
                nn[k] = a;
                nn_d[k] = dist[k * m + a];
            }
        }
    }

    let root = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    let mut label_of_root = vec![usize::MAX; m];
    let mut labels = Vec::with_capacity(m);
    let mut k = 0;
    for i in 0..m {
        let r = root(i);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = k;
            k += 1;
        }
        labels.push(label_of_root[r]);
    }
    Ok(ClusterAssignment { labels, k, merges })
}
