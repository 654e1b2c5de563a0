use crate::error::{Error, Result};
use crate::linalg::{euclidean, l2_norm};

fn mean_of(points: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for p in points {
        for (a, &b) in m.iter_mut().zip(*p) {
            *a += b;
        }
    }
    let n = points.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Per-coordinate population variance.
fn variance_of(points: &[&[f64]], mean: &[f64]) -> Vec<f64> {
    let mut var = vec![0.0; mean.len()];
    for p in points {
        for ((v, &x), &m) in var.iter_mut().zip(*p).zip(mean) {
            *v += (x - m) * (x - m);
        }
    }
    let n = points.len() as f64;
    var.iter_mut().for_each(|v| *v /= n);
    var
}

/// The S-Dbw validity index (Halkidi & Vazirgiannis): intra-cluster scatter
/// plus inter-cluster density. Lower is better.
///
/// `labels[i]` is the cluster of `vectors[i]`; labels need not be dense.
pub fn sdbw(vectors: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if vectors.len() != labels.len() {
        return Err(Error::UniverseMismatch {
            left: vectors.len(),
            right: labels.len(),
        });
    }
    if vectors.is_empty() {
        return Err(Error::SdbwUndefined);
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: v.len(),
        });
    }

    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let c = ids.len();
    if c < 2 {
        return Err(Error::SdbwUndefined);
    }
    let members: Vec<Vec<&[f64]>> = ids
        .iter()
        .map(|&id| {
            labels
                .iter()
                .zip(vectors)
                .filter(|(&l, _)| l == id)
                .map(|(_, v)| v.as_slice())
                .collect()
        })
        .collect();

    let all: Vec<&[f64]> = vectors.iter().map(Vec::as_slice).collect();
    let global_mean = mean_of(&all, dim);
    let global_sigma = l2_norm(&variance_of(&all, &global_mean));

    let centroids: Vec<Vec<f64>> = members.iter().map(|m| mean_of(m, dim)).collect();
    let sigma_norms: Vec<f64> = members
        .iter()
        .zip(&centroids)
        .map(|(m, cen)| l2_norm(&variance_of(m, cen)))
        .collect();

    let scat = if global_sigma > 0.0 {
        sigma_norms.iter().sum::<f64>() / (c as f64 * global_sigma)
    } else {
        0.0
    };

    let stdev = sigma_norms.iter().sum::<f64>().sqrt() / c as f64;
    let density = |centre: &[f64], i: usize, j: usize| -> f64 {
        members[i]
            .iter()
            .chain(&members[j])
            .filter(|p| euclidean(p, centre) <= stdev)
            .count() as f64
    };

    let mut dens_bw = 0.0;
    for i in 0..c {
        for j in 0..c {
            if i == j {
                continue;
            }
            let mid: Vec<f64> = centroids[i]
                .iter()
                .zip(&centroids[j])
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            let di = density(&centroids[i], i, j);
            let dj = density(&centroids[j], i, j);
            let denom = di.max(dj);
            if denom > 0.0 {
                dens_bw += density(&mid, i, j) / denom;
            }
        }
    }
    dens_bw /= (c * (c - 1)) as f64;

    Ok(scat + dens_bw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> (Vec<Vec<f64>>, Vec<usize>) {
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![0.0, 0.1],
            vec![5.0, 5.0],
            vec![5.1, 5.0],
            vec![5.0, 5.1],
        ];
        (pts, vec![0, 0, 0, 1, 1, 1])
    }

    #[test]
    fn separated_beats_shuffled() {
        let (pts, labels) = blobs();
        let good = sdbw(&pts, &labels).unwrap();
        let bad = sdbw(&pts, &[0, 1, 0, 1, 0, 1]).unwrap();
        assert!(good < bad, "{good} vs {bad}");
    }

    #[test]
    fn duplicating_points_keeps_value() {
        let (pts, labels) = blobs();
        let a = sdbw(&pts, &labels).unwrap();
        let pts2: Vec<_> = pts.iter().chain(&pts).cloned().collect();
        let labels2: Vec<_> = labels.iter().chain(&labels).copied().collect();
        let b = sdbw(&pts2, &labels2).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn single_cluster_is_an_error() {
        let (pts, _) = blobs();
        let err = sdbw(&pts, &[3; 6]).unwrap_err();
        assert_eq!(err.to_string(), "S-Dbw undefined for k<2");
    }
}
