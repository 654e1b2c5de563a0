use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Contingency counts between two labelings of the same items.
struct Contingency {
    n: f64,
    joint: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    kp: usize,
    kt: usize,
}

fn dense_ids<T: Eq + Hash + Clone>(labels: &[T]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let ids = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(l.clone()).or_insert(next)
        })
        .collect();
    (ids, map.len())
}

fn contingency<A, B>(pred: &[A], truth: &[B]) -> Result<Contingency>
where
    A: Eq + Hash + Clone,
    B: Eq + Hash + Clone,
{
    if pred.len() != truth.len() {
        return Err(Error::UniverseMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidClustering("empty partition".into()));
    }
    let (p, kp) = dense_ids(pred);
    let (t, kt) = dense_ids(truth);
    let mut joint = vec![0.0; kp * kt];
    let mut left = vec![0.0; kp];
    let mut right = vec![0.0; kt];
    for (&i, &j) in p.iter().zip(&t) {
        joint[i * kt + j] += 1.0;
        left[i] += 1.0;
        right[j] += 1.0;
    }
    Ok(Contingency {
        n: pred.len() as f64,
        joint,
        left,
        right,
        kp,
        kt,
    })
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// `2·I(Y, P) / (H(P) + H(Y))` with natural logarithms; 1.0 when both
/// partitions are trivial.
pub fn nmi<A, B>(pred: &[A], truth: &[B]) -> Result<f64>
where
    A: Eq + Hash + Clone,
    B: Eq + Hash + Clone,
{
    let c = contingency(pred, truth)?;
    let (kp, kt) = (c.kp, c.kt);
    let hp = entropy(&c.left, c.n);
    let ht = entropy(&c.right, c.n);
    if hp + ht == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for i in 0..kp {
        for j in 0..kt {
            let nij = c.joint[i * kt + j];
            if nij > 0.0 {
                mi += nij / c.n * (c.n * nij / (c.left[i] * c.right[j])).ln();
            }
        }
    }
    Ok((2.0 * mi / (hp + ht)).clamp(0.0, 1.0))
}

/// Weighted clustering purity: the fraction of items that carry the majority
/// class of their cluster.
pub fn wcp<A, B>(pred: &[A], truth: &[B]) -> Result<f64>
where
    A: Eq + Hash + Clone,
    B: Eq + Hash + Clone,
{
    let c = contingency(pred, truth)?;
    let (kp, kt) = (c.kp, c.kt);
    let majority: f64 = (0..kp)
        .map(|i| c.joint[i * kt..(i + 1) * kt].iter().copied().fold(0.0, f64::max))
        .sum();
    Ok(majority / c.n)
}

/// `|k_pred − k_true|`.
pub fn c_dif(pred_k: usize, true_k: usize) -> usize {
    pred_k.abs_diff(true_k)
}

/// Number of distinct labels.
pub fn count_classes<T: Eq + Hash + Clone>(labels: &[T]) -> usize {
    dense_ids(labels).1
}
