mod common;

use common::contingency_nmi_wcp;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackcentre::clustereval::{hac, nmi, sdbw, wcp, Linkage, Stop};

fn random_partition(rng: &mut ChaCha8Rng, m: usize) -> Vec<usize> {
    let k = rng.gen_range(1..=m);
    (0..m).map(|_| rng.gen_range(0..k)).collect()
}

#[test]
fn nmi_and_wcp_match_contingency_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..500 {
        let m = rng.gen_range(1..=50);
        let pred = random_partition(&mut rng, m);
        let truth = random_partition(&mut rng, m);
        let (want_nmi, want_wcp) = contingency_nmi_wcp(&pred, &truth);
        assert!((nmi(&pred, &truth).unwrap() - want_nmi).abs() <= 1e-12);
        assert!((wcp(&pred, &truth).unwrap() - want_wcp).abs() <= 1e-12);
    }
}

#[test]
fn nmi_is_symmetric_and_relabel_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..200 {
        let m = rng.gen_range(2..=40);
        let a = random_partition(&mut rng, m);
        let b = random_partition(&mut rng, m);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        let renamed: Vec<String> = a.iter().map(|&l| format!("id{}", perm[l])).collect();
        let base = nmi(&a, &b).unwrap();
        assert!((base - nmi(&b, &a).unwrap()).abs() <= 1e-12);
        assert!((base - nmi(&renamed, &b).unwrap()).abs() <= 1e-12);
        assert!((wcp(&a, &b).unwrap() - wcp(&renamed, &b).unwrap()).abs() <= 1e-12);
    }
}

/// Agglomeration that recomputes every cluster distance from the points.
fn naive_hac(points: &[Vec<f64>], linkage: Linkage, k: usize) -> (Vec<Vec<usize>>, Vec<f64>) {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    let mut heights = Vec::new();
    while clusters.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let pair: Vec<f64> = clusters[i]
                    .iter()
                    .flat_map(|&a| clusters[j].iter().map(move |&b| (a, b)))
                    .map(|(a, b)| d(&points[a], &points[b]))
                    .collect();
                let h = match linkage {
                    Linkage::Single => pair.iter().cloned().fold(f64::INFINITY, f64::min),
                    Linkage::Complete => pair.iter().cloned().fold(0.0, f64::max),
                    Linkage::Average => pair.iter().sum::<f64>() / pair.len() as f64,
                };
                if h < best.0 {
                    best = (h, i, j);
                }
            }
        }
        let merged = clusters.remove(best.2);
        clusters[best.1].extend(merged);
        clusters[best.1].sort();
        heights.push(best.0);
    }
    clusters.sort();
    (clusters, heights)
}

#[test]
fn hac_matches_naive_agglomeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for case in 0..60 {
        let linkage = [Linkage::Single, Linkage::Complete, Linkage::Average][case % 3];
        let m = rng.gen_range(2..=25);
        let points: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let k = rng.gen_range(1..=m);
        let got = hac(&points, linkage, Stop::KnownK(k)).unwrap();
        let (want, heights) = naive_hac(&points, linkage, k);
        let mut clusters = got.clusters();
        clusters.sort();
        assert_eq!(clusters, want, "{linkage:?} m={m} k={k}");
        for (merge, h) in got.merges.iter().zip(&heights) {
            assert!((merge.height - h).abs() <= 1e-12);
        }
    }
}

#[test]
fn four_point_average_linkage_by_hand() {
    // Pairs (0,1) and (2,3) merge at 1 and 2; the final average-linkage
    // height is the mean of the four cross distances.
    let pts = vec![vec![0.0], vec![1.0], vec![10.0], vec![12.0]];
    let a = hac(&pts, Linkage::Average, Stop::KnownK(1)).unwrap();
    let heights: Vec<f64> = a.merges.iter().map(|m| m.height).collect();
    assert_eq!(heights, vec![1.0, 2.0, (10.0 + 12.0 + 9.0 + 11.0) / 4.0]);
}

#[test]
fn sdbw_ignores_duplicated_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for c in 0..3 {
        for _ in 0..8 {
            pts.push(vec![c as f64 * 4.0 + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            labels.push(c);
        }
    }
    let base = sdbw(&pts, &labels).unwrap();
    let doubled: Vec<Vec<f64>> = pts.iter().chain(&pts).cloned().collect();
    let doubled_labels: Vec<usize> = labels.iter().chain(&labels).copied().collect();
    assert!((sdbw(&doubled, &doubled_labels).unwrap() - base).abs() <= 1e-12);
}

fn points_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 2), 1..30)
}

fn linkage_strategy() -> impl Strategy<Value = Linkage> {
    prop_oneof![Just(Linkage::Single), Just(Linkage::Complete), Just(Linkage::Average)]
}

proptest! {
    #[test]
    fn known_k_gives_exactly_k(points in points_strategy(), linkage in linkage_strategy()) {
        for k in 1..=points.len() {
            let a = hac(&points, linkage, Stop::KnownK(k)).unwrap();
            prop_assert_eq!(a.k, k);
            prop_assert_eq!(a.clusters().iter().filter(|c| !c.is_empty()).count(), k);
        }
    }

    #[test]
    fn merge_heights_never_decrease(points in points_strategy(), linkage in linkage_strategy()) {
        let a = hac(&points, linkage, Stop::KnownK(1)).unwrap();
        for w in a.merges.windows(2) {
            prop_assert!(w[0].height <= w[1].height);
        }
    }

    #[test]
    fn threshold_count_is_monotone(
        points in points_strategy(),
        linkage in linkage_strategy(),
        mut ts in prop::collection::vec(0.0..8.0f64, 2..8),
    ) {
        ts.sort_by(f64::total_cmp);
        let ks: Vec<usize> = ts
            .iter()
            .map(|&t| hac(&points, linkage, Stop::Threshold(t)).unwrap().k)
            .collect();
        for w in ks.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
    }
}
