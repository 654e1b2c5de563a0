//! Reference implementations and finite-difference harnesses shared by the
//! integration and acceptance tests. The references never call into the
//! library's numerical code.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackcentre::encoder::{backward, forward_train, EncoderConfig, EncoderParams};
use trackcentre::linalg::Mat;
use trackcentre::params::ParamTensors;
use trackcentre::trackio::{EmbeddingTrack, TrackSet};
use trackcentre::vcl::{grad_centre, grad_z, vc_loss, Link};

type Rows = Vec<Vec<f64>>;

fn mat_rows(m: &Mat) -> Rows {
    (0..m.rows)
        .map(|i| (0..m.cols).map(|j| m.data[i * m.cols + j]).collect())
        .collect()
}

fn linear(x: &[f64], w: &Mat, b: &[f64]) -> Vec<f64> {
    (0..w.cols)
        .map(|j| {
            let mut s = b[j];
            for (i, xi) in x.iter().enumerate() {
                s += xi * w.data[i * w.cols + j];
            }
            s
        })
        .collect()
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let s = (var + 1e-6).sqrt();
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / s * g[i] + b[i])
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Straight-line transformer: returns (class-token state, head output).
pub fn naive_encoder(p: &EncoderParams, frames: &Mat) -> (Vec<f64>, Vec<f64>) {
    let cfg = &p.config;
    let d = cfg.model_dim;
    let h = cfg.heads;
    let dh = d / h;
    let mut z: Rows = vec![p.class_token.clone()];
    z.extend(mat_rows(frames));
    if let Some(pos) = &p.positional {
        for (t, row) in z.iter_mut().enumerate() {
            for j in 0..d {
                row[j] += pos.data[t * d + j];
            }
        }
    }
    for layer in &p.layers {
        let ln: Rows = z.iter().map(|r| layer_norm(r, &layer.ln1_gain, &layer.ln1_bias)).collect();
        let q: Rows = ln.iter().map(|r| linear(r, &layer.w_q, &layer.b_q)).collect();
        let k: Rows = ln.iter().map(|r| linear(r, &layer.w_k, &layer.b_k)).collect();
        let v: Rows = ln.iter().map(|r| linear(r, &layer.w_v, &layer.b_v)).collect();
        let n = z.len();
        let mut concat = vec![vec![0.0; d]; n];
        for head in 0..h {
            let cols = head * dh..(head + 1) * dh;
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| {
                        cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                for j in 0..n {
                    for c in cols.clone() {
                        concat[i][c] += exps[j] / total * v[j][c];
                    }
                }
            }
        }
        let mid: Rows = (0..n)
            .map(|i| {
                let o = linear(&concat[i], &layer.w_o, &layer.b_o);
                o.iter().zip(&z[i]).map(|(a, b)| a + b).collect()
            })
            .collect();
        z = mid
            .iter()
            .map(|r| {
                let ln2 = layer_norm(r, &layer.ln2_gain, &layer.ln2_bias);
                let hid: Vec<f64> = linear(&ln2, &layer.w_ff1, &layer.b_ff1).into_iter().map(gelu).collect();
                let out = linear(&hid, &layer.w_ff2, &layer.b_ff2);
                out.iter().zip(r).map(|(a, b)| a + b).collect()
            })
            .collect();
    }
    let cls = z[0].clone();
    let head = linear(&layer_norm(&cls, &p.head.ln_gain, &p.head.ln_bias), &p.head.w, &p.head.b);
    (cls, head)
}

/// Cannot-links by explicit frame-set intersection.
pub fn brute_force_cannot_links(set: &TrackSet) -> Vec<Vec<bool>> {
    let frames: Vec<BTreeSet<u64>> = set
        .tracks
        .iter()
        .map(|t| (t.start_frame..=t.end_frame).collect())
        .collect();
    let m = set.len();
    let mut out = vec![vec![false; m]; m];
    for a in 0..m {
        for b in 0..m {
            out[a][b] = a != b && !frames[a].is_disjoint(&frames[b]);
        }
    }
    out
}

/// Random trackset with short random spans on a small timeline so that
/// overlaps, touching ends and nesting all occur.
pub fn random_trackset<R: Rng>(rng: &mut R, max_tracks: usize, dim: usize) -> TrackSet {
    let m = rng.gen_range(1..=max_tracks);
    let horizon = rng.gen_range(5..=(4 * m as u64).max(6));
    let tracks = (0..m)
        .map(|i| {
            let len = rng.gen_range(1..=8usize);
            let start = rng.gen_range(0..horizon);
            let data = (0..len * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            EmbeddingTrack::new(i as u64 * 3 + 1, start, Some(rng.gen_range(0..4)), Mat::from_vec(len, dim, data))
                .unwrap()
        })
        .collect();
    TrackSet::new("random", dim, tracks).unwrap()
}

/// NMI and WCP from an explicitly built contingency table.
pub fn contingency_nmi_wcp(pred: &[usize], truth: &[usize]) -> (f64, f64) {
    let n = pred.len() as f64;
    let mut table: HashMap<(usize, usize), f64> = HashMap::new();
    let mut rows: HashMap<usize, f64> = HashMap::new();
    let mut cols: HashMap<usize, f64> = HashMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *table.entry((p, t)).or_default() += 1.0;
        *rows.entry(p).or_default() += 1.0;
        *cols.entry(t).or_default() += 1.0;
    }
    let h = |m: &HashMap<usize, f64>| -> f64 { m.values().map(|&c| -(c / n) * (c / n).ln()).sum() };
    let (hp, ht) = (h(&rows), h(&cols));
    let mut mi = 0.0;
    for (&(p, t), &c) in &table {
        mi += (c / n) * ((c / n) / ((rows[&p] / n) * (cols[&t] / n))).ln();
    }
    let nmi = if hp + ht == 0.0 { 1.0 } else { 2.0 * mi / (hp + ht) };
    let mut wcp = 0.0;
    for &p in rows.keys() {
        let best = table
            .iter()
            .filter(|((pp, _), _)| *pp == p)
            .map(|(_, &c)| c)
            .fold(0.0, f64::max);
        wcp += best;
    }
    (nmi, wcp / n)
}

/// Relative error with an absolute floor.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Random point at distance `dist` from `c`.
fn at_distance<R: Rng>(rng: &mut R, c: &[f64], dist: f64) -> Vec<f64> {
    let (dir, n) = loop {
        let dir: Vec<f64> = c.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 {
            break (dir, n);
        }
    };
    c.iter().zip(&dir).map(|(ci, di)| ci + dist * di / n).collect()
}

/// Outcome of a finite-difference sweep over loss instances.
pub struct LossFdReport {
    pub max_rel_err: f64,
    pub active: usize,
    pub inactive: usize,
}

/// Central differences of the centre loss with respect to both `z` and `c`
/// on random instances kept away from the hinge and the zero-distance point.
pub fn vc_loss_fd(instances: usize, seed: u64) -> LossFdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut report = LossFdReport {
        max_rel_err: 0.0,
        active: 0,
        inactive: 0,
    };
    for i in 0..instances {
        let k = rng.gen_range(1..=6);
        let margin = rng.gen_range(0.5..2.0);
        let link = if i % 2 == 0 { Link::Attract } else { Link::Repel };
        let c: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let inactive = link == Link::Repel && rng.gen_bool(0.4);
        let dist = if inactive {
            rng.gen_range(1.05..2.0) * margin
        } else {
            rng.gen_range(0.05..0.95) * margin
        };
        let z = at_distance(&mut rng, &c, dist);
        if inactive {
            report.inactive += 1;
        } else {
            report.active += 1;
        }
        let gz = grad_z(&z, &c, link, margin).unwrap().grad;
        let gc = grad_centre(&c, &z, link, margin).unwrap().grad;
        for j in 0..k {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[j] += h;
            zm[j] -= h;
            let fd = (vc_loss(&zp, &c, link, margin).unwrap() - vc_loss(&zm, &c, link, margin).unwrap()) / (2.0 * h);
            report.max_rel_err = report.max_rel_err.max(rel_err(gz[j], fd, 1e-9));
            let (mut cp, mut cm) = (c.clone(), c.clone());
            cp[j] += h;
            cm[j] -= h;
            let fd = (vc_loss(&z, &cp, link, margin).unwrap() - vc_loss(&z, &cm, link, margin).unwrap()) / (2.0 * h);
            report.max_rel_err = report.max_rel_err.max(rel_err(gc[j], fd, 1e-9));
        }
    }
    report
}

/// Central differences (step 1e-5) of `vc_loss(f(clip), c)` with respect to
/// every encoder parameter, on `configs` random tiny encoders of width 4..=16.
/// Relative errors use a floor of 1e-3 on the gradient magnitude.
pub fn encoder_vc_fd(configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for case in 0..configs {
        let heads = [1, 2, 4][case % 3];
        let d = heads * rng.gen_range((4 / heads).max(1)..=16 / heads);
        let layers = 1 + case % 2;
        let cfg = EncoderConfig::new(d, layers, heads, rng.gen_range(1..=3))
            .unwrap()
            .with_mlp_hidden(rng.gen_range(1..=2 * d))
            .unwrap();
        let mut params = EncoderParams::init(&cfg, &mut rng).unwrap();
        for t in params.tensors_mut() {
            for v in t.data.iter_mut() {
                *v += rng.gen_range(-0.2..0.2);
            }
        }
        let n = rng.gen_range(1..=6);
        let clip = Mat::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let margin = 1.0;
        let (z, cache) = forward_train(&params, &clip).unwrap();
        let link = if case % 2 == 0 { Link::Attract } else { Link::Repel };
        let dist = rng.gen_range(0.3..0.7);
        let c = at_distance(&mut rng, &z, dist);
        let gz = grad_z(&z, &c, link, margin).unwrap().grad;
        let analytic = backward(&params, &cache, &gz).unwrap().flat();
        let objective = |p: &EncoderParams| vc_loss(&forward_train(p, &clip).unwrap().0, &c, link, margin).unwrap();
        let mut probe = params.clone();
        let mut idx = 0;
        for t in 0..probe.tensors().len() {
            for k in 0..probe.tensors()[t].data.len() {
                let orig = probe.tensors()[t].data[k];
                probe.tensors_mut()[t].data[k] = orig + h;
                let fp = objective(&probe);
                probe.tensors_mut()[t].data[k] = orig - h;
                let fm = objective(&probe);
                probe.tensors_mut()[t].data[k] = orig;
                worst = worst.max(rel_err(analytic[idx], (fp - fm) / (2.0 * h), 1e-3));
                idx += 1;
            }
        }
    }
    worst
}
