use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{pairwise_contrastive_grad, pairwise_contrastive_loss, SiameseMlpParams};
use crate::clustereval::clustered_sdbw;
use crate::constraints::{sample_pairs, CannotLinkMatrix, ConstraintPair};
use crate::encoder::{backward_with_input, forward_train, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::par::{self, ExecMode};
use crate::params::ParamTensors;
use crate::trackio::TrackSet;
use crate::vcl::{eval_representations, gather_frames, onecycle_lr, CheckpointPolicy, EpochRecord, Sgd, TrainConfig, GRAD_CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairwiseKind {
    /// Frame-level Siamese MLP.
    Mlp,
    /// Clip transformer trained on clip pairs.
    Transformer,
}

/// A model trained by [`train_pairwise`].
#[derive(Debug, Clone, PartialEq)]
pub enum PairwiseModel {
    Mlp(SiameseMlpParams),
    Transformer(EncoderParams),
}

impl PairwiseModel {
    /// Per-track vectors used for clustering: the mean frame projection for
    /// the MLP, the class-token state for the transformer.
    pub fn representations(&self, set: &TrackSet, mode: ExecMode) -> Result<Vec<Vec<f64>>> {
        match self {
            PairwiseModel::Mlp(p) => par::map(mode, &set.tracks, |t| p.track_representation(&t.embeddings))
                .into_iter()
                .collect(),
            PairwiseModel::Transformer(p) => eval_representations(p, set, mode),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        match self {
            PairwiseModel::Mlp(p) => p.flat(),
            PairwiseModel::Transformer(p) => p.flat(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PairwiseOutcome {
    pub model: PairwiseModel,
    pub history: Vec<EpochRecord>,
    pub selected_epoch: usize,
}

/// One training pair: frame indices of the two sides plus the link flag.
struct Pair {
    a: usize,
    frames_a: Vec<usize>,
    b: usize,
    frames_b: Vec<usize>,
    y: u8,
}

impl From<ConstraintPair> for Pair {
    fn from(p: ConstraintPair) -> Self {
        Pair {
            a: p.track_a,
            frames_a: vec![p.frame_a],
            b: p.track_b,
            frames_b: vec![p.frame_b],
            y: p.y,
        }
    }
}

fn frame_pairs<R: Rng>(
    set: &TrackSet,
    links: &CannotLinkMatrix,
    pos: usize,
    neg: usize,
    rng: &mut R,
) -> Result<Vec<Pair>> {
    let pos = if set.tracks.iter().any(|t| t.len() >= 2) { pos } else { 0 };
    let neg = if links.link_count() > 0 { neg } else { 0 };
    let mut pairs: Vec<Pair> = sample_pairs(set, links, rng, pos, neg)?
        .into_iter()
        .map(Pair::from)
        .collect();
    pairs.shuffle(rng);
    Ok(pairs)
}

fn clip_pairs<R: Rng>(set: &TrackSet, partners: &[Vec<usize>], cfg: &TrainConfig, rng: &mut R) -> Vec<Pair> {
    let mut out = Vec::new();
    for (a, track) in set.tracks.iter().enumerate() {
        let n = track.len();
        for _ in 0..cfg.attract_clips {
            out.push(Pair {
                a,
                frames_a: cfg.sampler.sample(n, cfg.clip_cap, rng),
                b: a,
                frames_b: cfg.sampler.sample(n, cfg.clip_cap, rng),
                y: 1,
            });
        }
        if partners[a].is_empty() {
            continue;
        }
        for _ in 0..cfg.repel_clips {
            let b = partners[a][rng.gen_range(0..partners[a].len())];
            out.push(Pair {
                a,
                frames_a: cfg.sampler.sample(n, cfg.clip_cap, rng),
                b,
                frames_b: cfg.sampler.sample(set.tracks[b].len(), cfg.clip_cap, rng),
                y: 0,
            });
        }
    }
    out.shuffle(rng);
    out
}

fn mlp_chunk(p: &SiameseMlpParams, set: &TrackSet, pairs: &[Pair], margin: f64) -> Result<(SiameseMlpParams, f64)> {
    let mut grads = p.zeros_like();
    let mut loss = 0.0;
    for pair in pairs {
        let x = Mat::from_rows(&[
            set.tracks[pair.a].frame(pair.frames_a[0]).to_vec(),
            set.tracks[pair.b].frame(pair.frames_b[0]).to_vec(),
        ]);
        let (out, cache) = p.forward(&x)?;
        loss += pairwise_contrastive_loss(out.row(0), out.row(1), pair.y, margin)?;
        let (g, _) = pairwise_contrastive_grad(out.row(0), out.row(1), pair.y, margin)?;
        let mut dout = g.clone();
        dout.extend(g.iter().map(|v| -v));
        p.backward(&cache, &Mat::from_vec(2, g.len(), dout), &mut grads);
    }
    Ok((grads, loss))
}

fn transformer_chunk(p: &EncoderParams, set: &TrackSet, pairs: &[Pair], margin: f64) -> Result<(EncoderParams, f64)> {
    let mut grads = p.zeros_like();
    let mut loss = 0.0;
    for pair in pairs {
        let ca = gather_frames(&set.tracks[pair.a].embeddings, &pair.frames_a);
        let cb = gather_frames(&set.tracks[pair.b].embeddings, &pair.frames_b);
        let (za, cache_a) = forward_train(p, &ca)?;
        let (zb, cache_b) = forward_train(p, &cb)?;
        loss += pairwise_contrastive_loss(&za, &zb, pair.y, margin)?;
        let (g, _) = pairwise_contrastive_grad(&za, &zb, pair.y, margin)?;
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        backward_with_input(p, &cache_a, &g, &mut grads)?;
        backward_with_input(p, &cache_b, &neg, &mut grads)?;
    }
    Ok((grads, loss))
}

/// Runs one optimisation epoch over `pairs`; returns the summed loss and the
/// learning rate of the last step.
#[allow(clippy::too_many_arguments)]
fn run_epoch<P, F>(
    params: &mut P,
    sgd: &mut Sgd,
    pairs: &[Pair],
    cfg: &TrainConfig,
    step: &mut usize,
    total_steps: usize,
    epoch: usize,
    chunk: F,
) -> Result<(f64, f64)>
where
    P: ParamTensors + Sync + Send,
    F: Fn(&P, &[Pair]) -> Result<(P, f64)> + Sync + Send,
{
    let mut epoch_loss = 0.0;
    let mut lr = 0.0;
    for (b, batch) in pairs.chunks(cfg.batch_size).enumerate() {
        lr = onecycle_lr(*step, total_steps, cfg.max_lr, cfg.warmup_epochs, cfg.epochs);
        let chunks: Vec<&[Pair]> = batch.chunks(GRAD_CHUNK).collect();
        let p: &P = params;
        let results = par::map(cfg.exec, &chunks, |c| chunk(p, c));
        let mut total: Option<P> = None;
        let mut batch_loss = 0.0;
        for r in results {
            let (g, l) = r.map_err(|e| match e {
                Error::NonFinite(what) => Error::Numerical {
                    epoch,
                    batch: b,
                    message: format!("non-finite {what}"),
                },
                other => other,
            })?;
            batch_loss += l;
            match &mut total {
                None => total = Some(g),
                Some(t) => t.add_from(&g),
            }
        }
        let mut grads = total.expect("non-empty batch");
        grads.scale(1.0 / batch.len() as f64);
        if !grads.all_finite() || !batch_loss.is_finite() {
            return Err(Error::Numerical {
                epoch,
                batch: b,
                message: "non-finite loss or gradient".into(),
            });
        }
        sgd.step(params, &grads, lr);
        epoch_loss += batch_loss;
        *step += 1;
    }
    Ok((epoch_loss, lr))
}

/// Contrastive training on must-link/cannot-link pairs with the same
/// optimiser, schedule and per-track sample budget as the centre method.
pub fn train_pairwise(
    kind: PairwiseKind,
    set: &TrackSet,
    links: &CannotLinkMatrix,
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<PairwiseOutcome> {
    cfg.validate()?;
    encoder.validate()?;
    set.validate()?;
    if set.dim != encoder.model_dim {
        return Err(Error::DimensionMismatch {
            expected: encoder.model_dim,
            found: set.dim,
        });
    }
    if links.size() != set.len() {
        return Err(Error::UniverseMismatch {
            left: links.size(),
            right: set.len(),
        });
    }
    let partners: Vec<Vec<usize>> = (0..set.len()).map(|a| links.partners(a)).collect();
    let repel_tracks = partners.iter().filter(|p| !p.is_empty()).count();
    if repel_tracks == 0 {
        warn!("no cannot-links: training with positive pairs only");
    }
    let n_pos = cfg.attract_clips * set.len();
    let n_neg = cfg.repel_clips * repel_tracks;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = match kind {
        PairwiseKind::Mlp => {
            let hidden = (encoder.model_dim / 2).max(1);
            PairwiseModel::Mlp(SiameseMlpParams::init(encoder.model_dim, hidden, encoder.head_dim, &mut rng)?)
        }
        PairwiseKind::Transformer => PairwiseModel::Transformer(EncoderParams::init(encoder, &mut rng)?),
    };
    let mut sgd = match &model {
        PairwiseModel::Mlp(p) => Sgd::new(p, cfg.momentum, cfg.weight_decay),
        PairwiseModel::Transformer(p) => Sgd::new(p, cfg.momentum, cfg.weight_decay),
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, PairwiseModel, usize)> = None;
    let mut step = 0;
    let mut total_steps = 0;

    for epoch in 1..=cfg.epochs {
        let pairs = match kind {
            PairwiseKind::Mlp => frame_pairs(set, links, n_pos, n_neg, &mut rng)?,
            PairwiseKind::Transformer => clip_pairs(set, &partners, cfg, &mut rng),
        };
        if pairs.is_empty() {
            return Err(Error::NoMustLinks);
        }
        if total_steps == 0 {
            total_steps = pairs.len().div_ceil(cfg.batch_size) * cfg.epochs;
            debug!("{} pairs per epoch, {total_steps} steps", pairs.len());
        }
        let (loss, lr) = match &mut model {
            PairwiseModel::Mlp(p) => run_epoch(p, &mut sgd, &pairs, cfg, &mut step, total_steps, epoch, |q, c| {
                mlp_chunk(q, set, c, cfg.margin)
            })?,
            PairwiseModel::Transformer(p) => {
                run_epoch(p, &mut sgd, &pairs, cfg, &mut step, total_steps, epoch, |q, c| {
                    transformer_chunk(q, set, c, cfg.margin)
                })?
            }
        };
        let sdbw = match cfg.checkpoint {
            CheckpointPolicy::Final => None,
            CheckpointPolicy::BestSdbw { linkage, stop } => {
                clustered_sdbw(&model.representations(set, cfg.exec)?, linkage, stop)?
            }
        };
        if let Some(v) = sdbw {
            if best.as_ref().is_none_or(|(b, ..)| v < *b) {
                best = Some((v, model.clone(), epoch));
            }
        }
        history.push(EpochRecord {
            epoch,
            mean_loss: loss / pairs.len() as f64,
            lr,
            sdbw,
        });
    }

    let (model, selected_epoch) = match best {
        Some((_, m, e)) => (m, e),
        None => (model, cfg.epochs),
    };
    Ok(PairwiseOutcome {
        model,
        history,
        selected_epoch,
    })
}
