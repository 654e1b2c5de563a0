use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::history::EpochRecord;
use super::loss::{grad_z, update_centre, vc_loss, Link};
use super::sampler::{gather_frames, ClipSampler};
use super::schedule::{onecycle_lr, Sgd};
use crate::clustereval::{clustered_sdbw, Linkage, Stop};
use crate::constraints::CannotLinkMatrix;
use crate::encoder::{backward_with_input, forward_eval, forward_train, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::par::{self, ExecMode};
use crate::params::ParamTensors;
use crate::trackio::{EmbeddingTrack, TrackSet};

/// Samples per gradient work unit. Partial gradients are summed per unit and
/// the units are then reduced in index order, so the result does not depend
/// on how many threads ran.
pub const GRAD_CHUNK: usize = 16;

/// Which parameters a training run returns.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CheckpointPolicy {
    /// Parameters after the last epoch.
    #[default]
    Final,
    /// Parameters of the epoch whose evaluation representations, clustered
    /// with `linkage`/`stop`, scored the lowest S-Dbw.
    BestSdbw { linkage: Linkage, stop: Stop },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub max_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub clip_cap: usize,
    pub attract_clips: usize,
    pub repel_clips: usize,
    pub margin: f64,
    /// `p` in the centre learning rate `η = p·ξ`.
    pub centre_lr_factor: f64,
    /// Epochs between full centre recomputes.
    pub recompute_interval: usize,
    pub seed: u64,
    pub checkpoint: CheckpointPolicy,
    pub sampler: ClipSampler,
    #[serde(skip)]
    pub exec: ExecMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 900,
            warmup_epochs: 400,
            max_lr: 5.1e-4,
            momentum: 0.9,
            weight_decay: 1e-5,
            batch_size: 512,
            clip_cap: 90,
            attract_clips: 10,
            repel_clips: 16,
            margin: 1.0,
            centre_lr_factor: 1.0,
            recompute_interval: 50,
            seed: 0,
            checkpoint: CheckpointPolicy::Final,
            sampler: ClipSampler::Consecutive,
            exec: ExecMode::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.recompute_interval == 0 {
            return bad("epochs, batch size and recompute interval must be positive");
        }
        if self.warmup_epochs == 0 || self.warmup_epochs >= self.epochs {
            return bad("warm-up epochs must lie in 1..epochs");
        }
        if self.clip_cap < 2 {
            return bad("clip length cap must be at least 2");
        }
        if self.attract_clips == 0 {
            return bad("attract clips per track must be positive");
        }
        for (name, v) in [
            ("max_lr", self.max_lr),
            ("margin", self.margin),
            ("centre_lr_factor", self.centre_lr_factor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive and finite")));
            }
        }
        for (name, v) in [("momentum", self.momentum), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative and finite")));
            }
        }
        Ok(())
    }
}

/// One centre per track plus the number of epochs since the last full
/// recompute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentreTable {
    pub centres: Vec<Vec<f64>>,
    pub since_recompute: usize,
}

impl CentreTable {
    /// Fresh table: every centre from the whole track.
    pub fn full(params: &EncoderParams, set: &TrackSet, mode: ExecMode) -> Result<Self> {
        let centres = par::map(mode, &set.tracks, |t| compute_centre_full(params, t))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            centres,
            since_recompute: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.centres.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centres.is_empty()
    }
}

/// Centre of a track: the head output for the un-sampled track.
pub fn compute_centre_full(params: &EncoderParams, track: &EmbeddingTrack) -> Result<Vec<f64>> {
    forward_train(params, &track.embeddings).map(|(z, _)| z)
}

/// Class-token representation of every track, in track order.
pub fn eval_representations(params: &EncoderParams, set: &TrackSet, mode: ExecMode) -> Result<Vec<Vec<f64>>> {
    par::map(mode, &set.tracks, |t| forward_eval(params, &t.embeddings))
        .into_iter()
        .collect()
}

/// Snapshot handed to the per-epoch observer.
pub struct EpochView<'a> {
    pub epoch: usize,
    pub params: &'a EncoderParams,
    pub centres: &'a CentreTable,
    pub recomputed: bool,
    pub record: &'a EpochRecord,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub centres: CentreTable,
    pub history: Vec<EpochRecord>,
    /// Epoch (1-based) of the returned parameters.
    pub selected_epoch: usize,
    /// Samples whose gradient was zeroed at the non-differentiable point.
    pub singular_samples: usize,
}

struct Sample {
    track: usize,
    frames: Vec<usize>,
    centre: usize,
    link: Link,
}

struct ChunkResult {
    grads: EncoderParams,
    loss: f64,
    z: Vec<Vec<f64>>,
    singular: usize,
}

fn epoch_samples<R: Rng>(
    set: &TrackSet,
    partners: &[Vec<usize>],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Vec<Sample> {
    let mut out = Vec::new();
    for (a, track) in set.tracks.iter().enumerate() {
        let n = track.len();
        for _ in 0..cfg.attract_clips {
            out.push(Sample {
                track: a,
                frames: cfg.sampler.sample(n, cfg.clip_cap, rng),
                centre: a,
                link: Link::Attract,
            });
        }
        if partners[a].is_empty() {
            continue;
        }
        for _ in 0..cfg.repel_clips {
            let b = partners[a][rng.gen_range(0..partners[a].len())];
            out.push(Sample {
                track: a,
                frames: cfg.sampler.sample(n, cfg.clip_cap, rng),
                centre: b,
                link: Link::Repel,
            });
        }
    }
    out.shuffle(rng);
    out
}

fn chunk_gradients(
    params: &EncoderParams,
    set: &TrackSet,
    centres: &CentreTable,
    samples: &[Sample],
    margin: f64,
) -> Result<ChunkResult> {
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let mut zs = Vec::with_capacity(samples.len());
    let mut singular = 0;
    for s in samples {
        let clip = gather_frames(&set.tracks[s.track].embeddings, &s.frames);
        let (z, cache) = forward_train(params, &clip)?;
        let c = &centres.centres[s.centre];
        loss += vc_loss(&z, c, s.link, margin)?;
        let g = grad_z(&z, c, s.link, margin)?;
        singular += g.singular as usize;
        backward_with_input(params, &cache, &g.grad, &mut grads)?;
        zs.push(z);
    }
    Ok(ChunkResult {
        grads,
        loss,
        z: zs,
        singular,
    })
}

fn numerical(epoch: usize, batch: usize, err: Error) -> Error {
    match err {
        Error::NonFinite(what) => Error::Numerical {
            epoch,
            batch,
            message: format!("non-finite {what}"),
        },
        other => other,
    }
}

/// Trains the encoder and the centres.
pub fn train(
    set: &TrackSet,
    links: &CannotLinkMatrix,
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_observer(set, links, encoder, cfg, |_| {})
}

/// [`train`], calling `observe` after every epoch.
pub fn train_with_observer<F>(
    set: &TrackSet,
    links: &CannotLinkMatrix,
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochView<'_>),
{
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
    let mode = cfg.exec;
    let partners: Vec<Vec<usize>> = (0..set.len()).map(|a| links.partners(a)).collect();
    let repel_tracks = partners.iter().filter(|p| !p.is_empty()).count();
    if repel_tracks == 0 {
        warn!("no cannot-links: training with attract samples only");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = EncoderParams::init(encoder, &mut rng)?;
    let mut centres = CentreTable::full(&params, set, mode)?;
    let mut sgd = Sgd::new(&params, cfg.momentum, cfg.weight_decay);

    let per_epoch = cfg.attract_clips * set.len() + cfg.repel_clips * repel_tracks;
    let batches = per_epoch.div_ceil(cfg.batch_size);
    let total_steps = batches * cfg.epochs;
    debug!("{per_epoch} samples in {batches} batches per epoch, {total_steps} steps");

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, EncoderParams, CentreTable, usize)> = None;
    let mut singular_samples = 0;
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        let samples = epoch_samples(set, &partners, cfg, &mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for (b, batch) in samples.chunks(cfg.batch_size).enumerate() {
            lr = onecycle_lr(step, total_steps, cfg.max_lr, cfg.warmup_epochs, cfg.epochs);
            let chunks: Vec<&[Sample]> = batch.chunks(GRAD_CHUNK).collect();
            let results = par::map(mode, &chunks, |c| chunk_gradients(&params, set, &centres, c, cfg.margin));
            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            let mut zs = Vec::with_capacity(batch.len());
            for r in results {
                let r = r.map_err(|e| numerical(epoch, b, e))?;
                grads.add_from(&r.grads);
                batch_loss += r.loss;
                singular_samples += r.singular;
                zs.extend(r.z);
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.all_finite() || !batch_loss.is_finite() {
                return Err(Error::Numerical {
                    epoch,
                    batch: b,
                    message: "non-finite loss or gradient".into(),
                });
            }
            sgd.step(&mut params, &grads, lr);
            if !params.all_finite() {
                return Err(Error::Numerical {
                    epoch,
                    batch: b,
                    message: "parameters became non-finite".into(),
                });
            }

            let eta = cfg.centre_lr_factor * lr;
            for (s, z) in batch.iter().zip(&zs) {
                let (next, _) = update_centre(&centres.centres[s.centre], z, s.link, eta, cfg.margin)
                    .map_err(|e| numerical(epoch, b, e))?;
                centres.centres[s.centre] = next;
            }
            epoch_loss += batch_loss;
            step += 1;
        }

        centres.since_recompute += 1;
        let recomputed = epoch % cfg.recompute_interval == 0;
        if recomputed {
            centres = CentreTable::full(&params, set, mode).map_err(|e| numerical(epoch, batches, e))?;
        }

        let sdbw = match cfg.checkpoint {
            CheckpointPolicy::Final => None,
            CheckpointPolicy::BestSdbw { linkage, stop } => {
                clustered_sdbw(&eval_representations(&params, set, mode)?, linkage, stop)?
            }
        };
        if let Some(v) = sdbw {
            if best.as_ref().is_none_or(|(b, ..)| v < *b) {
                best = Some((v, params.clone(), centres.clone(), epoch));
            }
        }
        let record = EpochRecord {
            epoch,
            mean_loss: epoch_loss / per_epoch as f64,
            lr,
            sdbw,
        };
        debug!("epoch {epoch}: loss {:.6} lr {:.3e}", record.mean_loss, lr);
        observe(&EpochView {
            epoch,
            params: &params,
            centres: &centres,
            recomputed,
            record: &record,
        });
        history.push(record);
    }

    if singular_samples > 0 {
        info!("{singular_samples} samples hit the non-differentiable point; their gradient was zeroed");
    }
    let (params, centres, selected_epoch) = match best {
        Some((_, p, c, e)) => (p, c, e),
        None => (params, centres, cfg.epochs),
    };
    Ok(TrainOutcome {
        params,
        centres,
        history,
        selected_epoch,
        singular_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::derive_cannot_links;
    use crate::linalg::Mat;

    fn two_track_set() -> TrackSet {
        let a = Mat::from_vec(6, 4, (0..24).map(|i| if i % 4 == 0 { 1.0 } else { 0.01 * i as f64 }).collect());
        let b = Mat::from_vec(6, 4, (0..24).map(|i| if i % 4 == 1 { 1.0 } else { -0.01 * i as f64 }).collect());
        TrackSet::new(
            "t",
            4,
            vec![
                EmbeddingTrack::new(0, 0, Some(0), a).unwrap(),
                EmbeddingTrack::new(1, 2, Some(1), b).unwrap(),
            ],
        )
        .unwrap()
    }

    fn tiny_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            warmup_epochs: 1,
            max_lr: 0.05,
            batch_size: 8,
            attract_clips: 4,
            repel_clips: 4,
            recompute_interval: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn sample_count_per_epoch() {
        let set = two_track_set();
        let links = derive_cannot_links(&set);
        let partners: Vec<_> = (0..2).map(|a| links.partners(a)).collect();
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(epoch_samples(&set, &partners, &cfg, &mut rng).len(), 2 * 10 + 2 * 16);
    }

    #[test]
    fn same_seed_same_run() {
        let set = two_track_set();
        let links = derive_cannot_links(&set);
        let enc = EncoderConfig::new(4, 1, 2, 2).unwrap();
        let a = train(&set, &links, &enc, &tiny_cfg(4)).unwrap();
        let b = train(&set, &links, &enc, &tiny_cfg(4)).unwrap();
        assert_eq!(a.params.flat(), b.params.flat());
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let set = two_track_set();
        let links = derive_cannot_links(&set);
        let enc = EncoderConfig::new(4, 1, 2, 2).unwrap();
        let seq = TrainConfig {
            exec: ExecMode::Sequential,
            batch_size: 40,
            ..tiny_cfg(3)
        };
        let parl = TrainConfig {
            exec: ExecMode::Parallel,
            ..seq.clone()
        };
        let a = train(&set, &links, &enc, &seq).unwrap();
        let b = train(&set, &links, &enc, &parl).unwrap();
        assert_eq!(a.params.flat(), b.params.flat());
        assert_eq!(a.centres, b.centres);
    }

    #[test]
    fn recompute_restores_full_centres() {
        let set = two_track_set();
        let links = derive_cannot_links(&set);
        let enc = EncoderConfig::new(4, 1, 2, 2).unwrap();
        let mut checked = 0;
        train_with_observer(&set, &links, &enc, &tiny_cfg(4), |v| {
            if v.recomputed {
                for (t, c) in set.tracks.iter().zip(&v.centres.centres) {
                    assert_eq!(&compute_centre_full(v.params, t).unwrap(), c);
                }
                checked += 1;
            }
        })
        .unwrap();
        assert_eq!(checked, 2);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = TrainConfig::default();
        c.warmup_epochs = c.epochs;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            clip_cap: 1,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
