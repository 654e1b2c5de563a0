//! The `trackcentre` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use crate::baselines::{temporal_average, train_pairwise, PairwiseKind, PairwiseModel};
use crate::checkpoint::{Checkpoint, Method, Model};
use crate::clustereval::{evaluate, write_metrics, write_metrics_csv, Linkage, MetricsRow, Stop};
use crate::constraints::derive_cannot_links;
use crate::encoder::{attention_profile, EncoderConfig};
use crate::error::{Error, Result};
use crate::par::{self, ExecMode};
use crate::trackio::{generate_synthetic, load_trackset, save_trackset, SyntheticSpec, TrackSet};
use crate::vcl::{eval_representations, train, write_history_csv, CheckpointPolicy, ClipSampler, EpochRecord, TrainConfig};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "TRACKCENTRE_THREADS";

pub const RUN_MANIFEST: &str = "run.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.tcv";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Parser)]
#[command(name = "trackcentre", version, about = "Video-level face-track representations and clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labelled track set.
    Synth(SynthArgs),
    /// Train a representation model and write checkpoint, history and run manifest.
    Train(TrainArgs),
    /// Cluster track representations and write one metrics row.
    Eval(EvalArgs),
    /// Per-frame class-token attention of a transformer checkpoint.
    Attn(AttnArgs),
    /// Train and evaluate every method on one track set.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output container path; the manifest and the embedding blob share its stem.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of identities.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 20)]
    pub tracks_per_identity: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 5)]
    pub min_len: usize,
    #[arg(long, default_value_t = 40)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.1)]
    pub distractor_prob: f64,
    #[arg(long, default_value_t = 0.5)]
    pub distractor_noise: f64,
    /// Fraction of track pairs that overlap in time.
    #[arg(long, default_value_t = 0.3)]
    pub cooccurrence: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "synthetic")]
    pub video_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Final,
    BestSdbw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LinkageArg {
    Single,
    Complete,
    Average,
}

impl From<LinkageArg> for Linkage {
    fn from(l: LinkageArg) -> Self {
        match l {
            LinkageArg::Single => Linkage::Single,
            LinkageArg::Complete => Linkage::Complete,
            LinkageArg::Average => Linkage::Average,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Consecutive,
    Uniform,
}

/// `--known-k` xor `--threshold`.
#[derive(Debug, Clone, Args)]
pub struct StopArgs {
    /// Stop agglomeration at exactly this many clusters.
    #[arg(long, conflicts_with = "threshold")]
    pub known_k: Option<usize>,
    /// Keep merging while the merge distance is at most this value.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_enum, default_value_t = LinkageArg::Average)]
    pub linkage: LinkageArg,
}

impl StopArgs {
    fn stop(&self) -> Result<Option<Stop>> {
        match (self.known_k, self.threshold) {
            (Some(0), _) => Err(Error::Usage("--known-k must be at least 1".into())),
            (Some(k), None) => Ok(Some(Stop::KnownK(k))),
            (None, Some(t)) if t.is_nan() => Err(Error::Usage("--threshold must be a number".into())),
            (None, Some(t)) => Ok(Some(Stop::Threshold(t))),
            (None, None) => Ok(None),
            (Some(_), Some(_)) => Err(Error::Usage("--known-k and --threshold are exclusive".into())),
        }
    }

    fn required_stop(&self) -> Result<Stop> {
        self.stop()?
            .ok_or_else(|| Error::Usage("one of --known-k or --threshold is required".into()))
    }
}

/// Model and optimisation settings shared by `train` and `compare`.
#[derive(Debug, Clone, Args)]
pub struct TrainingArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Defaults to 4/9 of the epochs.
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub max_lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub clip_cap: Option<usize>,
    #[arg(long)]
    pub centre_lr_factor: Option<f64>,
    #[arg(long)]
    pub recompute_interval: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 16)]
    pub heads: usize,
    /// Feed-forward width; defaults to four times the embedding width.
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub head_dim: usize,
    #[arg(long)]
    pub positional_embedding: bool,
    #[arg(long, value_enum, default_value_t = SamplerArg::Consecutive)]
    pub sampler: SamplerArg,
    #[arg(long, value_enum, default_value_t = PolicyArg::Final)]
    pub checkpoint_policy: PolicyArg,
    /// L2-normalise every frame embedding before use.
    #[arg(long)]
    pub normalise: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Track container; optional when `--manifest` is given.
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    #[arg(long, default_value = "vc")]
    pub method: String,
    /// Output directory for checkpoint, history and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Re-run a previous run manifest; only `--out` is taken from the flags.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Clustering used to score S-Dbw under `--checkpoint-policy best-sdbw`.
    #[command(flatten)]
    pub stop: StopArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Method label; `avg` evaluates the raw temporal average.
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub stop: StopArgs,
    /// Metrics CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub normalise: bool,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Attention CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub normalise: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[command(flatten)]
    pub stop: StopArgs,
}

/// Everything needed to repeat a training run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub method: Method,
    pub tracks: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub normalise: bool,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::CorruptManifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self).expect("manifest serialises");
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

fn exec_mode() -> ExecMode {
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(1) => ExecMode::Sequential,
        Some(n) => {
            par::init_thread_pool(n);
            ExecMode::Parallel
        }
        None => ExecMode::Parallel,
    }
}

fn load_tracks(path: &Path, normalise: bool) -> Result<TrackSet> {
    let set = load_trackset(path)?;
    Ok(if normalise { set.l2_normalised() } else { set })
}

fn train_config(t: &TrainingArgs, stop: &StopArgs) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let epochs = t.epochs.unwrap_or(d.epochs);
    let warmup = t.warmup_epochs.unwrap_or_else(|| {
        if t.epochs.is_none() {
            d.warmup_epochs
        } else {
            (epochs * d.warmup_epochs / d.epochs).clamp(1, epochs.saturating_sub(1).max(1))
        }
    });
    let checkpoint = match t.checkpoint_policy {
        PolicyArg::Final => CheckpointPolicy::Final,
        PolicyArg::BestSdbw => CheckpointPolicy::BestSdbw {
            linkage: stop.linkage.into(),
            stop: stop.stop()?.ok_or_else(|| {
                Error::Usage("--checkpoint-policy best-sdbw needs --known-k or --threshold".into())
            })?,
        },
    };
    let cfg = TrainConfig {
        epochs,
        warmup_epochs: warmup,
        max_lr: t.max_lr.unwrap_or(d.max_lr),
        batch_size: t.batch_size.unwrap_or(d.batch_size),
        clip_cap: t.clip_cap.unwrap_or(d.clip_cap),
        centre_lr_factor: t.centre_lr_factor.unwrap_or(d.centre_lr_factor),
        recompute_interval: t.recompute_interval.unwrap_or(d.recompute_interval),
        seed: t.seed,
        checkpoint,
        sampler: match t.sampler {
            SamplerArg::Consecutive => ClipSampler::Consecutive,
            SamplerArg::Uniform => ClipSampler::Uniform,
        },
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

fn encoder_config(t: &TrainingArgs, dim: usize) -> Result<EncoderConfig> {
    let mut cfg = EncoderConfig::new(dim, t.layers, t.heads, t.head_dim)?;
    if let Some(h) = t.mlp_hidden {
        cfg = cfg.with_mlp_hidden(h)?;
    }
    cfg.use_positional_embedding = t.positional_embedding;
    Ok(cfg)
}

/// Artifacts of one training run.
pub struct TrainedRun {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Trains `manifest.method` on an already loaded track set.
pub fn run_training(manifest: &RunManifest, set: &TrackSet) -> Result<TrainedRun> {
    let links = derive_cannot_links(set);
    let mut cfg = manifest.train.clone();
    cfg.seed = manifest.seed;
    cfg.exec = exec_mode();
    let (checkpoint, history) = match manifest.method {
        Method::Avg => return Err(Error::Usage("avg requires no training".into())),
        Method::Vc => {
            let out = train(set, &links, &manifest.encoder, &cfg)?;
            let ck = Checkpoint {
                method: Method::Vc,
                model: Model::Encoder(out.params),
                centres: Some(out.centres.centres),
                selected_epoch: out.selected_epoch,
            };
            (ck, out.history)
        }
        Method::Ct | Method::Tsiam => {
            let kind = if manifest.method == Method::Ct {
                PairwiseKind::Transformer
            } else {
                PairwiseKind::Mlp
            };
            let out = train_pairwise(kind, set, &links, &manifest.encoder, &cfg)?;
            let ck = Checkpoint {
                method: manifest.method,
                model: out.model.into(),
                centres: None,
                selected_epoch: out.selected_epoch,
            };
            (ck, out.history)
        }
    };
    Ok(TrainedRun { checkpoint, history })
}

/// Representation of every track under a method, in track order.
pub fn representations(method: Method, checkpoint: Option<&Checkpoint>, set: &TrackSet) -> Result<Vec<Vec<f64>>> {
    let mode = exec_mode();
    if method == Method::Avg {
        return Ok(set.tracks.iter().map(|t| temporal_average(&t.embeddings)).collect());
    }
    let ck = checkpoint.ok_or_else(|| Error::Usage(format!("method {method} needs --checkpoint")))?;
    if ck.input_dim() != set.dim {
        return Err(Error::DimensionMismatch {
            expected: ck.input_dim(),
            found: set.dim,
        });
    }
    match &ck.model {
        Model::Encoder(p) => eval_representations(p, set, mode),
        Model::Mlp(p) => PairwiseModel::Mlp(p.clone()).representations(set, mode),
    }
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let spec = SyntheticSpec {
        identities: a.k,
        tracks_per_identity: a.tracks_per_identity,
        dim: a.dim,
        min_len: a.min_len,
        max_len: a.max_len,
        noise: a.noise,
        distractor_prob: a.distractor_prob,
        distractor_noise: a.distractor_noise,
        cooccurrence: a.cooccurrence,
        seed: a.seed,
        video_id: a.video_id,
    };
    let set = generate_synthetic(&spec)?;
    save_trackset(&set, &a.out)?;
    let k = set.labels().map_or(0, |l| crate::clustereval::count_classes(&l));
    writeln!(out, "M={} K={} dim={}", set.len(), k, set.dim).map_err(|e| Error::io("<stdout>", e))
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = match &a.manifest {
        Some(path) => RunManifest {
            out: a.out.clone(),
            ..RunManifest::load(path)?
        },
        None => {
            let method: Method = a.method.parse()?;
            if method == Method::Avg {
                return Err(Error::Usage("avg requires no training".into()));
            }
            let tracks = a
                .tracks
                .clone()
                .ok_or_else(|| Error::Usage("--tracks is required without --manifest".into()))?;
            let set = load_tracks(&tracks, a.training.normalise)?;
            RunManifest {
                method,
                tracks,
                out: a.out.clone(),
                seed: a.training.seed,
                normalise: a.training.normalise,
                encoder: encoder_config(&a.training, set.dim)?,
                train: train_config(&a.training, &a.stop)?,
            }
        }
    };
    fs::create_dir_all(&manifest.out).map_err(|e| Error::io(&manifest.out, e))?;
    manifest.save(&manifest.out.join(RUN_MANIFEST))?;
    let set = load_tracks(&manifest.tracks, manifest.normalise)?;
    info!("training {} on {} tracks", manifest.method, set.len());
    let run = run_training(&manifest, &set)?;
    run.checkpoint.save(&manifest.out.join(CHECKPOINT_FILE))?;
    write_history_csv(&run.history, &manifest.out.join(HISTORY_FILE))?;
    let last = run.history.last().map_or(f64::NAN, |r| r.mean_loss);
    writeln!(
        out,
        "method={} epochs={} selected_epoch={} final_loss={last:.6}",
        manifest.method,
        run.history.len(),
        run.checkpoint.selected_epoch
    )
    .map_err(|e| Error::io("<stdout>", e))
}

fn emit_rows(rows: &[MetricsRow], path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => write_metrics_csv(rows, p),
        None => write_metrics(rows, out),
    }
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let stop = a.stop.required_stop()?;
    let set = load_tracks(&a.tracks, a.normalise)?;
    let checkpoint = a.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let method = match (&a.method, &checkpoint) {
        (Some(m), _) => m.parse()?,
        (None, Some(ck)) => ck.method,
        (None, None) => return Err(Error::Usage("give --checkpoint or --method avg".into())),
    };
    let reps = representations(method, checkpoint.as_ref(), &set)?;
    let labels = set.labels();
    let (row, _) = evaluate(&set.video_id, method.as_str(), &reps, labels.as_deref(), a.stop.linkage.into(), stop)?;
    emit_rows(&[row], a.out.as_deref(), out)
}

/// One line of the attention report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub track_id: u64,
    /// Absolute frame number.
    pub frame: u64,
    pub score: f64,
    pub sigma: f64,
    /// 1 when the generator marked this frame as a distractor.
    pub distractor: u8,
}

pub fn attention_rows(ck: &Checkpoint, set: &TrackSet) -> Result<Vec<AttentionRow>> {
    let Model::Encoder(params) = &ck.model else {
        return Err(Error::Usage("attention needs a transformer checkpoint (vc or ct)".into()));
    };
    if params.config.model_dim != set.dim {
        return Err(Error::DimensionMismatch {
            expected: params.config.model_dim,
            found: set.dim,
        });
    }
    let profiles = par::map(exec_mode(), &set.tracks, |t| attention_profile(params, &t.embeddings))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(set.total_frames());
    for (t, p) in set.tracks.iter().zip(profiles) {
        for (i, &score) in p.scores.iter().enumerate() {
            rows.push(AttentionRow {
                track_id: t.track_id,
                frame: t.start_frame + i as u64,
                score,
                sigma: p.sigma,
                distractor: t.distractor_frames.contains(&i) as u8,
            });
        }
    }
    Ok(rows)
}

fn cmd_attn(a: AttnArgs, out: &mut dyn Write) -> Result<()> {
    let set = load_tracks(&a.tracks, a.normalise)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let rows = attention_rows(&ck, &set)?;
    let sink: Box<dyn Write + '_> = match &a.out {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => Box::new(out),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in &rows {
        w.serialize(r)
            .map_err(|e| Error::io("<attention>", std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io("<attention>", e))
}

/// Trains and scores avg, tsiam, ct and vc (in that order) on one set.
pub fn compare(set: &TrackSet, tracks: &Path, out: &Path, training: &TrainingArgs, stop: &StopArgs) -> Result<Vec<MetricsRow>> {
    let labels = set
        .labels()
        .ok_or_else(|| Error::Usage("compare needs a fully labelled track set".into()))?;
    let hac_stop = stop.required_stop()?;
    let train_cfg = train_config(training, stop)?;
    let encoder = encoder_config(training, set.dim)?;
    let mut rows = Vec::with_capacity(4);
    for method in Method::ALL {
        let checkpoint = if method == Method::Avg {
            None
        } else {
            let manifest = RunManifest {
                method,
                tracks: tracks.to_path_buf(),
                out: out.join(method.as_str()),
                seed: training.seed,
                normalise: training.normalise,
                encoder: encoder.clone(),
                train: train_cfg.clone(),
            };
            fs::create_dir_all(&manifest.out).map_err(|e| Error::io(&manifest.out, e))?;
            manifest.save(&manifest.out.join(RUN_MANIFEST))?;
            let run = run_training(&manifest, set)?;
            run.checkpoint.save(&manifest.out.join(CHECKPOINT_FILE))?;
            write_history_csv(&run.history, &manifest.out.join(HISTORY_FILE))?;
            Some(run.checkpoint)
        };
        let reps = representations(method, checkpoint.as_ref(), set)?;
        let (row, _) = evaluate(&set.video_id, method.as_str(), &reps, Some(&labels), stop.linkage.into(), hac_stop)?;
        info!("{method}: nmi {:?} wcp {:?}", row.nmi, row.wcp);
        rows.push(row);
    }
    Ok(rows)
}

fn cmd_compare(a: CompareArgs, out: &mut dyn Write) -> Result<()> {
    a.stop.required_stop()?;
    let set = load_tracks(&a.tracks, a.training.normalise)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let rows = compare(&set, &a.tracks, &a.out, &a.training, &a.stop)?;
    write_metrics_csv(&rows, &a.out.join(METRICS_FILE))?;
    write_metrics(&rows, out)
}

/// Runs one parsed command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Attn(a) => cmd_attn(a, out),
        Command::Compare(a) => cmd_compare(a, out),
    }
}

/// Process entry point; returns the exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}
