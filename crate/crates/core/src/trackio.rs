//! Face-track data model, the on-disk track container and the synthetic
//! track generator.
//!
//! A container is two files sharing a base path:
//!
//! * `<base>.manifest.json` holds `{video_id, dim, tracks: [...]}` where each
//!   entry carries `track_id`, `start_frame`, `end_frame`, `label` (nullable),
//!   `offset` and `count`. `offset`/`count` are measured in frames (rows).
//!   Generated sets add an optional `distractor_frames` list per track.
//! * `<base>.emb` is a headerless little-endian `f32` blob, row-major
//!   `frames × dim`.
//!
//! Embeddings are widened to `f64` on load and narrowed to `f32` on save, so a
//! trackset round-trips exactly whenever its values are `f32`-representable
//! (the generator guarantees this).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{l2_norm, Mat};

/// One face track: its frame span and one embedding per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTrack {
    pub track_id: u64,
    /// Inclusive frame span in the video timebase.
    pub start_frame: u64,
    pub end_frame: u64,
    /// Identity id, used for evaluation only.
    pub label: Option<u64>,
    /// `n × d`, one row per frame.
    pub embeddings: Mat,
    /// Positions (0-based within the track) of generator distractor frames.
    /// Diagnostic only; never read by training.
    pub distractor_frames: Vec<usize>,
}

impl EmbeddingTrack {
    pub fn new(
        track_id: u64,
        start_frame: u64,
        label: Option<u64>,
        embeddings: Mat,
    ) -> Result<Self> {
        if embeddings.rows == 0 {
            return Err(Error::InvalidTrack {
                track_id,
                message: "track has no frames".into(),
            });
        }
        let track = Self {
            track_id,
            start_frame,
            end_frame: start_frame + embeddings.rows as u64 - 1,
            label,
            embeddings,
            distractor_frames: Vec::new(),
        };
        track.validate()?;
        Ok(track)
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        self.embeddings.row(i)
    }

    fn validate(&self) -> Result<()> {
        if self.end_frame < self.start_frame {
            return Err(Error::InvalidTrack {
                track_id: self.track_id,
                message: format!("end_frame {} < start_frame {}", self.end_frame, self.start_frame),
            });
        }
        let span = (self.end_frame - self.start_frame + 1) as usize;
        if span != self.embeddings.rows {
            return Err(Error::InvalidTrack {
                track_id: self.track_id,
                message: format!("span covers {span} frames but {} embeddings given", self.embeddings.rows),
            });
        }
        if self.embeddings.cols == 0 {
            return Err(Error::InvalidTrack {
                track_id: self.track_id,
                message: "embedding dimension is 0".into(),
            });
        }
        if !self.embeddings.is_finite() {
            return Err(Error::NonFinite(format!("track {}", self.track_id)));
        }
        if let Some(&bad) = self.distractor_frames.iter().find(|&&f| f >= span) {
            return Err(Error::InvalidTrack {
                track_id: self.track_id,
                message: format!("distractor frame {bad} outside track"),
            });
        }
        Ok(())
    }
}

/// All tracks of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet {
    pub video_id: String,
    pub dim: usize,
    pub tracks: Vec<EmbeddingTrack>,
}

impl TrackSet {
    pub fn new(video_id: impl Into<String>, dim: usize, tracks: Vec<EmbeddingTrack>) -> Result<Self> {
        let set = Self {
            video_id: video_id.into(),
            dim,
            tracks,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("trackset dim must be >= 1".into()));
        }
        let mut seen = HashSet::with_capacity(self.tracks.len());
        for t in &self.tracks {
            if t.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: t.dim(),
                });
            }
            t.validate()?;
            if !seen.insert(t.track_id) {
                return Err(Error::DuplicateTrackId(t.track_id));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// Labels of all tracks, or `None` if any track is unlabeled.
    pub fn labels(&self) -> Option<Vec<u64>> {
        self.tracks.iter().map(|t| t.label).collect()
    }

    pub fn total_frames(&self) -> usize {
        self.tracks.iter().map(EmbeddingTrack::len).sum()
    }

    /// Copy with every frame scaled to unit L2 norm (zero frames are kept).
    pub fn l2_normalised(&self) -> TrackSet {
        let mut out = self.clone();
        for t in &mut out.tracks {
            for i in 0..t.embeddings.rows {
                let row = t.embeddings.row_mut(i);
                let n = l2_norm(row);
                if n > 0.0 {
                    row.iter_mut().for_each(|v| *v /= n);
                }
            }
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    video_id: String,
    dim: usize,
    tracks: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    track_id: u64,
    start_frame: u64,
    end_frame: u64,
    label: Option<u64>,
    offset: usize,
    count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    distractor_frames: Vec<usize>,
}

/// Manifest and blob paths for a container base path. Accepts the base itself
/// or either of the two file names.
pub fn container_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let base = s
        .strip_suffix(".manifest.json")
        .or_else(|| s.strip_suffix(".emb"))
        .unwrap_or(&s)
        .to_string();
    (
        PathBuf::from(format!("{base}.manifest.json")),
        PathBuf::from(format!("{base}.emb")),
    )
}

pub fn save_trackset(set: &TrackSet, path: &Path) -> Result<()> {
    if set.is_empty() {
        return Err(Error::EmptyTrackSet);
    }
    set.validate()?;
    let (manifest_path, blob_path) = container_paths(path);

    let mut entries = Vec::with_capacity(set.len());
    let mut blob = Vec::with_capacity(set.total_frames() * set.dim * 4);
    let mut offset = 0;
    for t in &set.tracks {
        entries.push(ManifestEntry {
            track_id: t.track_id,
            start_frame: t.start_frame,
            end_frame: t.end_frame,
            label: t.label,
            offset,
            count: t.len(),
            distractor_frames: t.distractor_frames.clone(),
        });
        offset += t.len();
        for &v in &t.embeddings.data {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        video_id: set.video_id.clone(),
        dim: set.dim,
        tracks: entries,
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    json.push('\n');

    if let Some(parent) = manifest_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    Ok(())
}

pub fn load_trackset(path: &Path) -> Result<TrackSet> {
    let (manifest_path, blob_path) = container_paths(path);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::CorruptManifest {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;

    if manifest.dim == 0 {
        return Err(Error::CorruptManifest {
            path: manifest_path,
            message: "dim must be >= 1".into(),
        });
    }
    if blob.len() % 4 != 0 {
        return Err(Error::CorruptManifest {
            path: blob_path,
            message: format!("blob length {} is not a multiple of 4", blob.len()),
        });
    }
    let dim = manifest.dim;
    let n_values = blob.len() / 4;
    let expected: usize = manifest.tracks.iter().map(|e| e.count * dim).sum();
    if expected != n_values {
        return Err(Error::DimensionMismatch {
            expected,
            found: n_values,
        });
    }
    let n_rows = n_values / dim;

    let mut seen = HashSet::new();
    let mut tracks = Vec::with_capacity(manifest.tracks.len());
    for e in manifest.tracks {
        if !seen.insert(e.track_id) {
            return Err(Error::DuplicateTrackId(e.track_id));
        }
        if e.count == 0 || e.offset + e.count > n_rows {
            return Err(Error::CorruptManifest {
                path: manifest_path.clone(),
                message: format!(
                    "track {} indexes rows {}..{} of {n_rows}",
                    e.track_id,
                    e.offset,
                    e.offset + e.count
                ),
            });
        }
        let bytes = &blob[e.offset * dim * 4..(e.offset + e.count) * dim * 4];
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let track = EmbeddingTrack {
            track_id: e.track_id,
            start_frame: e.start_frame,
            end_frame: e.end_frame,
            label: e.label,
            embeddings: Mat::from_vec(e.count, dim, data),
            distractor_frames: e.distractor_frames,
        };
        track.validate()?;
        tracks.push(track);
    }
    TrackSet::new(manifest.video_id, dim, tracks)
}

/// Parameters of the synthetic track generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub identities: usize,
    pub tracks_per_identity: usize,
    pub dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Per-dimension standard deviation of the per-frame Gaussian noise.
    pub noise: f64,
    pub distractor_prob: f64,
    /// Per-dimension standard deviation used for distractor frames.
    pub distractor_noise: f64,
    /// Requested fraction of all track pairs whose spans overlap.
    pub cooccurrence: f64,
    pub seed: u64,
    pub video_id: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            identities: 5,
            tracks_per_identity: 20,
            dim: 32,
            min_len: 5,
            max_len: 40,
            noise: 0.1,
            distractor_prob: 0.1,
            distractor_noise: 0.5,
            cooccurrence: 0.3,
            seed: 0,
            video_id: "synthetic".into(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.identities == 0 {
            return bad("identities must be >= 1");
        }
        if self.tracks_per_identity == 0 {
            return bad("tracks_per_identity must be >= 1");
        }
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("track length range must satisfy 1 <= min_len <= max_len");
        }
        for (name, v) in [("noise", self.noise), ("distractor_noise", self.distractor_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be a finite value >= 0"));
            }
        }
        for (name, v) in [
            ("distractor_prob", self.distractor_prob),
            ("cooccurrence", self.cooccurrence),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[inline]
fn to_f32_grid(v: f64) -> f64 {
    v as f32 as f64
}

/// Generates a trackset and returns it with the identity centroids used.
///
/// Tracks are grouped into "scenes": all tracks of one scene share a frame and
/// carry pairwise different labels, and scenes never overlap each other. Scene
/// sizes are chosen greedily so the number of overlapping pairs approaches
/// `cooccurrence × M(M−1)/2`; the count saturates once every scene holds one
/// track of each available identity.
pub fn generate_synthetic_with_centroids(spec: &SyntheticSpec) -> Result<(TrackSet, Vec<Vec<f64>>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let centroids: Vec<Vec<f64>> = (0..spec.identities)
        .map(|_| {
            let mut c: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = l2_norm(&c);
            if n > 0.0 {
                c.iter_mut().for_each(|v| *v /= n);
            } else {
                c[0] = 1.0;
            }
            c.into_iter().map(to_f32_grid).collect()
        })
        .collect();

    let m = spec.identities * spec.tracks_per_identity;
    let labels: Vec<usize> = (0..m).map(|i| i / spec.tracks_per_identity).collect();
    let lengths: Vec<usize> = (0..m)
        .map(|_| rng.gen_range(spec.min_len..=spec.max_len))
        .collect();

    let scenes = plan_scenes(&labels, spec.identities, spec.cooccurrence, &mut rng);

    let mut starts = vec![0u64; m];
    let mut cursor = 0u64;
    for scene in &scenes {
        let min_len = scene.iter().map(|&t| lengths[t]).min().unwrap_or(1);
        let mut scene_end = cursor;
        for &t in scene {
            let offset = rng.gen_range(0..min_len) as u64;
            starts[t] = cursor + offset;
            scene_end = scene_end.max(starts[t] + lengths[t] as u64);
        }
        cursor = scene_end + 1 + rng.gen_range(0..5u64);
    }

    let mut tracks = Vec::with_capacity(m);
    for t in 0..m {
        let centroid = &centroids[labels[t]];
        let mut data = Vec::with_capacity(lengths[t] * spec.dim);
        let mut distractors = Vec::new();
        for f in 0..lengths[t] {
            let is_distractor = spec.distractor_prob > 0.0 && rng.gen_bool(spec.distractor_prob);
            let scale = if is_distractor {
                distractors.push(f);
                spec.distractor_noise
            } else {
                spec.noise
            };
            for &c in centroid {
                let eps: f64 = rng.sample(StandardNormal);
                data.push(to_f32_grid(c + scale * eps));
            }
        }
        tracks.push(EmbeddingTrack {
            track_id: t as u64,
            start_frame: starts[t],
            end_frame: starts[t] + lengths[t] as u64 - 1,
            label: Some(labels[t] as u64),
            embeddings: Mat::from_vec(lengths[t], spec.dim, data),
            distractor_frames: distractors,
        });
    }
    let set = TrackSet::new(spec.video_id.clone(), spec.dim, tracks)?;
    Ok((set, centroids))
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<TrackSet> {
    generate_synthetic_with_centroids(spec).map(|(set, _)| set)
}

/// Partitions track indices into co-occurrence scenes, then shuffles scene
/// order. Every scene holds distinct labels.
fn plan_scenes(
    labels: &[usize],
    identities: usize,
    density: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let m = labels.len();
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); identities];
    for (t, &l) in labels.iter().enumerate() {
        pools[l].push(t);
    }
    for p in &mut pools {
        p.shuffle(rng);
    }
    let total_pairs = m * m.saturating_sub(1) / 2;
    let mut remaining = (density * total_pairs as f64).round() as usize;
    let mut scenes = Vec::new();
    while remaining > 0 {
        let available = pools.iter().filter(|p| !p.is_empty()).count();
        let mut size = available;
        while size >= 2 && size * (size - 1) / 2 > remaining {
            size -= 1;
        }
        if size < 2 {
            break;
        }
        // Largest pools first keeps later scenes feasible; ties by label.
        let mut order: Vec<usize> = (0..identities).filter(|&l| !pools[l].is_empty()).collect();
        order.sort_by(|&a, &b| pools[b].len().cmp(&pools[a].len()).then(a.cmp(&b)));
        let scene: Vec<usize> = order[..size]
            .iter()
            .map(|&l| pools[l].pop().expect("non-empty pool"))
            .collect();
        remaining -= size * (size - 1) / 2;
        scenes.push(scene);
    }
    for p in pools {
        scenes.extend(p.into_iter().map(|t| vec![t]));
    }
    scenes.shuffle(rng);
    scenes
}
