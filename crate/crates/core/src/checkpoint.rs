//! Self-describing model container.
//!
//! Layout: the magic `TCV1`, a little-endian `u32` header length, a JSON
//! header naming the model kind, its configuration and every tensor's name
//! and shape, then all tensor values as little-endian `f64` in header order.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{PairwiseModel, SiameseMlpParams};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::params::ParamTensors;

pub const MAGIC: &[u8; 4] = b"TCV1";

/// Representation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Temporal average of the input embeddings, no training.
    Avg,
    /// Frame-level Siamese MLP trained on constraint pairs.
    Tsiam,
    /// Clip transformer trained on constraint pairs.
    Ct,
    /// Clip transformer trained against video centres.
    Vc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Avg, Method::Tsiam, Method::Ct, Method::Vc];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Avg => "avg",
            Method::Tsiam => "tsiam",
            Method::Ct => "ct",
            Method::Vc => "vc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown method '{s}' (expected vc, ct, tsiam or avg)")))
    }
}

/// The trained model stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Encoder(EncoderParams),
    Mlp(SiameseMlpParams),
}

impl From<PairwiseModel> for Model {
    fn from(m: PairwiseModel) -> Self {
        match m {
            PairwiseModel::Mlp(p) => Model::Mlp(p),
            PairwiseModel::Transformer(p) => Model::Encoder(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub method: Method,
    pub model: Model,
    /// Video centres, one row per track (centre-trained models only).
    pub centres: Option<Vec<Vec<f64>>>,
    pub selected_epoch: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelHeader {
    Encoder { config: EncoderConfig },
    Mlp { input: usize, hidden: usize, output: usize },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    method: Method,
    selected_epoch: usize,
    model: ModelHeader,
    tensors: Vec<TensorEntry>,
}

fn model_tensors(model: &Model) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let tensors = match model {
        Model::Encoder(p) => p.tensors(),
        Model::Mlp(p) => p.tensors(),
    };
    tensors
        .into_iter()
        .map(|t| (t.name, t.shape, t.data.to_vec()))
        .collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = model_tensors(&self.model);
        if let Some(c) = &self.centres {
            let cols = c.first().map_or(0, Vec::len);
            if c.iter().any(|r| r.len() != cols) {
                return Err(Error::CorruptCheckpoint("ragged centre table".into()));
            }
            tensors.push(("centres".into(), vec![c.len(), cols], c.concat()));
        }
        let header = Header {
            method: self.method,
            selected_epoch: self.selected_epoch,
            model: match &self.model {
                Model::Encoder(p) => ModelHeader::Encoder {
                    config: p.config.clone(),
                },
                Model::Mlp(p) => ModelHeader::Mlp {
                    input: p.input_dim(),
                    hidden: p.hidden_dim(),
                    output: p.output_dim(),
                },
            },
            tensors: tensors
                .iter()
                .map(|(name, shape, _)| TensorEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let len = u32::try_from(json.len()).map_err(|_| Error::CorruptCheckpoint("header too large".into()))?;
        let n_values: usize = tensors.iter().map(|t| t.2.len()).sum();
        let mut out = Vec::with_capacity(8 + json.len() + 8 * n_values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, data) in &tensors {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(corrupt("missing TCV1 magic"));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let json = bytes.get(8..8 + len).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let body = &bytes[8 + len..];
        if !body.len().is_multiple_of(8) {
            return Err(corrupt("tensor data is not a whole number of f64 values"));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if expected != values.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "header describes {expected} values, file holds {}",
                values.len()
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = match &header.model {
            ModelHeader::Encoder { config } => Model::Encoder(EncoderParams::init(config, &mut rng)?),
            ModelHeader::Mlp { input, hidden, output } => {
                Model::Mlp(SiameseMlpParams::init(*input, *hidden, *output, &mut rng)?)
            }
        };
        let mut offset = 0;
        let mut entries = header.tensors.iter();
        {
            let targets = match &mut model {
                Model::Encoder(p) => p.tensors_mut(),
                Model::Mlp(p) => p.tensors_mut(),
            };
            for t in targets {
                let e = entries.next().ok_or_else(|| corrupt("missing tensors"))?;
                if e.name != t.name || e.shape != t.shape {
                    return Err(Error::CorruptCheckpoint(format!(
                        "tensor {} {:?} does not match expected {} {:?}",
                        e.name, e.shape, t.name, t.shape
                    )));
                }
                let n = t.data.len();
                t.data.copy_from_slice(&values[offset..offset + n]);
                offset += n;
            }
        }
        let centres = match entries.next() {
            None => None,
            Some(e) if e.name == "centres" && e.shape.len() == 2 => {
                let (rows, cols) = (e.shape[0], e.shape[1]);
                let data = &values[offset..offset + rows * cols];
                offset += rows * cols;
                Some(data.chunks(cols.max(1)).map(<[f64]>::to_vec).take(rows).collect())
            }
            Some(e) => return Err(Error::CorruptCheckpoint(format!("unexpected tensor {}", e.name))),
        };
        if entries.next().is_some() || offset != values.len() {
            return Err(corrupt("trailing tensors"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("checkpoint tensors".into()));
        }
        Ok(Checkpoint {
            method: header.method,
            model,
            centres,
            selected_epoch: header.selected_epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Input embedding width the model expects.
    pub fn input_dim(&self) -> usize {
        match &self.model {
            Model::Encoder(p) => p.config.model_dim,
            Model::Mlp(p) => p.input_dim(),
        }
    }
}
