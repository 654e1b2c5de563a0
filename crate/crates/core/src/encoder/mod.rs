//! Class-token transformer encoder over a clip of frame embeddings.
//!
//! The input clip is prefixed with a learnable class token and passed through
//! `L` pre-LN residual blocks (multi-head self-attention, then a GELU
//! feed-forward). The class-token output state is the track representation;
//! during training a head (LayerNorm + linear projection) maps it to the
//! low-dimensional space the centre losses live in.

mod model;

pub use model::{
    attention_profile, backward, backward_with_input, forward_eval, forward_train, AttentionProfile,
    ForwardCache,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::params::{tmut, tref, ParamTensors, TensorMut, TensorRef};

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Token width; equals the input embedding dimension.
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    /// Output width of the training head.
    pub head_dim: usize,
    #[serde(default)]
    pub use_positional_embedding: bool,
    /// Length of the learnable position table (class token included).
    #[serde(default = "default_max_positions")]
    pub max_positions: usize,
}

fn default_max_positions() -> usize {
    1024
}

impl EncoderConfig {
    /// Config with a `4 × model_dim` feed-forward width and no positional
    /// embedding.
    pub fn new(model_dim: usize, layers: usize, heads: usize, head_dim: usize) -> Result<Self> {
        let cfg = Self {
            model_dim,
            layers,
            heads,
            mlp_hidden: 4 * model_dim,
            head_dim,
            use_positional_embedding: false,
            max_positions: default_max_positions(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_mlp_hidden(mut self, hidden: usize) -> Result<Self> {
        self.mlp_hidden = hidden;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.model_dim == 0 {
            return bad("model_dim must be >= 1".into());
        }
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            ));
        }
        if self.layers == 0 {
            return bad("layers must be >= 1".into());
        }
        if self.head_dim == 0 {
            return bad("head_dim must be >= 1".into());
        }
        if self.mlp_hidden == 0 {
            return bad("mlp_hidden must be >= 1".into());
        }
        if self.use_positional_embedding && self.max_positions < 2 {
            return bad("max_positions must be >= 2".into());
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// Weights of one pre-LN block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub w_q: Mat,
    pub b_q: Vec<f64>,
    pub w_k: Mat,
    pub b_k: Vec<f64>,
    pub w_v: Mat,
    pub b_v: Vec<f64>,
    pub w_o: Mat,
    pub b_o: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w_ff1: Mat,
    pub b_ff1: Vec<f64>,
    pub w_ff2: Mat,
    pub b_ff2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
    pub w: Mat,
    pub b: Vec<f64>,
}

/// Every learnable quantity of the encoder. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub class_token: Vec<f64>,
    pub positional: Option<Mat>,
    pub layers: Vec<LayerParams>,
    pub head: HeadParams,
}

/// Gradients share the parameter layout.
pub type ParamGrads = EncoderParams;

fn uniform_mat<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let bound = 1.0 / (rows as f64).sqrt();
    Mat::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
}

impl EncoderParams {
    /// Fresh parameters: projections `U(±1/√fan_in)`, zero biases, unit LN
    /// gains, class token (and position table) from `N(0, 0.02²)`.
    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let hid = config.mlp_hidden;
        let token_dist = Normal::new(0.0, 0.02).expect("valid normal");
        let class_token = (0..d).map(|_| token_dist.sample(rng)).collect();
        let positional = config.use_positional_embedding.then(|| {
            Mat::from_vec(
                config.max_positions,
                d,
                (0..config.max_positions * d)
                    .map(|_| token_dist.sample(rng))
                    .collect(),
            )
        });
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                ln1_gain: vec![1.0; d],
                ln1_bias: vec![0.0; d],
                w_q: uniform_mat(d, d, rng),
                b_q: vec![0.0; d],
                w_k: uniform_mat(d, d, rng),
                b_k: vec![0.0; d],
                w_v: uniform_mat(d, d, rng),
                b_v: vec![0.0; d],
                w_o: uniform_mat(d, d, rng),
                b_o: vec![0.0; d],
                ln2_gain: vec![1.0; d],
                ln2_bias: vec![0.0; d],
                w_ff1: uniform_mat(d, hid, rng),
                b_ff1: vec![0.0; hid],
                w_ff2: uniform_mat(hid, d, rng),
                b_ff2: vec![0.0; d],
            })
            .collect();
        let head = HeadParams {
            ln_gain: vec![1.0; d],
            ln_bias: vec![0.0; d],
            w: uniform_mat(d, config.head_dim, rng),
            b: vec![0.0; config.head_dim],
        };
        Ok(Self {
            config: config.clone(),
            class_token,
            positional,
            layers,
            head,
        })
    }

    /// All-zero tensors with this layout.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.set_zero();
        z
    }
}

impl ParamTensors for EncoderParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        encoder_tensors_ref(self)
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        encoder_tensors_mut(self)
    }
}

fn encoder_tensors_ref(p: &EncoderParams) -> Vec<TensorRef<'_>> {
    let d = p.config.model_dim;
    let hid = p.config.mlp_hidden;
    let z = p.config.head_dim;
    let mut out = vec![tref("class_token".into(), vec![d], false, &p.class_token)];
    if let Some(pos) = &p.positional {
        out.push(tref("positional".into(), vec![pos.rows, d], false, &pos.data));
    }
    for (i, l) in p.layers.iter().enumerate() {
        let n = |s: &str| format!("layer{i}.{s}");
        out.extend([
            tref(n("ln1_gain"), vec![d], false, &l.ln1_gain),
            tref(n("ln1_bias"), vec![d], false, &l.ln1_bias),
            tref(n("w_q"), vec![d, d], true, &l.w_q.data),
            tref(n("b_q"), vec![d], false, &l.b_q),
            tref(n("w_k"), vec![d, d], true, &l.w_k.data),
            tref(n("b_k"), vec![d], false, &l.b_k),
            tref(n("w_v"), vec![d, d], true, &l.w_v.data),
            tref(n("b_v"), vec![d], false, &l.b_v),
            tref(n("w_o"), vec![d, d], true, &l.w_o.data),
            tref(n("b_o"), vec![d], false, &l.b_o),
            tref(n("ln2_gain"), vec![d], false, &l.ln2_gain),
            tref(n("ln2_bias"), vec![d], false, &l.ln2_bias),
            tref(n("w_ff1"), vec![d, hid], true, &l.w_ff1.data),
            tref(n("b_ff1"), vec![hid], false, &l.b_ff1),
            tref(n("w_ff2"), vec![hid, d], true, &l.w_ff2.data),
            tref(n("b_ff2"), vec![d], false, &l.b_ff2),
        ]);
    }
    out.extend([
        tref("head.ln_gain".into(), vec![d], false, &p.head.ln_gain),
        tref("head.ln_bias".into(), vec![d], false, &p.head.ln_bias),
        tref("head.w".into(), vec![d, z], true, &p.head.w.data),
        tref("head.b".into(), vec![z], false, &p.head.b),
    ]);
    out
}

fn encoder_tensors_mut(p: &mut EncoderParams) -> Vec<TensorMut<'_>> {
    let d = p.config.model_dim;
    let hid = p.config.mlp_hidden;
    let z = p.config.head_dim;
    let mut out = vec![tmut("class_token".into(), vec![d], false, &mut p.class_token)];
    if let Some(pos) = &mut p.positional {
        let rows = pos.rows;
        out.push(tmut("positional".into(), vec![rows, d], false, &mut pos.data));
    }
    for (i, l) in p.layers.iter_mut().enumerate() {
        let n = |s: &str| format!("layer{i}.{s}");
        out.extend([
            tmut(n("ln1_gain"), vec![d], false, &mut l.ln1_gain),
            tmut(n("ln1_bias"), vec![d], false, &mut l.ln1_bias),
            tmut(n("w_q"), vec![d, d], true, &mut l.w_q.data),
            tmut(n("b_q"), vec![d], false, &mut l.b_q),
            tmut(n("w_k"), vec![d, d], true, &mut l.w_k.data),
            tmut(n("b_k"), vec![d], false, &mut l.b_k),
            tmut(n("w_v"), vec![d, d], true, &mut l.w_v.data),
            tmut(n("b_v"), vec![d], false, &mut l.b_v),
            tmut(n("w_o"), vec![d, d], true, &mut l.w_o.data),
            tmut(n("b_o"), vec![d], false, &mut l.b_o),
            tmut(n("ln2_gain"), vec![d], false, &mut l.ln2_gain),
            tmut(n("ln2_bias"), vec![d], false, &mut l.ln2_bias),
            tmut(n("w_ff1"), vec![d, hid], true, &mut l.w_ff1.data),
            tmut(n("b_ff1"), vec![hid], false, &mut l.b_ff1),
            tmut(n("w_ff2"), vec![hid, d], true, &mut l.w_ff2.data),
            tmut(n("b_ff2"), vec![d], false, &mut l.b_ff2),
        ]);
    }
    let h = &mut p.head;
    out.extend([
        tmut("head.ln_gain".into(), vec![d], false, &mut h.ln_gain),
        tmut("head.ln_bias".into(), vec![d], false, &mut h.ln_bias),
        tmut("head.w".into(), vec![d, z], true, &mut h.w.data),
        tmut("head.b".into(), vec![z], false, &mut h.b),
    ]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_seed_same_params() {
        let cfg = EncoderConfig::new(8, 2, 2, 2).unwrap();
        let a = EncoderParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = EncoderParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        let c = EncoderParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn layer_norm_gains_start_at_one() {
        let cfg = EncoderConfig::new(8, 3, 4, 2).unwrap();
        let p = EncoderParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for t in p.tensors() {
            if t.name.contains("gain") {
                assert!(t.data.iter().all(|&v| v == 1.0), "{}", t.name);
            }
            if t.name.contains("bias") || t.name.contains(".b") {
                assert!(t.data.iter().all(|&v| v == 0.0), "{}", t.name);
            }
        }
    }

    #[test]
    fn head_divisibility_and_layer_count() {
        assert_eq!(EncoderConfig::new(32, 4, 16, 2).unwrap().head_width(), 2);
        assert!(matches!(EncoderConfig::new(30, 4, 16, 2), Err(Error::InvalidConfig(_))));
        assert!(EncoderConfig::new(32, 0, 16, 2).is_err());
        assert!(EncoderConfig::new(32, 1, 16, 0).is_err());
        assert!(EncoderConfig::new(32, 1, 4, 2).unwrap().with_mlp_hidden(0).is_err());
    }

    #[test]
    fn projection_init_is_bounded_by_fan_in() {
        let cfg = EncoderConfig::new(16, 1, 4, 3).unwrap();
        let p = EncoderParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for t in p.tensors().iter().filter(|t| t.decay) {
            let bound = 1.0 / (t.shape[0] as f64).sqrt();
            assert!(t.data.iter().all(|v| v.abs() < bound), "{}", t.name);
        }
    }

    #[test]
    fn tensor_views_agree() {
        let mut cfg = EncoderConfig::new(8, 2, 2, 2).unwrap();
        cfg.use_positional_embedding = true;
        cfg.max_positions = 5;
        let mut p = EncoderParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let names: Vec<_> = p.tensors().into_iter().map(|t| (t.name, t.shape, t.data.len())).collect();
        let names_mut: Vec<_> = p
            .tensors_mut()
            .into_iter()
            .map(|t| (t.name, t.shape, t.data.len()))
            .collect();
        assert_eq!(names, names_mut);
        for (_, shape, len) in &names {
            assert_eq!(shape.iter().product::<usize>(), *len);
        }
    }
}
