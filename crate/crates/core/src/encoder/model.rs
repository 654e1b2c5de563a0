use crate::error::{Error, Result};
use crate::linalg::{
    add_into, axpy, dot, gelu, gelu_grad, layer_norm, layer_norm_backward, softmax_backward_in_place,
    softmax_in_place, LayerNormCache, Mat,
};

use super::{EncoderParams, LayerParams, ParamGrads};

/// Activations of one block. The final block only evaluates its query-side
/// path for the class token (`q_rows == 1`); the others for every token.
#[derive(Debug, Clone)]
struct BlockCache {
    q_rows: usize,
    ln1: LayerNormCache,
    /// LN1 output, all tokens.
    a: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    /// Per head, `q_rows × tokens` attention probabilities.
    probs: Vec<Mat>,
    /// Concatenated head outputs, `q_rows × d`.
    attn: Mat,
    ln2: LayerNormCache,
    b: Mat,
    hidden_pre: Mat,
    hidden: Mat,
}

/// Everything `backward` needs from one `forward_train` call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    tokens: usize,
    model_dim: usize,
    blocks: Vec<BlockCache>,
    head_ln: LayerNormCache,
    head_in: Vec<f64>,
    /// Class-token state after the last block.
    pub class_state: Vec<f64>,
    pub z_head: Vec<f64>,
}

impl ForwardCache {
    pub fn tokens(&self) -> usize {
        self.tokens
    }
}

fn check_input(params: &EncoderParams, clip: &Mat) -> Result<()> {
    let cfg = &params.config;
    if clip.rows == 0 {
        return Err(Error::InvalidConfig("clip must contain at least one frame".into()));
    }
    if clip.cols != cfg.model_dim {
        return Err(Error::DimensionMismatch {
            expected: cfg.model_dim,
            found: clip.cols,
        });
    }
    if cfg.use_positional_embedding && clip.rows + 1 > cfg.max_positions {
        return Err(Error::InvalidConfig(format!(
            "clip of {} frames exceeds the position table ({} slots)",
            clip.rows,
            cfg.max_positions - 1
        )));
    }
    if !clip.is_finite() {
        return Err(Error::NonFinite("encoder input".into()));
    }
    Ok(())
}

fn block_forward(
    layer: &LayerParams,
    x: &Mat,
    q_rows: usize,
    heads: usize,
) -> (Mat, BlockCache) {
    let tokens = x.rows;
    let d = x.cols;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let (a, ln1) = layer_norm(x, &layer.ln1_gain, &layer.ln1_bias);
    let a_q = if q_rows == tokens {
        a.clone()
    } else {
        Mat::from_vec(q_rows, d, a.data[..q_rows * d].to_vec())
    };
    let q = a_q.affine(&layer.w_q, &layer.b_q);
    let k = a.affine(&layer.w_k, &layer.b_k);
    let v = a.affine(&layer.w_v, &layer.b_v);

    let mut attn = Mat::zeros(q_rows, d);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let mut p = Mat::zeros(q_rows, tokens);
        for i in 0..q_rows {
            let qi = &q.row(i)[cols.clone()];
            let row = p.row_mut(i);
            for (j, s) in row.iter_mut().enumerate() {
                *s = dot(qi, &k.row(j)[cols.clone()]) * scale;
            }
            softmax_in_place(row);
            let out = &mut attn.row_mut(i)[cols.clone()];
            for j in 0..tokens {
                axpy(out, p.at(i, j), &v.row(j)[cols.clone()]);
            }
        }
        probs.push(p);
    }

    let mut mid = attn.affine(&layer.w_o, &layer.b_o);
    for i in 0..q_rows {
        add_into(mid.row_mut(i), x.row(i));
    }

    let (b, ln2) = layer_norm(&mid, &layer.ln2_gain, &layer.ln2_bias);
    let hidden_pre = b.affine(&layer.w_ff1, &layer.b_ff1);
    let hidden = Mat::from_vec(
        hidden_pre.rows,
        hidden_pre.cols,
        hidden_pre.data.iter().map(|&x| gelu(x)).collect(),
    );
    let mut out = hidden.affine(&layer.w_ff2, &layer.b_ff2);
    out.add_assign(&mid);

    let cache = BlockCache {
        q_rows,
        ln1,
        a,
        q,
        k,
        v,
        probs,
        attn,
        ln2,
        b,
        hidden_pre,
        hidden,
    };
    (out, cache)
}

/// Returns the gradient with respect to the block input (`tokens × d`) and
/// accumulates parameter gradients into `g`.
fn block_backward(
    layer: &LayerParams,
    cache: &BlockCache,
    d_out: &Mat,
    heads: usize,
    g: &mut LayerParams,
) -> Mat {
    let q_rows = cache.q_rows;
    let tokens = cache.a.rows;
    let d = cache.a.cols;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // Feed-forward branch; the residual passes d_out straight to `mid`.
    cache.hidden.t_matmul_acc(d_out, &mut g.w_ff2);
    d_out.col_sum_acc(&mut g.b_ff2);
    let mut d_hidden = d_out.matmul_t(&layer.w_ff2);
    for (dv, &pre) in d_hidden.data.iter_mut().zip(&cache.hidden_pre.data) {
        *dv *= gelu_grad(pre);
    }
    cache.b.t_matmul_acc(&d_hidden, &mut g.w_ff1);
    d_hidden.col_sum_acc(&mut g.b_ff1);
    let d_b = d_hidden.matmul_t(&layer.w_ff1);
    let mut d_mid = layer_norm_backward(&cache.ln2, &layer.ln2_gain, &d_b, &mut g.ln2_gain, &mut g.ln2_bias);
    d_mid.add_assign(d_out);

    // Attention branch.
    cache.attn.t_matmul_acc(&d_mid, &mut g.w_o);
    d_mid.col_sum_acc(&mut g.b_o);
    let d_attn = d_mid.matmul_t(&layer.w_o);

    let mut d_q = Mat::zeros(q_rows, d);
    let mut d_k = Mat::zeros(tokens, d);
    let mut d_v = Mat::zeros(tokens, d);
    let mut d_p = vec![0.0; tokens];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let p = &cache.probs[h];
        for i in 0..q_rows {
            let d_oi = &d_attn.row(i)[cols.clone()];
            for j in 0..tokens {
                d_p[j] = dot(d_oi, &cache.v.row(j)[cols.clone()]);
                axpy(&mut d_v.row_mut(j)[cols.clone()], p.at(i, j), d_oi);
            }
            softmax_backward_in_place(p.row(i), &mut d_p);
            let qi = &cache.q.row(i)[cols.clone()];
            for j in 0..tokens {
                let ds = d_p[j] * scale;
                if ds == 0.0 {
                    continue;
                }
                axpy(&mut d_q.row_mut(i)[cols.clone()], ds, &cache.k.row(j)[cols.clone()]);
                axpy(&mut d_k.row_mut(j)[cols.clone()], ds, qi);
            }
        }
    }

    let a_q = if q_rows == tokens {
        None
    } else {
        Some(Mat::from_vec(q_rows, d, cache.a.data[..q_rows * d].to_vec()))
    };
    a_q.as_ref().unwrap_or(&cache.a).t_matmul_acc(&d_q, &mut g.w_q);
    d_q.col_sum_acc(&mut g.b_q);
    cache.a.t_matmul_acc(&d_k, &mut g.w_k);
    d_k.col_sum_acc(&mut g.b_k);
    cache.a.t_matmul_acc(&d_v, &mut g.w_v);
    d_v.col_sum_acc(&mut g.b_v);

    let mut d_a = d_k.matmul_t(&layer.w_k);
    d_a.add_assign(&d_v.matmul_t(&layer.w_v));
    let d_aq = d_q.matmul_t(&layer.w_q);
    for i in 0..q_rows {
        add_into(d_a.row_mut(i), d_aq.row(i));
    }

    let mut d_x = layer_norm_backward(&cache.ln1, &layer.ln1_gain, &d_a, &mut g.ln1_gain, &mut g.ln1_bias);
    for i in 0..q_rows {
        add_into(d_x.row_mut(i), d_mid.row(i));
    }
    d_x
}

fn encode(params: &EncoderParams, clip: &Mat) -> Result<(Vec<BlockCache>, Vec<f64>)> {
    check_input(params, clip)?;
    let cfg = &params.config;
    let d = cfg.model_dim;
    let tokens = clip.rows + 1;
    let mut x = Mat::zeros(tokens, d);
    x.row_mut(0).copy_from_slice(&params.class_token);
    x.data[d..].copy_from_slice(&clip.data);
    if let Some(pos) = &params.positional {
        add_into(&mut x.data, &pos.data[..tokens * d]);
    }
    let mut blocks = Vec::with_capacity(cfg.layers);
    for (l, layer) in params.layers.iter().enumerate() {
        let q_rows = if l + 1 == cfg.layers { 1 } else { tokens };
        let (out, cache) = block_forward(layer, &x, q_rows, cfg.heads);
        blocks.push(cache);
        x = out;
    }
    Ok((blocks, x.data))
}

/// Training forward pass: returns the head output and the activations
/// needed by [`backward`].
pub fn forward_train(params: &EncoderParams, clip: &Mat) -> Result<(Vec<f64>, ForwardCache)> {
    let (blocks, class_state) = encode(params, clip)?;
    let d = params.config.model_dim;
    let state = Mat::from_vec(1, d, class_state.clone());
    let (head_in, head_ln) = layer_norm(&state, &params.head.ln_gain, &params.head.ln_bias);
    let z = head_in.affine(&params.head.w, &params.head.b).data;
    let cache = ForwardCache {
        tokens: clip.rows + 1,
        model_dim: d,
        blocks,
        head_ln,
        head_in: head_in.data,
        class_state,
        z_head: z.clone(),
    };
    Ok((z, cache))
}

/// Evaluation representation: the class-token state after the last block,
/// without the training head.
pub fn forward_eval(params: &EncoderParams, track: &Mat) -> Result<Vec<f64>> {
    encode(params, track).map(|(_, state)| state)
}

fn check_cache(params: &EncoderParams, cache: &ForwardCache, grad_z: &[f64]) -> Result<()> {
    let cfg = &params.config;
    if cache.blocks.len() != cfg.layers || cache.model_dim != cfg.model_dim {
        return Err(Error::InvalidConfig(
            "forward cache does not match these parameters".into(),
        ));
    }
    if grad_z.len() != cfg.head_dim {
        return Err(Error::DimensionMismatch {
            expected: cfg.head_dim,
            found: grad_z.len(),
        });
    }
    Ok(())
}

/// Accumulates `∂(grad_z · z_head)/∂θ` into `grads` and returns the gradient
/// with respect to the clip frames (`frames × d`).
pub fn backward_with_input(
    params: &EncoderParams,
    cache: &ForwardCache,
    grad_z: &[f64],
    grads: &mut ParamGrads,
) -> Result<Mat> {
    check_cache(params, cache, grad_z)?;
    let cfg = &params.config;
    let d = cfg.model_dim;

    let gz = Mat::from_vec(1, cfg.head_dim, grad_z.to_vec());
    let head_in = Mat::from_vec(1, d, cache.head_in.clone());
    head_in.t_matmul_acc(&gz, &mut grads.head.w);
    add_into(&mut grads.head.b, grad_z);
    let d_head_in = gz.matmul_t(&params.head.w);
    let d_state = layer_norm_backward(
        &cache.head_ln,
        &params.head.ln_gain,
        &d_head_in,
        &mut grads.head.ln_gain,
        &mut grads.head.ln_bias,
    );

    let mut d_x = d_state;
    for l in (0..cfg.layers).rev() {
        d_x = block_backward(
            &params.layers[l],
            &cache.blocks[l],
            &d_x,
            cfg.heads,
            &mut grads.layers[l],
        );
    }

    add_into(&mut grads.class_token, d_x.row(0));
    if let Some(pos) = &mut grads.positional {
        add_into(&mut pos.data[..cache.tokens * d], &d_x.data);
    }
    Ok(Mat::from_vec(cache.tokens - 1, d, d_x.data[d..].to_vec()))
}

/// Returns `∂(grad_z · z_head)/∂θ` for every parameter.
pub fn backward(params: &EncoderParams, cache: &ForwardCache, grad_z: &[f64]) -> Result<ParamGrads> {
    let mut grads = params.zeros_like();
    backward_with_input(params, cache, grad_z, &mut grads)?;
    Ok(grads)
}

/// Final-layer attention from the class token to each frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProfile {
    /// One score per frame, L2-normalised across the track.
    pub scores: Vec<f64>,
    /// Population standard deviation of `scores`.
    pub sigma: f64,
}

/// Head-averaged class-token attention weights of the final block,
/// L2-normalised over the frames.
pub fn attention_profile(params: &EncoderParams, track: &Mat) -> Result<AttentionProfile> {
    let (blocks, _) = encode(params, track)?;
    let last = blocks.last().expect("at least one layer");
    let frames = track.rows;
    let heads = last.probs.len() as f64;
    let mut scores = vec![0.0; frames];
    for p in &last.probs {
        for (s, &w) in scores.iter_mut().zip(&p.row(0)[1..]) {
            *s += w;
        }
    }
    scores.iter_mut().for_each(|s| *s /= heads);
    let norm = dot(&scores, &scores).sqrt();
    scores.iter_mut().for_each(|s| *s /= norm);
    let mean = scores.iter().sum::<f64>() / frames as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / frames as f64;
    Ok(AttentionProfile {
        scores,
        sigma: var.sqrt(),
    })
}
