//! Tower forward passes and their hand-written backward passes.
//!
//! The speech tower is conv stack -> per-frame MLP -> attention pooling ->
//! output projection -> L2 normalize. The text tower is a single projection
//! of the hashed n-gram vector followed by L2 normalize. All loops run in a
//! fixed order so repeated evaluations are bit-identical.

use crate::linalg::{dot, l2_norm, Mat};
use crate::{Error, Result};

use super::{Embedding, FeatureSequence, TextFeatures, TowerParams};

/// Saved intermediates of one speech-tower forward pass.
pub(crate) struct SpeechTrace {
    /// Input to each conv layer (index 0 is the raw frame matrix).
    pub conv_inputs: Vec<Mat>,
    /// Post-tanh output of each conv layer.
    pub conv_outputs: Vec<Mat>,
    /// Input to each MLP layer.
    pub mlp_inputs: Vec<Mat>,
    /// Post-tanh output of each MLP layer.
    pub mlp_outputs: Vec<Mat>,
    /// Frame matrix entering attention pooling (T' x H).
    pub hidden: Mat,
    /// tanh(W h_t + b) per frame.
    pub attn_u: Mat,
    pub alphas: Vec<f64>,
    pub pooled: Vec<f64>,
    /// Output projection result before normalization.
    pub pre_norm: Vec<f64>,
    pub emb: Vec<f64>,
}

/// Saved intermediates of one text-tower forward pass.
pub(crate) struct TextTrace {
    pub pre_norm: Vec<f64>,
    pub emb: Vec<f64>,
}

fn conv_out_len(t_in: usize, kernel: usize, stride: usize) -> usize {
    if t_in < kernel {
        0
    } else {
        (t_in - kernel) / stride + 1
    }
}

pub(crate) fn speech_forward(seq: &FeatureSequence, params: &TowerParams) -> Result<SpeechTrace> {
    let dims = params.dims();
    if seq.feat_dim() != dims.feat_dim {
        return Err(Error::dimension(
            "speech frame width",
            dims.feat_dim,
            seq.feat_dim(),
        ));
    }

    let mut conv_inputs = Vec::with_capacity(dims.conv.len());
    let mut conv_outputs = Vec::with_capacity(dims.conv.len());
    let mut current = seq.frames().clone();
    for (i, spec) in dims.conv.iter().enumerate() {
        let t_out = conv_out_len(current.rows(), spec.kernel, spec.stride);
        if t_out == 0 {
            return Err(Error::Empty(format!(
                "sequence too short: {} frames left entering conv layer {i} (kernel {})",
                current.rows(),
                spec.kernel
            )));
        }
        let d_in = current.cols();
        let kernel = params.conv_kernel(i);
        let bias = params.conv_bias(i);
        let mut out = Mat::zeros(t_out, spec.channels);
        for t in 0..t_out {
            let row = out.row_mut(t);
            row.copy_from_slice(bias);
            for k in 0..spec.kernel {
                let in_row = current.row(t * spec.stride + k);
                let k_base = k * d_in * spec.channels;
                for (ii, &x) in in_row.iter().enumerate() {
                    let w = &kernel[k_base + ii * spec.channels..k_base + (ii + 1) * spec.channels];
                    for o in 0..spec.channels {
                        row[o] += x * w[o];
                    }
                }
            }
            for o in 0..spec.channels {
                row[o] = row[o].tanh();
            }
        }
        conv_inputs.push(current);
        conv_outputs.push(out.clone());
        current = out;
    }

    let mut mlp_inputs = Vec::with_capacity(dims.mlp.len());
    let mut mlp_outputs = Vec::with_capacity(dims.mlp.len());
    for i in 0..dims.mlp.len() {
        let d_in = params.mlp_in_dim(i);
        let d_out = dims.mlp[i];
        let w = params.mlp_weight(i);
        let b = params.mlp_bias(i);
        let mut out = Mat::zeros(current.rows(), d_out);
        for t in 0..current.rows() {
            let x = current.row(t);
            let row = out.row_mut(t);
            for o in 0..d_out {
                let mut acc = b[o];
                let wr = &w[o * d_in..(o + 1) * d_in];
                for ii in 0..d_in {
                    acc += wr[ii] * x[ii];
                }
                row[o] = acc.tanh();
            }
        }
        mlp_inputs.push(current);
        mlp_outputs.push(out.clone());
        current = out;
    }

    let hidden = current;
    let t_frames = hidden.rows();
    let h_dim = dims.hidden_dim();
    let attn_w = params.attn_w();
    let attn_b = params.attn_b();
    let attn_v = params.attn_v();

    let mut attn_u = Mat::zeros(t_frames, h_dim);
    let mut scores = vec![0.0; t_frames];
    for t in 0..t_frames {
        let h = hidden.row(t);
        let u = attn_u.row_mut(t);
        for o in 0..h_dim {
            let mut acc = attn_b[o];
            let wr = &attn_w[o * h_dim..(o + 1) * h_dim];
            for ii in 0..h_dim {
                acc += wr[ii] * h[ii];
            }
            u[o] = acc.tanh();
        }
        scores[t] = dot(attn_v, u);
    }
    let max_score = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut alphas: Vec<f64> = scores.iter().map(|s| (s - max_score).exp()).collect();
    let z: f64 = alphas.iter().sum();
    for a in &mut alphas {
        *a /= z;
    }
    let mut pooled = vec![0.0; h_dim];
    for t in 0..t_frames {
        let h = hidden.row(t);
        for (p, &x) in pooled.iter_mut().zip(h) {
            *p += alphas[t] * x;
        }
    }

    let out_w = params.out_weight();
    let out_b = params.out_bias();
    let e_dim = dims.embed_dim;
    let mut pre_norm = vec![0.0; e_dim];
    for o in 0..e_dim {
        let mut acc = out_b[o];
        let wr = &out_w[o * h_dim..(o + 1) * h_dim];
        for ii in 0..h_dim {
            acc += wr[ii] * pooled[ii];
        }
        pre_norm[o] = acc;
    }
    let norm = l2_norm(&pre_norm);
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::NonFinite("speech embedding".into()));
    }
    let emb: Vec<f64> = pre_norm.iter().map(|v| v / norm).collect();

    Ok(SpeechTrace {
        conv_inputs,
        conv_outputs,
        mlp_inputs,
        mlp_outputs,
        hidden,
        attn_u,
        alphas,
        pooled,
        pre_norm,
        emb,
    })
}

pub(crate) fn text_forward(tf: &TextFeatures, params: &TowerParams) -> Result<TextTrace> {
    let dims = params.dims();
    if tf.dim() != dims.text_dim {
        return Err(Error::dimension("text feature width", dims.text_dim, tf.dim()));
    }
    let x = tf.vector();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("text features".into()));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::Empty("text feature vector is all zero".into()));
    }
    let w = params.text_weight();
    let b = params.text_bias();
    let e_dim = dims.embed_dim;
    let d_t = dims.text_dim;
    let mut pre_norm = vec![0.0; e_dim];
    for o in 0..e_dim {
        let mut acc = b[o];
        let wr = &w[o * d_t..(o + 1) * d_t];
        for ii in 0..d_t {
            acc += wr[ii] * x[ii];
        }
        pre_norm[o] = acc;
    }
    let norm = l2_norm(&pre_norm);
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::NonFinite("text embedding".into()));
    }
    let emb: Vec<f64> = pre_norm.iter().map(|v| v / norm).collect();
    Ok(TextTrace { pre_norm, emb })
}

/// Encode a feature sequence with the speech tower.
pub fn encode_speech(seq: &FeatureSequence, params: &TowerParams) -> Result<Embedding> {
    let trace = speech_forward(seq, params)?;
    Embedding::try_new(trace.emb)
}

/// Encode text features with the text tower.
pub fn encode_text(tf: &TextFeatures, params: &TowerParams) -> Result<Embedding> {
    let trace = text_forward(tf, params)?;
    Embedding::try_new(trace.emb)
}

/// Backpropagate `d_emb` (gradient w.r.t. the normalized embedding) through
/// the L2 normalization: y = x / ||x||.
fn normalize_backward(pre_norm: &[f64], emb: &[f64], d_emb: &[f64]) -> Vec<f64> {
    let norm = l2_norm(pre_norm);
    let proj = dot(emb, d_emb);
    emb.iter()
        .zip(d_emb)
        .map(|(&e, &d)| (d - e * proj) / norm)
        .collect()
}

/// Accumulate speech-tower gradients of `d_emb` into `grads` (flat layout of
/// `params`).
pub(crate) fn speech_backward(
    trace: &SpeechTrace,
    params: &TowerParams,
    d_emb: &[f64],
    grads: &mut [f64],
) {
    let dims = params.dims();
    let h_dim = dims.hidden_dim();
    let e_dim = dims.embed_dim;
    let t_frames = trace.hidden.rows();

    let d_pre = normalize_backward(&trace.pre_norm, &trace.emb, d_emb);

    // Output projection.
    let (out_w_off, out_b_off) = params.out_offsets();
    let out_w = params.out_weight();
    let mut d_pooled = vec![0.0; h_dim];
    for o in 0..e_dim {
        let g = d_pre[o];
        grads[out_b_off + o] += g;
        let w_row = &out_w[o * h_dim..(o + 1) * h_dim];
        let gw = &mut grads[out_w_off + o * h_dim..out_w_off + (o + 1) * h_dim];
        for ii in 0..h_dim {
            gw[ii] += g * trace.pooled[ii];
            d_pooled[ii] += g * w_row[ii];
        }
    }

    // Attention pooling: pooled = sum_t alpha_t h_t, alpha = softmax(s),
    // s_t = v . tanh(W h_t + b).
    let (attn_w_off, attn_b_off, attn_v_off) = params.attn_offsets();
    let attn_w = params.attn_w();
    let attn_v = params.attn_v();
    let mut d_hidden = Mat::zeros(t_frames, h_dim);
    let mut d_alpha = vec![0.0; t_frames];
    for t in 0..t_frames {
        let h = trace.hidden.row(t);
        d_alpha[t] = dot(&d_pooled, h);
        let dh = d_hidden.row_mut(t);
        for ii in 0..h_dim {
            dh[ii] += trace.alphas[t] * d_pooled[ii];
        }
    }
    // Softmax backward.
    let weighted: f64 = (0..t_frames).map(|t| trace.alphas[t] * d_alpha[t]).sum();
    let d_scores: Vec<f64> = (0..t_frames)
        .map(|t| trace.alphas[t] * (d_alpha[t] - weighted))
        .collect();
    for t in 0..t_frames {
        let ds = d_scores[t];
        let u = trace.attn_u.row(t);
        let h = trace.hidden.row(t);
        let dh = d_hidden.row_mut(t);
        for o in 0..h_dim {
            grads[attn_v_off + o] += ds * u[o];
            // d z_o where u = tanh(z)
            let dz = ds * attn_v[o] * (1.0 - u[o] * u[o]);
            grads[attn_b_off + o] += dz;
            let w_row = &attn_w[o * h_dim..(o + 1) * h_dim];
            let gw = &mut grads[attn_w_off + o * h_dim..attn_w_off + (o + 1) * h_dim];
            for ii in 0..h_dim {
                gw[ii] += dz * h[ii];
                dh[ii] += dz * w_row[ii];
            }
        }
    }

    // MLP layers, last to first.
    let mut d_out = d_hidden;
    for i in (0..dims.mlp.len()).rev() {
        let d_in = params.mlp_in_dim(i);
        let d_out_dim = dims.mlp[i];
        let w = params.mlp_weight(i);
        let (w_off, b_off) = (params.mlp_weight_off(i), params.mlp_bias_off(i));
        let x = &trace.mlp_inputs[i];
        let y = &trace.mlp_outputs[i];
        let mut d_x = Mat::zeros(x.rows(), d_in);
        for t in 0..x.rows() {
            let xr = x.row(t);
            let yr = y.row(t);
            let dr = d_out.row(t);
            let dxr = d_x.row_mut(t);
            for o in 0..d_out_dim {
                let dz = dr[o] * (1.0 - yr[o] * yr[o]);
                grads[b_off + o] += dz;
                let w_row = &w[o * d_in..(o + 1) * d_in];
                let gw = &mut grads[w_off + o * d_in..w_off + (o + 1) * d_in];
                for ii in 0..d_in {
                    gw[ii] += dz * xr[ii];
                    dxr[ii] += dz * w_row[ii];
                }
            }
        }
        d_out = d_x;
    }

    // Conv layers, last to first. Input gradients are only needed to chain
    // into the previous layer, never for the raw frames.
    for i in (0..dims.conv.len()).rev() {
        let spec = &dims.conv[i];
        let x = &trace.conv_inputs[i];
        let y = &trace.conv_outputs[i];
        let d_in = x.cols();
        let kernel = params.conv_kernel(i);
        let (k_off, b_off) = (params.conv_kernel_off(i), params.conv_bias_off(i));
        let mut d_x = Mat::zeros(x.rows(), d_in);
        for t in 0..y.rows() {
            let yr = y.row(t);
            let dr = d_out.row(t);
            for k in 0..spec.kernel {
                let in_row = x.row(t * spec.stride + k);
                let dx_row = d_x.row_mut(t * spec.stride + k);
                let k_base = k * d_in * spec.channels;
                for ii in 0..d_in {
                    let w = &kernel[k_base + ii * spec.channels..k_base + (ii + 1) * spec.channels];
                    let gw = &mut grads
                        [k_off + k_base + ii * spec.channels..k_off + k_base + (ii + 1) * spec.channels];
                    let xv = in_row[ii];
                    let mut dx_acc = 0.0;
                    for o in 0..spec.channels {
                        let dz = dr[o] * (1.0 - yr[o] * yr[o]);
                        gw[o] += dz * xv;
                        dx_acc += dz * w[o];
                    }
                    dx_row[ii] += dx_acc;
                }
            }
            for o in 0..spec.channels {
                let dz = dr[o] * (1.0 - yr[o] * yr[o]);
                grads[b_off + o] += dz;
            }
        }
        d_out = d_x;
    }
}

/// Accumulate text-tower gradients of `d_emb` into `grads`.
pub(crate) fn text_backward(
    trace: &TextTrace,
    tf: &TextFeatures,
    params: &TowerParams,
    d_emb: &[f64],
    grads: &mut [f64],
) {
    let dims = params.dims();
    let d_t = dims.text_dim;
    let x = tf.vector();
    let d_pre = normalize_backward(&trace.pre_norm, &trace.emb, d_emb);
    let (w_off, b_off) = params.text_offsets();
    for o in 0..dims.embed_dim {
        let g = d_pre[o];
        grads[b_off + o] += g;
        let gw = &mut grads[w_off + o * d_t..w_off + (o + 1) * d_t];
        for ii in 0..d_t {
            gw[ii] += g * x[ii];
        }
    }
}
