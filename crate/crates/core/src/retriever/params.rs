//! Tower architecture description and the flat parameter store.
//!
//! All learnable values live in one `Vec<f64>` addressed through a layout
//! computed from [`RetrieverDims`]. That keeps the optimizer, gradient
//! buffers, checkpoints, and finite-difference checks trivially aligned.

use rand::Rng;

use crate::rng::sub_rng;
use crate::{Error, Result};

/// One 1-D convolution layer over the frame axis (valid padding).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub channels: usize,
    pub stride: usize,
}

/// Architecture of both towers.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverDims {
    /// Frontend feature dimension of speech frames (D_a).
    pub feat_dim: usize,
    /// Convolution stack applied to the frame sequence.
    pub conv: Vec<ConvSpec>,
    /// Per-frame MLP layer widths applied after the conv stack.
    pub mlp: Vec<usize>,
    /// Shared embedding dimension (E).
    pub embed_dim: usize,
    /// Text feature dimension (D_t, hashed n-gram buckets).
    pub text_dim: usize,
}

impl Default for RetrieverDims {
    fn default() -> Self {
        RetrieverDims {
            feat_dim: 40,
            conv: vec![
                ConvSpec {
                    kernel: 3,
                    channels: 64,
                    stride: 2,
                },
                ConvSpec {
                    kernel: 3,
                    channels: 64,
                    stride: 2,
                },
            ],
            mlp: vec![64],
            embed_dim: 64,
            text_dim: 1024,
        }
    }
}

impl RetrieverDims {
    /// Channel width entering attention pooling (H).
    pub fn hidden_dim(&self) -> usize {
        if let Some(&h) = self.mlp.last() {
            h
        } else if let Some(c) = self.conv.last() {
            c.channels
        } else {
            self.feat_dim
        }
    }

    /// Smallest frame count that survives the conv stack.
    pub fn min_frames(&self) -> usize {
        let mut t = 1usize;
        for spec in self.conv.iter().rev() {
            t = (t - 1) * spec.stride + spec.kernel;
        }
        t
    }

    pub fn validate(&self) -> Result<()> {
        if self.feat_dim == 0 || self.embed_dim == 0 || self.text_dim == 0 {
            return Err(Error::InvalidArgument(
                "feature, embedding and text dims must be positive".into(),
            ));
        }
        for (i, c) in self.conv.iter().enumerate() {
            if c.kernel == 0 || c.channels == 0 || c.stride == 0 {
                return Err(Error::InvalidArgument(format!(
                    "conv layer {i} has a zero kernel, channel count, or stride"
                )));
            }
        }
        if self.mlp.contains(&0) {
            return Err(Error::InvalidArgument("mlp widths must be positive".into()));
        }
        Ok(())
    }
}

/// Initial value of the learnable contrastive temperature.
pub const INITIAL_TEMPERATURE: f64 = 0.07;

/// Clamp range applied to the temperature after each optimizer step.
pub const TEMPERATURE_RANGE: (f64, f64) = (1e-3, 10.0);

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    /// Whether decoupled weight decay applies (weights yes; biases and the
    /// temperature no).
    pub decay: bool,
}

/// All learnable weights of both towers plus the contrastive temperature,
/// stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerParams {
    dims: RetrieverDims,
    entries: Vec<ParamEntry>,
    conv_offs: Vec<(usize, usize)>,
    mlp_offs: Vec<(usize, usize)>,
    attn_offs: (usize, usize, usize),
    out_offs: (usize, usize),
    text_offs: (usize, usize),
    temp_off: usize,
    data: Vec<f64>,
}

struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    cursor: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, decay: bool) -> usize {
        let len: usize = shape.iter().product::<usize>().max(1);
        let offset = self.cursor;
        self.entries.push(ParamEntry {
            name,
            shape,
            offset,
            len,
            decay,
        });
        self.cursor += len;
        offset
    }
}

impl TowerParams {
    /// Zero-valued parameters with the layout implied by `dims`.
    pub fn zeros(dims: &RetrieverDims) -> Result<Self> {
        dims.validate()?;
        let mut b = LayoutBuilder {
            entries: Vec::new(),
            cursor: 0,
        };
        let mut conv_offs = Vec::new();
        let mut d_in = dims.feat_dim;
        for (i, spec) in dims.conv.iter().enumerate() {
            let k = b.push(
                format!("conv.{i}.kernel"),
                vec![spec.kernel, d_in, spec.channels],
                true,
            );
            let bias = b.push(format!("conv.{i}.bias"), vec![spec.channels], false);
            conv_offs.push((k, bias));
            d_in = spec.channels;
        }
        let mut mlp_offs = Vec::new();
        for (i, &width) in dims.mlp.iter().enumerate() {
            let w = b.push(format!("mlp.{i}.weight"), vec![width, d_in], true);
            let bias = b.push(format!("mlp.{i}.bias"), vec![width], false);
            mlp_offs.push((w, bias));
            d_in = width;
        }
        let h = dims.hidden_dim();
        let attn_w = b.push("attn_pool.w".into(), vec![h, h], true);
        let attn_b = b.push("attn_pool.b".into(), vec![h], false);
        let attn_v = b.push("attn_pool.v".into(), vec![h], true);
        let out_w = b.push("out_proj.weight".into(), vec![dims.embed_dim, h], true);
        let out_b = b.push("out_proj.bias".into(), vec![dims.embed_dim], false);
        let text_w = b.push(
            "text_proj.weight".into(),
            vec![dims.embed_dim, dims.text_dim],
            true,
        );
        let text_b = b.push("text_proj.bias".into(), vec![dims.embed_dim], false);
        let temp_off = b.push("temperature".into(), vec![], false);
        let len = b.cursor;
        Ok(TowerParams {
            dims: dims.clone(),
            entries: b.entries,
            conv_offs,
            mlp_offs,
            attn_offs: (attn_w, attn_b, attn_v),
            out_offs: (out_w, out_b),
            text_offs: (text_w, text_b),
            temp_off,
            data: vec![0.0; len],
        })
    }

    /// Seeded initialization: uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) per
    /// layer, temperature at [`INITIAL_TEMPERATURE`].
    pub fn init(dims: &RetrieverDims, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        let mut rng = sub_rng(seed, "init");
        let mut d_in = dims.feat_dim;
        let mut fan_ins: Vec<(usize, f64)> = Vec::new();
        for (i, spec) in dims.conv.iter().enumerate() {
            let fan = (spec.kernel * d_in) as f64;
            fan_ins.push((2 * i, fan));
            fan_ins.push((2 * i + 1, fan));
            d_in = spec.channels;
        }
        let base = dims.conv.len() * 2;
        for (i, &width) in dims.mlp.iter().enumerate() {
            let fan = d_in as f64;
            fan_ins.push((base + 2 * i, fan));
            fan_ins.push((base + 2 * i + 1, fan));
            d_in = width;
        }
        let h = dims.hidden_dim() as f64;
        let after_mlp = base + dims.mlp.len() * 2;
        fan_ins.push((after_mlp, h)); // attn w
        fan_ins.push((after_mlp + 1, h)); // attn b
        fan_ins.push((after_mlp + 2, h)); // attn v
        fan_ins.push((after_mlp + 3, h)); // out w
        fan_ins.push((after_mlp + 4, h)); // out b
        fan_ins.push((after_mlp + 5, dims.text_dim as f64)); // text w
        fan_ins.push((after_mlp + 6, dims.text_dim as f64)); // text b
        for (entry_idx, fan) in fan_ins {
            let bound = (1.0 / fan).sqrt();
            let e = &p.entries[entry_idx];
            let (off, len) = (e.offset, e.len);
            for v in &mut p.data[off..off + len] {
                *v = rng.random_range(-bound..bound);
            }
        }
        p.data[p.temp_off] = INITIAL_TEMPERATURE;
        Ok(p)
    }

    /// Rebuild params from a flat data vector (layout implied by `dims`).
    pub fn from_data(dims: &RetrieverDims, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        if data.len() != p.data.len() {
            return Err(Error::dimension("parameter vector", p.data.len(), data.len()));
        }
        p.data = data;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tower parameters".into()));
        }
        if self.temperature() <= 0.0 {
            return Err(Error::InvalidArgument(
                "temperature must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn dims(&self) -> &RetrieverDims {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub(crate) fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Per-parameter weight-decay mask in flat order.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.data.len()];
        for e in &self.entries {
            if e.decay {
                for m in &mut mask[e.offset..e.offset + e.len] {
                    *m = true;
                }
            }
        }
        mask
    }

    pub fn temperature(&self) -> f64 {
        self.data[self.temp_off]
    }

    pub fn set_temperature(&mut self, t: f64) {
        self.data[self.temp_off] = t;
    }

    pub(crate) fn temp_offset(&self) -> usize {
        self.temp_off
    }

    fn slice(&self, off: usize, len: usize) -> &[f64] {
        &self.data[off..off + len]
    }

    pub(crate) fn conv_kernel(&self, i: usize) -> &[f64] {
        let spec = &self.dims.conv[i];
        let d_in = if i == 0 {
            self.dims.feat_dim
        } else {
            self.dims.conv[i - 1].channels
        };
        self.slice(self.conv_offs[i].0, spec.kernel * d_in * spec.channels)
    }

    pub(crate) fn conv_bias(&self, i: usize) -> &[f64] {
        self.slice(self.conv_offs[i].1, self.dims.conv[i].channels)
    }

    pub(crate) fn conv_kernel_off(&self, i: usize) -> usize {
        self.conv_offs[i].0
    }

    pub(crate) fn conv_bias_off(&self, i: usize) -> usize {
        self.conv_offs[i].1
    }

    pub(crate) fn mlp_in_dim(&self, i: usize) -> usize {
        if i == 0 {
            self.dims
                .conv
                .last()
                .map(|c| c.channels)
                .unwrap_or(self.dims.feat_dim)
        } else {
            self.dims.mlp[i - 1]
        }
    }

    pub(crate) fn mlp_weight(&self, i: usize) -> &[f64] {
        self.slice(self.mlp_offs[i].0, self.dims.mlp[i] * self.mlp_in_dim(i))
    }

    pub(crate) fn mlp_bias(&self, i: usize) -> &[f64] {
        self.slice(self.mlp_offs[i].1, self.dims.mlp[i])
    }

    pub(crate) fn mlp_weight_off(&self, i: usize) -> usize {
        self.mlp_offs[i].0
    }

    pub(crate) fn mlp_bias_off(&self, i: usize) -> usize {
        self.mlp_offs[i].1
    }

    pub(crate) fn attn_w(&self) -> &[f64] {
        let h = self.dims.hidden_dim();
        self.slice(self.attn_offs.0, h * h)
    }

    pub(crate) fn attn_b(&self) -> &[f64] {
        self.slice(self.attn_offs.1, self.dims.hidden_dim())
    }

    pub(crate) fn attn_v(&self) -> &[f64] {
        self.slice(self.attn_offs.2, self.dims.hidden_dim())
    }

    pub(crate) fn attn_offsets(&self) -> (usize, usize, usize) {
        self.attn_offs
    }

    pub(crate) fn out_weight(&self) -> &[f64] {
        self.slice(self.out_offs.0, self.dims.embed_dim * self.dims.hidden_dim())
    }

    pub(crate) fn out_bias(&self) -> &[f64] {
        self.slice(self.out_offs.1, self.dims.embed_dim)
    }

    pub(crate) fn out_offsets(&self) -> (usize, usize) {
        self.out_offs
    }

    pub(crate) fn text_weight(&self) -> &[f64] {
        self.slice(self.text_offs.0, self.dims.embed_dim * self.dims.text_dim)
    }

    pub(crate) fn text_bias(&self) -> &[f64] {
        self.slice(self.text_offs.1, self.dims.embed_dim)
    }

    pub(crate) fn text_offsets(&self) -> (usize, usize) {
        self.text_offs
    }
}
