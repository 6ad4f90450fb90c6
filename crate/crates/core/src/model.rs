//! Transformer encoder `f`, projection head `h` and predictor `P`.
//!
//! The encoder embeds each frame linearly, applies the input-stage layer
//! norms, adds a positional encoding, runs pre-norm transformer blocks,
//! applies a final layer norm and mean-pools over frames. All three branches
//! of a training step go through one call so they share every parameter.

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::SkeletonSequence;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Graph, Mat, SeqLayout, Var};

pub const INIT_STD: f64 = 0.02;

/// Parameter count of [`ModelConfig::default`].
pub const DEFAULT_PARAMETER_COUNT: usize = 38_302_380;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionalEncoding {
    Learned,
    Sinusoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Values per input frame (`landmarks × coord_dim`).
    pub input_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub embed_dim: usize,
    /// Hidden width of each block's feed-forward layer.
    pub ffn_dim: usize,
    pub dropout: f64,
    /// 0: none; 1: norm after the frame embedding; 2: norms before and
    /// after the frame embedding.
    pub input_layernorm_count: usize,
    pub max_len: usize,
    pub positional_encoding: PositionalEncoding,
    /// LayerNorm on the block output before pooling.
    pub final_layernorm: bool,
    /// Exclude trailing all-zero padding frames from attention and pooling.
    pub mask_padding: bool,
    /// Std of the truncated-normal encoder weights.
    pub init_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: crate::data::DEFAULT_LANDMARKS * crate::data::DEFAULT_COORD_DIM,
            blocks: 12,
            heads: 8,
            embed_dim: 512,
            ffn_dim: 2048,
            dropout: 0.1,
            input_layernorm_count: 2,
            max_len: crate::data::DEFAULT_MAX_LEN,
            positional_encoding: PositionalEncoding::Learned,
            final_layernorm: true,
            mask_padding: false,
            init_std: INIT_STD,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks < 1 {
            return Err(Error::arg("encoder needs at least one block"));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::arg(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.input_dim == 0 || self.ffn_dim == 0 || self.max_len == 0 {
            return Err(Error::arg("input_dim, ffn_dim and max_len must be positive"));
        }
        if self.input_layernorm_count > 2 {
            return Err(Error::arg("input_layernorm_count must be 0, 1 or 2"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::arg(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::arg(format!("init_std {} must be positive", self.init_std)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub projection_hidden: usize,
    pub projection_out: usize,
    pub predictor_hidden: usize,
    /// Std of the truncated-normal weights of the projection and predictor.
    pub init_std: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            projection_hidden: 512,
            projection_out: 128,
            predictor_hidden: 128,
            init_std: INIT_STD,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let h = &self.head;
        if h.projection_hidden == 0 || h.projection_out == 0 || h.predictor_hidden == 0 {
            return Err(Error::arg("head widths must be positive"));
        }
        if !(h.init_std > 0.0 && h.init_std.is_finite()) {
            return Err(Error::arg(format!("head init_std {} must be positive", h.init_std)));
        }
        Ok(())
    }

    /// Parameter names and shapes, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, (usize, usize))> {
        let e = &self.encoder;
        let h = &self.head;
        let d = e.embed_dim;
        let mut out = Vec::new();
        let norm = |out: &mut Vec<_>, name: &str, width: usize| {
            out.push((format!("{name}.beta"), (1, width)));
            out.push((format!("{name}.gamma"), (1, width)));
        };
        let dense = |out: &mut Vec<(String, (usize, usize))>, name: &str, i: usize, o: usize| {
            out.push((format!("{name}.bias"), (1, o)));
            out.push((format!("{name}.weight"), (i, o)));
        };
        for b in 0..e.blocks {
            let p = format!("encoder.blocks.{b:02}");
            dense(&mut out, &format!("{p}.attn.out"), d, d);
            dense(&mut out, &format!("{p}.attn.qkv"), d, 3 * d);
            norm(&mut out, &format!("{p}.attn_norm"), d);
            dense(&mut out, &format!("{p}.ffn.fc1"), d, e.ffn_dim);
            dense(&mut out, &format!("{p}.ffn.fc2"), e.ffn_dim, d);
            norm(&mut out, &format!("{p}.ffn_norm"), d);
        }
        dense(&mut out, "encoder.embed", e.input_dim, d);
        if e.input_layernorm_count >= 1 {
            norm(&mut out, "encoder.embed_norm", d);
        }
        if e.final_layernorm {
            norm(&mut out, "encoder.final_norm", d);
        }
        if e.input_layernorm_count == 2 {
            norm(&mut out, "encoder.input_norm", e.input_dim);
        }
        if e.positional_encoding == PositionalEncoding::Learned {
            out.push(("encoder.pos_embedding".into(), (e.max_len, d)));
        }
        dense(&mut out, "predictor.fc1", h.projection_out, h.predictor_hidden);
        dense(&mut out, "predictor.fc2", h.predictor_hidden, h.projection_out);
        dense(&mut out, "projection.fc1", d, h.projection_hidden);
        dense(&mut out, "projection.fc2", h.projection_hidden, h.projection_out);
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes().iter().map(|(_, (r, c))| r * c).sum()
    }
}

/// Named parameter tensors. Biases and norm parameters are `1 × C` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Mat>,
}

fn truncated_normal(rng: &mut Rng, std: f64) -> f64 {
    loop {
        let v: f64 = StandardNormal.sample(rng);
        if v.abs() <= 2.0 {
            return v * std;
        }
    }
}

impl ModelParams {
    /// Truncated-normal (±2σ) weights, zero biases, unit norm
    /// gains. Values are rounded to `f32` so checkpoints are exact.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut tensors = BTreeMap::new();
        for (name, (r, c)) in cfg.parameter_shapes() {
            let m = if name.ends_with(".gamma") {
                Mat::ones((r, c))
            } else if name.ends_with(".bias") || name.ends_with(".beta") {
                Mat::zeros((r, c))
            } else {
                let std = if name.starts_with("encoder.") { cfg.encoder.init_std } else { cfg.head.init_std };
                Mat::from_shape_fn((r, c), |_| truncated_normal(rng, std))
            };
            tensors.insert(name, m);
        }
        let mut p = Self { tensors };
        p.round_to_f32();
        Ok(p)
    }

    pub fn from_tensors(tensors: BTreeMap<String, Mat>) -> Result<Self> {
        for (name, t) in &tensors {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("parameter {name} has non-finite entries")));
            }
        }
        Ok(Self { tensors })
    }

    /// Checks names and shapes against a configuration.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = cfg.parameter_shapes();
        if expected.len() != self.tensors.len() {
            return Err(Error::arg(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in expected {
            match self.tensors.get(&name) {
                Some(t) if t.dim() == shape => {}
                Some(t) => {
                    return Err(Error::arg(format!("parameter {name} has shape {:?}, expected {shape:?}", t.dim())))
                }
                None => return Err(Error::arg(format!("missing parameter {name}"))),
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Mat)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Rounds every entry to the nearest `f32`, the storage precision.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors.values_mut() {
            t.mapv_inplace(|v| f64::from(v as f32));
        }
    }

    /// Adds every parameter to `g` as a leaf.
    pub fn register(&self, g: &mut Graph, requires_grad: bool) -> ParamVars {
        ParamVars {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), g.leaf(v.clone(), requires_grad)))
                .collect(),
        }
    }
}

pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not registered"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradient per parameter name; parameters the loss does not reach get zeros.
    pub fn collect_grads(&self, g: &Graph, grads: &mut crate::tape::Gradients) -> BTreeMap<String, Mat> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let grad = grads.take(v).unwrap_or_else(|| Mat::zeros(g.value(v).dim()));
                (name.clone(), grad)
            })
            .collect()
    }
}

pub enum Mode<'a> {
    Train(&'a mut Rng),
    Eval,
}

impl Mode<'_> {
    fn dropout(&mut self, g: &mut Graph, x: Var, p: f64) -> Var {
        match self {
            Mode::Train(rng) => g.dropout(x, p, rng),
            Mode::Eval => x,
        }
    }
}

/// Row-stacked frames of `batch` sequences with equal length.
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    pub data: Mat,
    pub layout: SeqLayout,
}

impl SequenceBatch {
    pub fn from_sequences(seqs: &[&SkeletonSequence]) -> Result<Self> {
        let first = seqs.first().ok_or_else(|| Error::arg("empty batch"))?;
        let (n, fs) = (first.n_frames(), first.frame_size());
        let mut data = Array2::zeros((seqs.len() * n, fs));
        let mut valid = Vec::with_capacity(seqs.len());
        for (b, s) in seqs.iter().enumerate() {
            if s.n_frames() != n || s.frame_size() != fs {
                return Err(Error::arg(format!(
                    "batch sequence {b} has shape {}x{}, expected {n}x{fs}",
                    s.n_frames(),
                    s.frame_size()
                )));
            }
            for (t, frame) in s.frames().enumerate() {
                for (c, &v) in frame.iter().enumerate() {
                    data[[b * n + t, c]] = f64::from(v);
                }
            }
            valid.push(s.unpadded_len());
        }
        Ok(Self {
            data,
            layout: SeqLayout {
                batch: seqs.len(),
                seq_len: n,
                valid: Some(valid),
            },
        })
    }

    pub fn concat(parts: &[&SequenceBatch]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::arg("empty batch"))?;
        let n = first.layout.seq_len;
        if parts.iter().any(|p| p.layout.seq_len != n || p.data.ncols() != first.data.ncols()) {
            return Err(Error::arg("batches to concatenate must share shape"));
        }
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(ndarray::Axis(0), &views).expect("shapes checked");
        let valid = parts
            .iter()
            .flat_map(|p| p.layout.valid.clone().unwrap_or_else(|| vec![n; p.layout.batch]))
            .collect();
        Ok(Self {
            data,
            layout: SeqLayout {
                batch: parts.iter().map(|p| p.layout.batch).sum(),
                seq_len: n,
                valid: Some(valid),
            },
        })
    }
}

fn sinusoidal_table(len: usize, dim: usize) -> Mat {
    Mat::from_shape_fn((len, dim), |(pos, i)| {
        let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        let angle = pos as f64 * rate;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn norm(g: &mut Graph, pv: &ParamVars, name: &str, x: Var) -> Var {
    g.layer_norm(x, pv.get(&format!("{name}.gamma")), pv.get(&format!("{name}.beta")))
}

fn dense(g: &mut Graph, pv: &ParamVars, name: &str, x: Var) -> Var {
    g.linear(x, pv.get(&format!("{name}.weight")), pv.get(&format!("{name}.bias")))
}

/// Encoder `f`: `B·N × input_dim` rows to `B × embed_dim` representations.
pub fn encode_graph(
    g: &mut Graph,
    pv: &ParamVars,
    cfg: &EncoderConfig,
    input: Var,
    layout: &SeqLayout,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let (rows, cols) = g.value(input).dim();
    if cols != cfg.input_dim || rows != layout.rows() {
        return Err(Error::arg(format!(
            "input of shape {rows}x{cols} does not match {} sequences of {} frames x {} values",
            layout.batch, layout.seq_len, cfg.input_dim
        )));
    }
    if layout.seq_len > cfg.max_len {
        return Err(Error::arg(format!(
            "sequence length {} exceeds max_len {}",
            layout.seq_len, cfg.max_len
        )));
    }
    let layout = if cfg.mask_padding {
        layout.clone()
    } else {
        SeqLayout {
            valid: None,
            ..layout.clone()
        }
    };

    let mut x = input;
    if cfg.input_layernorm_count == 2 {
        x = norm(g, pv, "encoder.input_norm", x);
    }
    x = dense(g, pv, "encoder.embed", x);
    if cfg.input_layernorm_count >= 1 {
        x = norm(g, pv, "encoder.embed_norm", x);
    }
    let pos = match cfg.positional_encoding {
        PositionalEncoding::Learned => pv.get("encoder.pos_embedding"),
        PositionalEncoding::Sinusoidal => g.constant(sinusoidal_table(layout.seq_len, cfg.embed_dim)),
    };
    x = g.add_positional(x, pos, layout.seq_len);
    x = mode.dropout(g, x, cfg.dropout);

    for b in 0..cfg.blocks {
        let p = format!("encoder.blocks.{b:02}");
        let h = norm(g, pv, &format!("{p}.attn_norm"), x);
        let qkv = dense(g, pv, &format!("{p}.attn.qkv"), h);
        let a = g.attention(qkv, &layout, cfg.heads);
        let o = dense(g, pv, &format!("{p}.attn.out"), a);
        let o = mode.dropout(g, o, cfg.dropout);
        x = g.add(x, o);

        let h = norm(g, pv, &format!("{p}.ffn_norm"), x);
        let f = dense(g, pv, &format!("{p}.ffn.fc1"), h);
        let f = g.gelu(f);
        let f = dense(g, pv, &format!("{p}.ffn.fc2"), f);
        let f = mode.dropout(g, f, cfg.dropout);
        x = g.add(x, f);
    }
    if cfg.final_layernorm {
        x = norm(g, pv, "encoder.final_norm", x);
    }
    let y = g.mean_pool(x, &layout);
    if g.value(y).iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("encoder produced non-finite activations".into()));
    }
    Ok(y)
}

/// Projection head `h`: linear, ReLU, linear.
pub fn project_graph(g: &mut Graph, pv: &ParamVars, y: Var) -> Var {
    let h = dense(g, pv, "projection.fc1", y);
    let h = g.relu(h);
    dense(g, pv, "projection.fc2", h)
}

/// Predictor `P`: linear, ReLU, linear.
pub fn predict_graph(g: &mut Graph, pv: &ParamVars, z: Var) -> Var {
    let h = dense(g, pv, "predictor.fc1", z);
    let h = g.relu(h);
    dense(g, pv, "predictor.fc2", h)
}

/// Which branch feeds the predictor, and whether the predictor is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorInput {
    /// `P(z)` on the original-sample branch (the standard objective).
    Original,
    /// `P(z₂)` on the second augmented view.
    SecondView,
    /// No predictor: the branch itself (identity).
    IdentityOnOriginal,
    IdentityOnSecondView,
}

pub struct BranchOutputs {
    pub z: Var,
    pub z1: Var,
    pub z2: Var,
    pub p: Var,
}

/// Runs `x`, `x1`, `x2` through one shared encoder and projection head in a
/// single pass and applies the predictor to the requested branch.
pub fn forward_three_branch(
    g: &mut Graph,
    pv: &ParamVars,
    cfg: &ModelConfig,
    x: &SequenceBatch,
    x1: &SequenceBatch,
    x2: &SequenceBatch,
    predictor: PredictorInput,
    mode: &mut Mode<'_>,
) -> Result<BranchOutputs> {
    let b = x.layout.batch;
    if x1.layout.batch != b || x2.layout.batch != b || x1.data.dim() != x.data.dim() || x2.data.dim() != x.data.dim() {
        return Err(Error::arg("the three branches must have identical shapes"));
    }
    let all = SequenceBatch::concat(&[x, x1, x2])?;
    let input = g.constant(all.data);
    let y = encode_graph(g, pv, &cfg.encoder, input, &all.layout, mode)?;
    let zall = project_graph(g, pv, y);
    let z = g.slice_rows(zall, 0, b);
    let z1 = g.slice_rows(zall, b, 2 * b);
    let z2 = g.slice_rows(zall, 2 * b, 3 * b);
    let p = match predictor {
        PredictorInput::Original => predict_graph(g, pv, z),
        PredictorInput::SecondView => predict_graph(g, pv, z2),
        PredictorInput::IdentityOnOriginal => z,
        PredictorInput::IdentityOnSecondView => z2,
    };
    Ok(BranchOutputs { z, z1, z2, p })
}

/// A configured model with its parameters, for inference-style calls.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Sequences per forward chunk in [`Model::represent`].
const EVAL_CHUNK: usize = 256;

impl Model {
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let params = ModelParams::init(&config, rng)?;
        Ok(Self { config, params })
    }

    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        Ok(Self { config, params })
    }

    pub fn encode(&self, batch: &SequenceBatch, mode: &mut Mode<'_>) -> Result<Mat> {
        let mut g = Graph::new();
        let pv = self.params.register(&mut g, false);
        let input = g.constant(batch.data.clone());
        let y = encode_graph(&mut g, &pv, &self.config.encoder, input, &batch.layout, mode)?;
        Ok(g.value(y).clone())
    }

    pub fn project(&self, y: &Mat) -> Result<Mat> {
        self.head(y, "projection", self.config.encoder.embed_dim)
    }

    pub fn predict(&self, z: &Mat) -> Result<Mat> {
        self.head(z, "predictor", self.config.head.projection_out)
    }

    fn head(&self, x: &Mat, which: &str, width: usize) -> Result<Mat> {
        if x.ncols() != width {
            return Err(Error::arg(format!("{which} expects {width} columns, got {}", x.ncols())));
        }
        let mut g = Graph::new();
        let pv = self.params.register(&mut g, false);
        let v = g.constant(x.clone());
        let out = match which {
            "projection" => project_graph(&mut g, &pv, v),
            _ => predict_graph(&mut g, &pv, v),
        };
        Ok(g.value(out).clone())
    }

    /// Eval-mode representations `y` (or projections `z`) for many sequences.
    pub fn represent(&self, seqs: &[&SkeletonSequence], projection: bool) -> Result<Mat> {
        let mut out = Mat::zeros((
            seqs.len(),
            if projection { self.config.head.projection_out } else { self.config.encoder.embed_dim },
        ));
        for (c, chunk) in seqs.chunks(EVAL_CHUNK).enumerate() {
            let batch = SequenceBatch::from_sequences(chunk)?;
            let mut y = self.encode(&batch, &mut Mode::Eval)?;
            if projection {
                y = self.project(&y)?;
            }
            out.slice_mut(s![c * EVAL_CHUNK..c * EVAL_CHUNK + chunk.len(), ..]).assign(&y);
        }
        Ok(out)
    }
}

/// Uniform draw used by tests that need a perturbation direction.
pub fn random_like(m: &Mat, rng: &mut Rng) -> Mat {
    Mat::from_shape_fn(m.dim(), |_| rng.random_range(-1.0..1.0))
}
