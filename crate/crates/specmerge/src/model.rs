//! The desk-scale classifier: a frozen random-projection backbone, one
//! residual bottleneck adapter, and a growing linear head over all classes
//! seen so far.
//!
//! The adapter forward pass is
//! `x_out = x_in + scale * W_up * gelu(W_down * LN(x_in))`,
//! so a zero up-projection (the initialization for every new task) makes the
//! adapter an exact identity map.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::rng_from;
use rand::Rng;
use rand_distr::StandardNormal;
use std::io::Write;
use std::path::Path;

const LN_EPSILON: f64 = 1e-5;

/// Frozen feature extractor: `tanh(projection * x + offset)`.
///
/// `projection` and `offset` are fully determined by
/// `(input_dim, feature_dim, seed)` and never change after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneSpec {
    pub input_dim: usize,
    pub feature_dim: usize,
    pub seed: u64,
    pub projection: Matrix,
    pub offset: Vec<f64>,
}

impl BackboneSpec {
    pub fn new(input_dim: usize, feature_dim: usize, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let scale = 1.0 / (input_dim as f64).sqrt();
        let mut projection = Matrix::zeros(feature_dim, input_dim);
        for v in projection.data_mut() {
            *v = rng.sample::<f64, _>(StandardNormal) * scale;
        }
        let offset: Vec<f64> = (0..feature_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.1)
            .collect();
        BackboneSpec {
            input_dim,
            feature_dim,
            seed,
            projection,
            offset,
        }
    }
}

/// Trainable parameters of one bottleneck adapter.
///
/// `w_down` is stored as hidden x feature so both projections act on column
/// features; `scale` is a fixed hyperparameter shared across tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub w_down: Matrix,
    pub w_up: Matrix,
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
    pub scale: f64,
}

impl AdapterParams {
    /// Fresh adapter: seeded normal down-projection with standard deviation
    /// `1/sqrt(feature_dim)`, zero up-projection (exact identity at start),
    /// unit layer-norm gain, zero bias.
    pub fn init(feature_dim: usize, hidden_dim: usize, scale: f64, seed: u64) -> Result<Self> {
        if hidden_dim == 0 || hidden_dim >= feature_dim {
            return Err(Error::InvalidParam {
                name: "hidden_dim",
                value: hidden_dim as f64,
            });
        }
        let mut rng = rng_from(seed);
        let std = 1.0 / (feature_dim as f64).sqrt();
        let mut w_down = Matrix::zeros(hidden_dim, feature_dim);
        for v in w_down.data_mut() {
            *v = rng.sample::<f64, _>(StandardNormal) * std;
        }
        Ok(AdapterParams {
            w_down,
            w_up: Matrix::zeros(feature_dim, hidden_dim),
            ln_gain: vec![1.0; feature_dim],
            ln_bias: vec![0.0; feature_dim],
            scale,
        })
    }

    /// New task adapter derived from the current base: layer-norm terms and
    /// scale carried over, projections re-initialized.
    pub fn fresh_from(base: &AdapterParams, seed: u64) -> Result<Self> {
        let mut a = AdapterParams::init(base.feature_dim(), base.hidden_dim(), base.scale, seed)?;
        a.ln_gain = base.ln_gain.clone();
        a.ln_bias = base.ln_bias.clone();
        Ok(a)
    }

    pub fn feature_dim(&self) -> usize {
        self.w_up.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_down.rows()
    }

    /// True when both adapters share the same dimensions.
    pub fn same_architecture(&self, other: &AdapterParams) -> bool {
        self.feature_dim() == other.feature_dim() && self.hidden_dim() == other.hidden_dim()
    }
}

/// Linear head over all classes seen so far; rows append as tasks introduce
/// classes and old rows are never retrained.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    feature_dim: usize,
    class_ids: Vec<usize>,
    weight: Vec<f64>, // row-major, num_classes x feature_dim
    bias: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(feature_dim: usize) -> Self {
        ClassifierHead {
            feature_dim,
            class_ids: Vec::new(),
            weight: Vec::new(),
            bias: Vec::new(),
        }
    }

    /// Appends zero-initialized rows for `new_ids`; ids must be new.
    pub fn grow(&mut self, new_ids: &[usize]) -> Result<()> {
        for id in new_ids {
            if self.class_ids.contains(id) {
                return Err(Error::UnknownLabel { label: *id });
            }
            self.class_ids.push(*id);
            self.weight.extend(std::iter::repeat_n(0.0, self.feature_dim));
            self.bias.push(0.0);
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    /// Row index for a global class id.
    pub fn row_of(&self, class_id: usize) -> Option<usize> {
        self.class_ids.iter().position(|c| *c == class_id)
    }

    pub fn weight_row(&self, row: usize) -> &[f64] {
        &self.weight[row * self.feature_dim..(row + 1) * self.feature_dim]
    }

    pub fn weight_row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.weight[row * self.feature_dim..(row + 1) * self.feature_dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }
}

/// Complete model: frozen backbone, the single current adapter, growing head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub backbone: BackboneSpec,
    pub adapter: AdapterParams,
    pub head: ClassifierHead,
}

impl ModelState {
    pub fn new(backbone: BackboneSpec, adapter: AdapterParams) -> Result<Self> {
        if adapter.feature_dim() != backbone.feature_dim {
            return Err(Error::LengthMismatch {
                op: "model state",
                expected: backbone.feature_dim,
                got: adapter.feature_dim(),
            });
        }
        let head = ClassifierHead::new(backbone.feature_dim);
        Ok(ModelState {
            backbone,
            adapter,
            head,
        })
    }

    /// Number of adapter parameter sets held; inference always sees exactly
    /// one, however many steps have been merged into it.
    pub fn adapter_count(&self) -> usize {
        1
    }
}

/// `tanh(projection * x + offset)`; fully determined by the backbone fields.
pub fn backbone_forward(spec: &BackboneSpec, x: &[f64]) -> Result<Vec<f64>> {
    for (i, v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                place: "backbone input",
                row: 0,
                col: i,
            });
        }
    }
    let mut f = spec.projection.matvec(x)?;
    for (v, o) in f.iter_mut().zip(&spec.offset) {
        *v = (*v + o).tanh();
    }
    Ok(f)
}

/// Layer normalization with population variance and epsilon 1e-5.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::EmptyInput {
            what: "layer_norm input of length >= 2",
        });
    }
    if gain.len() != n || bias.len() != n {
        return Err(Error::LengthMismatch {
            op: "layer_norm",
            expected: n,
            got: gain.len().min(bias.len()),
        });
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let inv_std = 1.0 / (var + LN_EPSILON).sqrt();
    Ok(x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| g * ((v - mean) * inv_std) + b)
        .collect())
}

/// GELU with the tanh approximation of the Gaussian CDF.
pub fn gelu(u: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const C: f64 = 0.044715;
    0.5 * u * (1.0 + (K * (u + C * u * u * u)).tanh())
}

/// Derivative of [`gelu`].
pub(crate) fn gelu_prime(u: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4;
    const C: f64 = 0.044715;
    let h = K * (u + C * u * u * u);
    let th = h.tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * K * (1.0 + 3.0 * C * u * u)
}

/// Residual bottleneck transform
/// `x_in + scale * W_up * gelu(W_down * LN(x_in))`.
pub fn adapter_forward(a: &AdapterParams, x_in: &[f64]) -> Result<Vec<f64>> {
    if x_in.len() != a.feature_dim() {
        return Err(Error::LengthMismatch {
            op: "adapter_forward",
            expected: a.feature_dim(),
            got: x_in.len(),
        });
    }
    let normed = layer_norm(x_in, &a.ln_gain, &a.ln_bias)?;
    let hidden: Vec<f64> = a.w_down.matvec(&normed)?.into_iter().map(gelu).collect();
    let up = a.w_up.matvec(&hidden)?;
    Ok(x_in
        .iter()
        .zip(&up)
        .map(|(x, u)| x + a.scale * u)
        .collect())
}

/// Raw logits `weight * f + bias` over all classes seen so far.
pub fn head_forward(h: &ClassifierHead, f: &[f64]) -> Result<Vec<f64>> {
    if f.len() != h.feature_dim {
        return Err(Error::LengthMismatch {
            op: "head_forward",
            expected: h.feature_dim,
            got: f.len(),
        });
    }
    let mut z = Vec::with_capacity(h.num_classes());
    for row in 0..h.num_classes() {
        let dot: f64 = h.weight_row(row).iter().zip(f).map(|(w, x)| w * x).sum();
        z.push(dot + h.bias[row]);
    }
    Ok(z)
}

/// Global class id of the highest logit after the full forward pass; ties
/// break to the lowest row index.
pub fn predict(m: &ModelState, x: &[f64]) -> Result<usize> {
    if m.head.num_classes() == 0 {
        return Err(Error::EmptyHead);
    }
    let f = backbone_forward(&m.backbone, x)?;
    let y = adapter_forward(&m.adapter, &f)?;
    let z = head_forward(&m.head, &y)?;
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    Ok(m.head.class_ids[best])
}

// ---------------------------------------------------------------------------
// Checkpoint format: named tensors, each a `name rows cols` manifest line
// followed by the matrix text body (without its own header).
// ---------------------------------------------------------------------------

fn push_tensor(out: &mut String, name: &str, rows: usize, cols: usize, data: &[f64]) {
    out.push_str(&format!("{name} {rows} {cols}\n"));
    for r in 0..rows {
        let line: Vec<String> = data[r * cols..(r + 1) * cols]
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

/// Serializes every named parameter tensor of the model.
pub fn checkpoint_to_text(state: &ModelState) -> String {
    let mut out = String::new();
    let b = &state.backbone;
    push_tensor(
        &mut out,
        "backbone.dims",
        1,
        2,
        &[b.input_dim as f64, b.feature_dim as f64],
    );
    // u64 seed split into exact 32-bit halves.
    push_tensor(
        &mut out,
        "backbone.seed",
        1,
        2,
        &[(b.seed >> 32) as f64, (b.seed & 0xffff_ffff) as f64],
    );
    push_tensor(
        &mut out,
        "backbone.projection",
        b.projection.rows(),
        b.projection.cols(),
        b.projection.data(),
    );
    push_tensor(&mut out, "backbone.offset", 1, b.offset.len(), &b.offset);
    let a = &state.adapter;
    push_tensor(&mut out, "adapter.w_down", a.w_down.rows(), a.w_down.cols(), a.w_down.data());
    push_tensor(&mut out, "adapter.w_up", a.w_up.rows(), a.w_up.cols(), a.w_up.data());
    push_tensor(&mut out, "adapter.ln_gain", 1, a.ln_gain.len(), &a.ln_gain);
    push_tensor(&mut out, "adapter.ln_bias", 1, a.ln_bias.len(), &a.ln_bias);
    push_tensor(&mut out, "adapter.scale", 1, 1, &[a.scale]);
    let h = &state.head;
    if h.num_classes() > 0 {
        let ids: Vec<f64> = h.class_ids.iter().map(|c| *c as f64).collect();
        push_tensor(&mut out, "head.class_ids", 1, ids.len(), &ids);
        push_tensor(&mut out, "head.weight", h.num_classes(), h.feature_dim, &h.weight);
        push_tensor(&mut out, "head.bias", 1, h.bias.len(), &h.bias);
    }
    out
}

/// (name, rows, cols, row-major data) as read from a checkpoint.
type NamedTensor = (String, usize, usize, Vec<f64>);

fn parse_tensors(text: &str) -> Result<Vec<NamedTensor>> {
    let mut tensors = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((idx, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let name = it.next().unwrap_or_default().to_string();
        let rows: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: "bad manifest line".into(),
            })?;
        let cols: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: "bad manifest line".into(),
            })?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ridx, row) = lines.next().ok_or(Error::Parse {
                line: idx + 1,
                message: format!("tensor {name} truncated"),
            })?;
            for tok in row.split_whitespace() {
                data.push(tok.parse().map_err(|_| Error::Parse {
                    line: ridx + 1,
                    message: format!("bad value `{tok}`"),
                })?);
            }
        }
        if data.len() != rows * cols {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("tensor {name} has wrong element count"),
            });
        }
        tensors.push((name, rows, cols, data));
    }
    Ok(tensors)
}

/// Rebuilds a model from checkpoint text.
pub fn checkpoint_from_text(text: &str) -> Result<ModelState> {
    let tensors = parse_tensors(text)?;
    let find = |name: &str| -> Result<&NamedTensor> {
        tensors
            .iter()
            .find(|(n, _, _, _)| n == name)
            .ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("missing tensor {name}"),
            })
    };
    let dims = find("backbone.dims")?;
    let seed_halves = find("backbone.seed")?;
    let seed = ((seed_halves.3[0] as u64) << 32) | (seed_halves.3[1] as u64);
    let proj = find("backbone.projection")?;
    let offset = find("backbone.offset")?;
    let backbone = BackboneSpec {
        input_dim: dims.3[0] as usize,
        feature_dim: dims.3[1] as usize,
        seed,
        projection: Matrix::new(proj.1, proj.2, proj.3.clone())?,
        offset: offset.3.clone(),
    };
    let w_down = find("adapter.w_down")?;
    let w_up = find("adapter.w_up")?;
    let adapter = AdapterParams {
        w_down: Matrix::new(w_down.1, w_down.2, w_down.3.clone())?,
        w_up: Matrix::new(w_up.1, w_up.2, w_up.3.clone())?,
        ln_gain: find("adapter.ln_gain")?.3.clone(),
        ln_bias: find("adapter.ln_bias")?.3.clone(),
        scale: find("adapter.scale")?.3[0],
    };
    let mut head = ClassifierHead::new(backbone.feature_dim);
    if let Ok(ids) = find("head.class_ids") {
        let class_ids: Vec<usize> = ids.3.iter().map(|v| *v as usize).collect();
        let weight = find("head.weight")?;
        let bias = find("head.bias")?;
        head.class_ids = class_ids;
        head.weight = weight.3.clone();
        head.bias = bias.3.clone();
    }
    Ok(ModelState {
        backbone,
        adapter,
        head,
    })
}

/// Writes a checkpoint atomically (temp file + rename).
pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    let text = checkpoint_to_text(state);
    let tmp = path.with_extension("tmp");
    let io_err = |e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut f = std::fs::File::create(&tmp).map_err(io_err)?;
    f.write_all(text.as_bytes()).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    checkpoint_from_text(&text)
}
