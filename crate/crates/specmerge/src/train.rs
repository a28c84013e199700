//! Per-task optimization: Balanced Softmax cross-entropy, analytic gradients
//! through the head and adapter (the backbone is frozen), and plain SGD with
//! weight decay.
//!
//! The softmax runs over every class seen so far; rows of earlier tasks act
//! as negatives but stay frozen, so a single-class task still trains against
//! the accumulated classes. The log-prior shift `z + log pi` uses frequencies
//! from the current task only and applies at training time only. Old head
//! rows and the backbone receive no gradient by construction.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{backbone_forward, gelu, gelu_prime, AdapterParams, ModelState};
use crate::rng::{rng_from, sub_seed, SeedDomain};
use crate::stream::Sample;
use rand::seq::SliceRandom;
use std::collections::BTreeMap;

const DIVERGENCE_CAP: f64 = 1e6;

/// Empirical class frequencies within one task's training set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPriors {
    pi: BTreeMap<usize, f64>,
}

impl ClassPriors {
    pub fn get(&self, class: usize) -> Option<f64> {
        self.pi.get(&class).copied()
    }

    /// Equal priors over a class set; handy for degeneracy checks.
    pub fn uniform(classes: &[usize]) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::EmptyInput { what: "classes" });
        }
        let p = 1.0 / classes.len() as f64;
        Ok(ClassPriors {
            pi: classes.iter().map(|c| (*c, p)).collect(),
        })
    }

    /// Priors from explicit per-class frequencies; they must be positive and
    /// sum to one.
    pub fn from_frequencies(classes: &[usize], freqs: &[f64]) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::EmptyInput { what: "classes" });
        }
        if classes.len() != freqs.len() {
            return Err(Error::LengthMismatch {
                op: "class priors",
                expected: classes.len(),
                got: freqs.len(),
            });
        }
        if freqs.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::InvalidParam {
                name: "prior",
                value: f64::NAN,
            });
        }
        let total: f64 = freqs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParam {
                name: "prior sum",
                value: total,
            });
        }
        Ok(ClassPriors {
            pi: classes.iter().copied().zip(freqs.iter().copied()).collect(),
        })
    }
}

/// Optimization hyperparameters for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub use_balanced_softmax: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.07,
            epochs: 20,
            batch_size: 16,
            weight_decay: 5e-4,
            use_balanced_softmax: false,
            seed: 0,
        }
    }
}

/// Counts label occurrences and normalizes to frequencies.
pub fn class_priors(labels: &[usize]) -> Result<ClassPriors> {
    if labels.is_empty() {
        return Err(Error::EmptyInput { what: "labels" });
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(*l).or_insert(0) += 1;
    }
    let total = labels.len() as f64;
    Ok(ClassPriors {
        pi: counts
            .into_iter()
            .map(|(c, n)| (c, n as f64 / total))
            .collect(),
    })
}

/// Shifts each logit by the log prior of its class: `z_y + log pi_y`.
pub fn balanced_logits(z: &[f64], priors: &ClassPriors, class_order: &[usize]) -> Result<Vec<f64>> {
    if z.len() != class_order.len() {
        return Err(Error::LengthMismatch {
            op: "balanced_logits",
            expected: class_order.len(),
            got: z.len(),
        });
    }
    class_order
        .iter()
        .zip(z)
        .map(|(c, zv)| {
            let p = priors.get(*c).ok_or(Error::UnknownLabel { label: *c })?;
            Ok(zv + p.ln())
        })
        .collect()
}

/// Gradients for every trainable parameter. Head gradients cover only the
/// current task's rows, in `task_classes` order; everything else is zero by
/// construction and therefore not represented.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub w_down: Matrix,
    pub w_up: Matrix,
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
    /// One weight-row gradient per task class, in `task_classes` order.
    pub head_weight: Vec<Vec<f64>>,
    pub head_bias: Vec<f64>,
}

/// Softmax probabilities with the usual max-shift for stability.
fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy over the batch on logits spanning all seen classes
/// (task-class logits optionally prior-shifted), plus exact analytic
/// gradients for the trainable parameters: adapter, layer-norm terms, and
/// the head rows of the current task.
pub fn loss_and_gradients(
    state: &ModelState,
    batch: &[Sample],
    priors: &ClassPriors,
    task_classes: &[usize],
    use_bsm: bool,
) -> Result<(f64, GradBundle)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput { what: "batch" });
    }
    if task_classes.is_empty() {
        return Err(Error::EmptyInput {
            what: "task classes",
        });
    }
    let a = &state.adapter;
    let d = a.feature_dim();
    let dh = a.hidden_dim();
    let k = task_classes.len();

    // Head rows of the task classes, in task order.
    let mut rows = Vec::with_capacity(k);
    for c in task_classes {
        let row = state
            .head
            .row_of(*c)
            .ok_or(Error::UnknownLabel { label: *c })?;
        rows.push(row);
    }
    let local_of: BTreeMap<usize, usize> = task_classes
        .iter()
        .enumerate()
        .map(|(i, c)| (*c, i))
        .collect();
    let log_priors: Vec<f64> = if use_bsm {
        task_classes
            .iter()
            .map(|c| {
                priors
                    .get(*c)
                    .map(f64::ln)
                    .ok_or(Error::UnknownLabel { label: *c })
            })
            .collect::<Result<_>>()?
    } else {
        vec![0.0; k]
    };

    let mut grads = GradBundle {
        w_down: Matrix::zeros(dh, d),
        w_up: Matrix::zeros(d, dh),
        ln_gain: vec![0.0; d],
        ln_bias: vec![0.0; d],
        head_weight: vec![vec![0.0; d]; k],
        head_bias: vec![0.0; k],
    };
    let mut loss_sum = 0.0;

    for sample in batch {
        let target = *local_of
            .get(&sample.label)
            .ok_or(Error::UnknownLabel {
                label: sample.label,
            })?;

        // Forward, keeping every intermediate the backward pass needs.
        let f = backbone_forward(&state.backbone, &sample.input)?;
        let mean = f.iter().sum::<f64>() / d as f64;
        let var = f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv_std = 1.0 / (var + 1e-5).sqrt();
        let xhat: Vec<f64> = f.iter().map(|v| (v - mean) * inv_std).collect();
        let q: Vec<f64> = xhat
            .iter()
            .zip(a.ln_gain.iter().zip(&a.ln_bias))
            .map(|(x, (g, b))| g * x + b)
            .collect();
        let pre = a.w_down.matvec(&q)?;
        let hidden: Vec<f64> = pre.iter().map(|u| gelu(*u)).collect();
        let up = a.w_up.matvec(&hidden)?;
        let y: Vec<f64> = f.iter().zip(&up).map(|(x, u)| x + a.scale * u).collect();

        // Logits over every class seen so far; older classes carry no prior
        // shift and act as frozen negatives.
        let n_rows = state.head.num_classes();
        let mut z = Vec::with_capacity(n_rows);
        for row in 0..n_rows {
            let dot: f64 = state
                .head
                .weight_row(row)
                .iter()
                .zip(&y)
                .map(|(w, v)| w * v)
                .sum();
            let shift = local_of
                .get(&state.head.class_ids()[row])
                .map_or(0.0, |local| log_priors[*local]);
            z.push(dot + state.head.bias()[row] + shift);
        }
        let target_row = rows[target];
        let p = softmax(&z);
        let sample_loss = -p[target_row].ln();
        if !sample_loss.is_finite() {
            return Err(Error::NonFinite {
                place: "loss",
                row: 0,
                col: target,
            });
        }
        loss_sum += sample_loss;

        // Backward. dL/dz = p - onehot(target row). Every row contributes to
        // the feature gradient, but only task rows collect weight gradients.
        let mut dy = vec![0.0; d];
        for row in 0..n_rows {
            let dz = p[row] - if row == target_row { 1.0 } else { 0.0 };
            if let Some(local) = local_of.get(&state.head.class_ids()[row]) {
                for (gw, yv) in grads.head_weight[*local].iter_mut().zip(&y) {
                    *gw += dz * yv;
                }
                grads.head_bias[*local] += dz;
            }
            for (dyv, w) in dy.iter_mut().zip(state.head.weight_row(row)) {
                *dyv += dz * w;
            }
        }

        // Through the residual: du = scale * dy.
        let du: Vec<f64> = dy.iter().map(|v| a.scale * v).collect();
        let mut dg = vec![0.0; dh];
        for i in 0..d {
            let dui = du[i];
            if dui == 0.0 {
                continue;
            }
            let grow = &mut grads.w_up.data_mut()[i * dh..(i + 1) * dh];
            for (j, (gr, h)) in grow.iter_mut().zip(&hidden).enumerate() {
                *gr += dui * h;
                dg[j] += dui * a.w_up.get(i, j);
            }
        }
        let da: Vec<f64> = dg
            .iter()
            .zip(&pre)
            .map(|(g, u)| g * gelu_prime(*u))
            .collect();
        let mut dq = vec![0.0; d];
        for j in 0..dh {
            let daj = da[j];
            if daj == 0.0 {
                continue;
            }
            let grow = &mut grads.w_down.data_mut()[j * d..(j + 1) * d];
            for (i, (gr, qv)) in grow.iter_mut().zip(&q).enumerate() {
                *gr += daj * qv;
                dq[i] += daj * a.w_down.get(j, i);
            }
        }
        // LN affine terms; the LN input is frozen backbone output, so the
        // chain stops here.
        for i in 0..d {
            grads.ln_gain[i] += dq[i] * xhat[i];
            grads.ln_bias[i] += dq[i];
        }
    }

    let scale = 1.0 / batch.len() as f64;
    let loss = loss_sum * scale;
    for v in grads.w_down.data_mut() {
        *v *= scale;
    }
    for v in grads.w_up.data_mut() {
        *v *= scale;
    }
    for v in grads
        .ln_gain
        .iter_mut()
        .chain(&mut grads.ln_bias)
        .chain(&mut grads.head_bias)
    {
        *v *= scale;
    }
    for row in &mut grads.head_weight {
        for v in row {
            *v *= scale;
        }
    }
    Ok((loss, grads))
}

/// One SGD step: `p <- p - lr * (g + wd * p)` on every trainable coordinate.
/// Weight decay applies to the adapter matrices and head weights only, never
/// to layer-norm terms or biases. Frozen coordinates are untouched.
pub fn sgd_step(
    state: &mut ModelState,
    grads: &GradBundle,
    task_classes: &[usize],
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let a = &mut state.adapter;
    if grads.w_down.rows() != a.w_down.rows()
        || grads.w_down.cols() != a.w_down.cols()
        || grads.w_up.rows() != a.w_up.rows()
        || grads.w_up.cols() != a.w_up.cols()
    {
        return Err(Error::ShapeMismatch {
            op: "sgd_step",
            expected: (a.w_down.rows(), a.w_down.cols()),
            got: (grads.w_down.rows(), grads.w_down.cols()),
        });
    }
    if grads.ln_gain.len() != a.ln_gain.len() || grads.ln_bias.len() != a.ln_bias.len() {
        return Err(Error::LengthMismatch {
            op: "sgd_step",
            expected: a.ln_gain.len(),
            got: grads.ln_gain.len().min(grads.ln_bias.len()),
        });
    }
    if grads.head_weight.len() != task_classes.len()
        || grads.head_bias.len() != task_classes.len()
    {
        return Err(Error::LengthMismatch {
            op: "sgd_step",
            expected: task_classes.len(),
            got: grads.head_weight.len().min(grads.head_bias.len()),
        });
    }
    for (p, g) in a.w_down.data_mut().iter_mut().zip(grads.w_down.data()) {
        *p -= lr * (g + weight_decay * *p);
    }
    for (p, g) in a.w_up.data_mut().iter_mut().zip(grads.w_up.data()) {
        *p -= lr * (g + weight_decay * *p);
    }
    for (p, g) in a.ln_gain.iter_mut().zip(&grads.ln_gain) {
        *p -= lr * g;
    }
    for (p, g) in a.ln_bias.iter_mut().zip(&grads.ln_bias) {
        *p -= lr * g;
    }
    for (local, c) in task_classes.iter().enumerate() {
        let row = state
            .head
            .row_of(*c)
            .ok_or(Error::UnknownLabel { label: *c })?;
        for (p, g) in state
            .head
            .weight_row_mut(row)
            .iter_mut()
            .zip(&grads.head_weight[local])
        {
            *p -= lr * (g + weight_decay * *p);
        }
        state.head.bias_mut()[row] -= lr * grads.head_bias[local];
    }
    Ok(())
}

/// One `epoch batch loss` triple of the training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPoint {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

/// A trained task adapter plus its loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub adapter: AdapterParams,
    pub trace: Vec<LossPoint>,
}

/// Trains a fresh task adapter on `task_data`.
///
/// The adapter starts from the base adapter's layer-norm terms with newly
/// seeded projections (zero up-projection, so training starts at the exact
/// identity map). The model's head rows for `task_classes` are updated in
/// place; the base adapter held by `state` is left intact for the caller's
/// merge.
pub fn train_task(
    state: &mut ModelState,
    task_data: &[Sample],
    task_classes: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if task_data.is_empty() {
        return Err(Error::EmptyInput { what: "task data" });
    }
    for s in task_data {
        if !task_classes.contains(&s.label) {
            return Err(Error::UnknownLabel { label: s.label });
        }
    }
    for c in task_classes {
        if state.head.row_of(*c).is_none() {
            return Err(Error::UnknownLabel { label: *c });
        }
    }

    let adapter = AdapterParams::fresh_from(
        &state.adapter,
        sub_seed(cfg.seed, SeedDomain::AdapterInit, 0),
    )?;
    let mut work = ModelState {
        backbone: state.backbone.clone(),
        adapter,
        head: state.head.clone(),
    };

    let labels: Vec<usize> = task_data.iter().map(|s| s.label).collect();
    let priors = class_priors(&labels)?;

    let mut shuffle_rng = rng_from(sub_seed(cfg.seed, SeedDomain::Shuffle, 0));
    let mut order: Vec<usize> = (0..task_data.len()).collect();
    let mut trace = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let batch: Vec<Sample> = chunk.iter().map(|i| task_data[*i].clone()).collect();
            let (loss, grads) = loss_and_gradients(
                &work,
                &batch,
                &priors,
                task_classes,
                cfg.use_balanced_softmax,
            )
            .map_err(|e| match e {
                // A non-finite loss is a divergence; report where it hit.
                Error::NonFinite { place: "loss", .. } => Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            if !loss.is_finite() || loss > DIVERGENCE_CAP {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss,
                });
            }
            trace.push(LossPoint {
                epoch,
                batch: batch_idx,
                loss,
            });
            sgd_step(
                &mut work,
                &grads,
                task_classes,
                cfg.learning_rate,
                cfg.weight_decay,
            )?;
        }
    }

    state.head = work.head;
    Ok(TrainOutcome {
        adapter: work.adapter,
        trace,
    })
}

/// Renders the trace as the run-log text: one `epoch batch loss` per line.
pub fn trace_to_text(trace: &[LossPoint]) -> String {
    let mut out = String::new();
    for p in trace {
        out.push_str(&format!("{} {} {:.6}\n", p.epoch, p.batch, p.loss));
    }
    out
}
