//! Folding a newly trained adapter into the accumulated base adapter.
//!
//! Each weight matrix pair is aligned in the shared basis given by the thin
//! SVD of their column-wise concatenation `[M_base M_new] = U S V^T`. The two
//! coefficient blocks of `V^T` are blended with class-count weights, the
//! update relative to the base block is gated rank-by-rank (strong directions
//! move cautiously, weak directions move freely), and the result is
//! reconstructed as `U S V_final^T`.
//!
//! One-dimensional parameters (layer-norm gain/bias) have no spectral
//! structure to align and are blended with the same class-count weights.

use crate::error::{Error, Result};
use crate::linalg::{concat_columns, reconstruct, split_columns, thin_svd, Matrix, SvdFactors};
use crate::model::AdapterParams;

/// Hyperparameters of one merge: class counts on both sides, the fraction of
/// ranks treated as head, and the per-tier update gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeConfig {
    pub c_old: usize,
    pub c_new: usize,
    pub head_ratio: f64,
    pub gamma_head: f64,
    pub gamma_tail: f64,
}

impl MergeConfig {
    pub fn new(
        c_old: usize,
        c_new: usize,
        head_ratio: f64,
        gamma_head: f64,
        gamma_tail: f64,
    ) -> Result<Self> {
        if c_new == 0 {
            return Err(Error::InvalidParam {
                name: "c_new",
                value: 0.0,
            });
        }
        if !(head_ratio > 0.0 && head_ratio <= 1.0) {
            return Err(Error::InvalidParam {
                name: "head_ratio",
                value: head_ratio,
            });
        }
        for (name, g) in [("gamma_head", gamma_head), ("gamma_tail", gamma_tail)] {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::InvalidParam { name, value: g });
            }
        }
        Ok(MergeConfig {
            c_old,
            c_new,
            head_ratio,
            gamma_head,
            gamma_tail,
        })
    }
}

/// Per-rank update gains: `gamma_head` for the first `r_head` ranks,
/// `gamma_tail` for the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingMask {
    gains: Vec<f64>,
    r_head: usize,
}

impl GatingMask {
    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    pub fn r_head(&self) -> usize {
        self.r_head
    }
}

/// Blend weights proportional to how many classes each side represents:
/// `(c_old, c_new) -> (c_old, c_new) / (c_old + c_new)`.
pub fn class_count_weights(c_old: usize, c_new: usize) -> Result<(f64, f64)> {
    let total = c_old + c_new;
    if total == 0 {
        return Err(Error::NoClasses);
    }
    let t = total as f64;
    Ok((c_old as f64 / t, c_new as f64 / t))
}

/// Splits the coefficient matrix of a concatenated decomposition back into
/// the base block (first `left_cols` columns) and the new block.
pub fn split_coefficients(vt: &Matrix, left_cols: usize) -> Result<(Matrix, Matrix)> {
    split_columns(vt, left_cols)
}

/// `w_b * vb_t + w_t * vt_t` elementwise; shapes must match.
pub fn blend_coefficients(vb_t: &Matrix, vt_t: &Matrix, w_b: f64, w_t: f64) -> Result<Matrix> {
    if vb_t.rows() != vt_t.rows() || vb_t.cols() != vt_t.cols() {
        return Err(Error::ShapeMismatch {
            op: "blend_coefficients",
            expected: (vb_t.rows(), vb_t.cols()),
            got: (vt_t.rows(), vt_t.cols()),
        });
    }
    let data: Vec<f64> = vb_t
        .data()
        .iter()
        .zip(vt_t.data())
        .map(|(b, t)| w_b * b + w_t * t)
        .collect();
    Matrix::new(vb_t.rows(), vb_t.cols(), data)
}

/// Builds the gating mask for `r` ranks: `r_head = max(1, floor(head_ratio * r))`.
pub fn make_gating_mask(r: usize, cfg: &MergeConfig) -> Result<GatingMask> {
    if r == 0 {
        return Err(Error::InvalidParam {
            name: "rank",
            value: 0.0,
        });
    }
    let r_head = ((cfg.head_ratio * r as f64).floor() as usize).clamp(1, r);
    let gains = (0..r)
        .map(|i| {
            if i < r_head {
                cfg.gamma_head
            } else {
                cfg.gamma_tail
            }
        })
        .collect();
    Ok(GatingMask { gains, r_head })
}

/// Row-wise gated update: row `i` of the result is
/// `vb_t[i] + gains[i] * (v_blend_t[i] - vb_t[i])`.
pub fn apply_gated_update(
    vb_t: &Matrix,
    v_blend_t: &Matrix,
    mask: &GatingMask,
) -> Result<Matrix> {
    if vb_t.rows() != v_blend_t.rows() || vb_t.cols() != v_blend_t.cols() {
        return Err(Error::ShapeMismatch {
            op: "apply_gated_update",
            expected: (vb_t.rows(), vb_t.cols()),
            got: (v_blend_t.rows(), v_blend_t.cols()),
        });
    }
    if mask.len() != vb_t.rows() {
        return Err(Error::LengthMismatch {
            op: "apply_gated_update",
            expected: vb_t.rows(),
            got: mask.len(),
        });
    }
    let mut out = Matrix::zeros(vb_t.rows(), vb_t.cols());
    for i in 0..vb_t.rows() {
        let g = mask.gains()[i];
        // Complementary form of `base + g * (blend - base)`: exact at both
        // gain boundaries (0 returns the base row, 1 the blended row).
        for j in 0..vb_t.cols() {
            out.set(i, j, (1.0 - g) * vb_t.get(i, j) + g * v_blend_t.get(i, j));
        }
    }
    Ok(out)
}

/// The full per-matrix merge: concatenate, decompose, split, blend with
/// class-count weights, gate, reconstruct. Result has the shape of the
/// inputs.
pub fn merge_matrix(m_base: &Matrix, m_new: &Matrix, cfg: &MergeConfig) -> Result<Matrix> {
    if m_base.rows() != m_new.rows() || m_base.cols() != m_new.cols() {
        return Err(Error::ShapeMismatch {
            op: "merge_matrix",
            expected: (m_base.rows(), m_base.cols()),
            got: (m_new.rows(), m_new.cols()),
        });
    }
    m_base.ensure_finite("merge base matrix")?;
    m_new.ensure_finite("merge new matrix")?;

    let joint = concat_columns(m_base, m_new)?;
    let SvdFactors { u, sigma, vt } = thin_svd(&joint)?;
    let (vb_t, vt_t) = split_coefficients(&vt, m_base.cols())?;
    let (w_b, w_t) = class_count_weights(cfg.c_old, cfg.c_new)?;
    let v_blend_t = blend_coefficients(&vb_t, &vt_t, w_b, w_t)?;
    let mask = make_gating_mask(sigma.len(), cfg)?;
    let v_final_t = apply_gated_update(&vb_t, &v_blend_t, &mask)?;
    reconstruct(&SvdFactors {
        u,
        sigma,
        vt: v_final_t,
    })
}

/// Class-count weighted average for one-dimensional parameters.
pub fn merge_vector(v_base: &[f64], v_new: &[f64], cfg: &MergeConfig) -> Result<Vec<f64>> {
    if v_base.len() != v_new.len() {
        return Err(Error::LengthMismatch {
            op: "merge_vector",
            expected: v_base.len(),
            got: v_new.len(),
        });
    }
    let (w_b, w_t) = class_count_weights(cfg.c_old, cfg.c_new)?;
    Ok(v_base
        .iter()
        .zip(v_new)
        .map(|(b, t)| w_b * b + w_t * t)
        .collect())
}

/// Merges every parameter of two same-architecture adapters: matrices through
/// the spectral pipeline, vectors by weighted average, scale carried from the
/// base.
///
/// Both projections enter the decomposition with feature-dimension rows, so
/// the shared basis always spans the feature space the adapters have in
/// common; `w_down` is stored hidden-major and is transposed around its
/// merge.
pub fn merge_adapter(
    base: &AdapterParams,
    new: &AdapterParams,
    cfg: &MergeConfig,
) -> Result<AdapterParams> {
    if !base.same_architecture(new) {
        return Err(Error::ShapeMismatch {
            op: "merge_adapter",
            expected: (base.feature_dim(), base.hidden_dim()),
            got: (new.feature_dim(), new.hidden_dim()),
        });
    }
    let w_down = merge_matrix(&base.w_down.transpose(), &new.w_down.transpose(), cfg)?.transpose();
    Ok(AdapterParams {
        w_down,
        w_up: merge_matrix(&base.w_up, &new.w_up, cfg)?,
        ln_gain: merge_vector(&base.ln_gain, &new.ln_gain, cfg)?,
        ln_bias: merge_vector(&base.ln_bias, &new.ln_bias, cfg)?,
        scale: base.scale,
    })
}
