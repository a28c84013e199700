//! Dense row-major matrices and a thin singular value decomposition.
//!
//! The SVD is a one-sided Jacobi iteration: columns of the working matrix are
//! pairwise orthogonalized with plane rotations accumulated into `V`, until
//! every off-diagonal entry of the implicit Gram matrix is below a relative
//! tolerance. Column norms then give the singular values and the normalized
//! columns give `U`. Wide inputs are handled by decomposing the transpose and
//! swapping the factor roles.
//!
//! All factors follow a fixed sign convention (the largest-magnitude entry of
//! each `U` column is nonnegative, ties to the lowest row) so that repeated
//! decompositions of identical inputs are bit-identical and downstream
//! splits of `V^T` are reproducible.

use crate::error::{Error, Result};

/// Relative off-diagonal tolerance for Jacobi convergence.
const JACOBI_TOL: f64 = 1e-12;
/// Sweep cap before reporting non-convergence.
const MAX_SWEEPS: usize = 60;
/// Squared-norm floor, relative to the total squared norm, below which a
/// work column is numerically zero. Rank-deficient inputs leave such columns
/// as rotation round-off; their dot products are pure noise and would
/// otherwise fail the relative criterion forever.
const COLUMN_FLOOR_REL: f64 = 1e-28;

/// Dense real matrix, row-major, always non-empty and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting empty shapes,
    /// length mismatches, and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyDims { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(Error::DataLength {
                expected: rows * cols,
                got: data.len(),
            });
        }
        let m = Matrix { rows, cols, data };
        m.ensure_finite("matrix data")?;
        Ok(m)
    }

    /// All-zero matrix. Panics on zero dimensions (programmer error).
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "zero matrix dimension");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Convenience constructor for literals in tests. Panics on ragged or
    /// empty input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        assert!(!rows.is_empty() && !rows[0].is_empty(), "empty matrix");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    /// Borrow one row as a slice.
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Errors with the position of the first non-finite entry, if any.
    pub fn ensure_finite(&self, place: &'static str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    place,
                    row: i / self.cols,
                    col: i % self.cols,
                });
            }
        }
        Ok(())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                expected: (self.cols, other.cols),
                got: (other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::LengthMismatch {
                op: "matvec",
                expected: self.cols,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        Ok(out)
    }

    /// Square root of the sum of squared entries.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute entrywise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "max_abs_diff",
                expected: (self.rows, self.cols),
                got: (other.rows, other.cols),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// `‖self − other‖_F / max(‖other‖_F, 1e-30)`.
    pub fn rel_frobenius_diff(&self, other: &Matrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "rel_frobenius_diff",
                expected: (self.rows, self.cols),
                got: (other.rows, other.cols),
            });
        }
        let diff: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        Ok(diff / other.frobenius_norm().max(1e-30))
    }

    /// Renders the text exchange format: a `rows cols` header line, then one
    /// line per row of space-separated values with 17 significant digits
    /// (enough to round-trip every double exactly).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{} {}\n", self.rows, self.cols));
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parses the text exchange format produced by [`Matrix::to_text`].
    pub fn from_text(text: &str) -> Result<Matrix> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let mut it = header.split_whitespace();
        let rows: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "bad row count".into(),
            })?;
        let cols: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "bad column count".into(),
            })?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (idx, line) = lines.next().ok_or(Error::Parse {
                line: rows + 1,
                message: "truncated matrix body".into(),
            })?;
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    message: format!("bad value `{tok}`"),
                })?;
                data.push(v);
            }
        }
        Matrix::new(rows, cols, data)
    }
}

/// Thin SVD factors: `u` (m x r, orthonormal columns), `sigma` (length r,
/// nonincreasing, nonnegative), `vt` (r x n, orthonormal rows), with
/// `r = min(m, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdFactors {
    /// Decomposition rank `r = min(m, n)`; zero singular values included.
    pub fn rank_dim(&self) -> usize {
        self.sigma.len()
    }
}

/// Column-major scratch space for the Jacobi iteration.
struct ColMajor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ColMajor {
    fn from_matrix(m: &Matrix) -> Self {
        let mut data = vec![0.0; m.rows * m.cols];
        for i in 0..m.rows {
            for j in 0..m.cols {
                data[j * m.rows + i] = m.data[i * m.cols + j];
            }
        }
        ColMajor {
            rows: m.rows,
            cols: m.cols,
            data,
        }
    }

    fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        ColMajor {
            rows: n,
            cols: n,
            data,
        }
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    fn col_sqnorm(&self, j: usize) -> f64 {
        self.col(j).iter().map(|v| v * v).sum()
    }

    fn col_dot(&self, p: usize, q: usize) -> f64 {
        self.col(p).iter().zip(self.col(q)).map(|(a, b)| a * b).sum()
    }

    /// Applies the plane rotation `[c -s; s c]` to columns `p` and `q`.
    fn rotate(&mut self, p: usize, q: usize, c: f64, s: f64) {
        let (lo, hi) = if p < q { (p, q) } else { (q, p) };
        let (head, tail) = self.data.split_at_mut(hi * self.rows);
        let col_lo = &mut head[lo * self.rows..(lo + 1) * self.rows];
        let col_hi = &mut tail[..self.rows];
        let (cp, cq) = if p < q { (col_lo, col_hi) } else { (col_hi, col_lo) };
        for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
            let x = *a;
            let y = *b;
            *a = c * x - s * y;
            *b = s * x + c * y;
        }
    }

    fn swap_cols(&mut self, p: usize, q: usize) {
        if p == q {
            return;
        }
        for i in 0..self.rows {
            self.data.swap(p * self.rows + i, q * self.rows + i);
        }
    }

    fn scale_col(&mut self, j: usize, factor: f64) {
        for v in &mut self.data[j * self.rows..(j + 1) * self.rows] {
            *v *= factor;
        }
    }

    /// Converts back to row-major, taking only the first `keep_cols` columns.
    fn into_matrix(self, keep_cols: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, keep_cols);
        for j in 0..keep_cols {
            for i in 0..self.rows {
                out.data[i * keep_cols + j] = self.data[j * self.rows + i];
            }
        }
        out
    }
}

/// One-sided Jacobi on a tall (or square) matrix, `rows >= cols`.
/// Returns (u: rows x cols, sigma: cols, v: cols x cols col-major).
fn jacobi_tall(a: &Matrix) -> Result<(ColMajor, Vec<f64>, ColMajor)> {
    debug_assert!(a.rows >= a.cols);
    let n = a.cols;
    let mut w = ColMajor::from_matrix(a);
    let mut v = ColMajor::identity(n);
    let floor_sq: f64 = COLUMN_FLOOR_REL * (0..n).map(|j| w.col_sqnorm(j)).sum::<f64>();

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        // Fresh norms each sweep so incremental updates cannot drift.
        let mut sq: Vec<f64> = (0..n).map(|j| w.col_sqnorm(j)).collect();
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                if sq[p] <= floor_sq || sq[q] <= floor_sq {
                    continue;
                }
                let c = w.col_dot(p, q);
                let bound = JACOBI_TOL * (sq[p] * sq[q]).sqrt();
                if c.abs() <= bound {
                    continue;
                }
                rotated = true;
                let zeta = (sq[q] - sq[p]) / (2.0 * c);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                w.rotate(p, q, cs, sn);
                v.rotate(p, q, cs, sn);
                let (ap, aq) = (sq[p], sq[q]);
                sq[p] = cs * cs * ap - 2.0 * cs * sn * c + sn * sn * aq;
                sq[q] = sn * sn * ap + 2.0 * cs * sn * c + cs * cs * aq;
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        // Residual off-diagonal norm of the implicit Gram matrix.
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let c = w.col_dot(p, q);
                off += 2.0 * c * c;
            }
        }
        return Err(Error::SvdNoConvergence {
            sweeps: MAX_SWEEPS,
            off_norm: off.sqrt(),
        });
    }

    // Singular values from final column norms; floored columns are exact
    // zeros (their content is round-off from annihilated directions).
    let mut sigma: Vec<f64> = (0..n)
        .map(|j| {
            let sq = w.col_sqnorm(j);
            if sq <= floor_sq {
                w.scale_col(j, 0.0);
                0.0
            } else {
                sq.sqrt()
            }
        })
        .collect();
    for i in 0..n {
        let mut max_j = i;
        for j in (i + 1)..n {
            if sigma[j] > sigma[max_j] {
                max_j = j;
            }
        }
        if max_j != i {
            sigma.swap(i, max_j);
            w.swap_cols(i, max_j);
            v.swap_cols(i, max_j);
        }
    }

    // Normalize nonzero columns of W into U; complete an orthonormal basis
    // for exactly-zero columns (rank-deficient inputs).
    for j in 0..n {
        if sigma[j] > 0.0 {
            w.scale_col(j, 1.0 / sigma[j]);
        } else {
            complete_basis_column(&mut w, j);
        }
    }

    Ok((w, sigma, v))
}

/// Replaces zero column `j` of `u` with a unit vector orthogonal to all other
/// columns, chosen deterministically from the best standard basis candidate.
fn complete_basis_column(u: &mut ColMajor, j: usize) {
    let m = u.rows;
    let n = u.cols;
    // Residual squared norm of e_i against the established columns is
    // 1 - sum_k u[i,k]^2; pick the candidate with the largest residual.
    let mut best_i = 0;
    let mut best_res = f64::NEG_INFINITY;
    for i in 0..m {
        let mut proj_sq = 0.0;
        for k in 0..n {
            if k == j {
                continue;
            }
            let e = u.data[k * m + i];
            proj_sq += e * e;
        }
        let res = 1.0 - proj_sq;
        if res > best_res {
            best_res = res;
            best_i = i;
        }
    }
    let mut cand = vec![0.0; m];
    cand[best_i] = 1.0;
    // Two Gram-Schmidt passes for orthogonality to machine precision.
    for _ in 0..2 {
        for k in 0..n {
            if k == j {
                continue;
            }
            let col = u.col(k);
            let dot: f64 = col.iter().zip(&cand).map(|(a, b)| a * b).sum();
            for (c, e) in cand.iter_mut().zip(col) {
                *c -= dot * e;
            }
        }
    }
    let norm = cand.iter().map(|v| v * v).sum::<f64>().sqrt();
    for (dst, c) in u.data[j * m..(j + 1) * m].iter_mut().zip(&cand) {
        *dst = c / norm;
    }
}

/// Fixes signs so that the largest-magnitude entry of each `u` column is
/// nonnegative (ties to the lowest row index), flipping `vt` rows to match.
fn apply_sign_convention(u: &mut Matrix, vt: &mut Matrix) {
    for k in 0..u.cols {
        let mut best_i = 0;
        let mut best_abs = -1.0;
        for i in 0..u.rows {
            let a = u.get(i, k).abs();
            if a > best_abs {
                best_abs = a;
                best_i = i;
            }
        }
        if u.get(best_i, k) < 0.0 {
            for i in 0..u.rows {
                let v = u.get(i, k);
                u.set(i, k, -v);
            }
            for j in 0..vt.cols {
                let v = vt.get(k, j);
                vt.set(k, j, -v);
            }
        }
    }
}

/// Full thin SVD `a = u * diag(sigma) * vt` with `r = min(m, n)`.
///
/// Zero singular values are kept (no truncation) and their `u` columns are
/// filled with an orthonormal completion, so the factor shapes never depend
/// on numerical rank.
pub fn thin_svd(a: &Matrix) -> Result<SvdFactors> {
    a.ensure_finite("svd input")?;
    if a.rows >= a.cols {
        let (w, sigma, v) = jacobi_tall(a)?;
        let mut u = w.into_matrix(a.cols);
        let mut vt = v.into_matrix(a.cols).transpose();
        apply_sign_convention(&mut u, &mut vt);
        Ok(SvdFactors { u, sigma, vt })
    } else {
        // a = u s vt  <=>  a^T = v s u^T: decompose the tall transpose and
        // swap the factor roles.
        let at = a.transpose();
        let (w, sigma, v) = jacobi_tall(&at)?;
        let mut u = v.into_matrix(a.rows);
        let mut vt = w.into_matrix(a.rows).transpose();
        apply_sign_convention(&mut u, &mut vt);
        Ok(SvdFactors { u, sigma, vt })
    }
}

/// Recomposes `u * diag(sigma) * vt`, validating factor shape consistency.
pub fn reconstruct(f: &SvdFactors) -> Result<Matrix> {
    let r = f.sigma.len();
    if f.u.cols != r || f.vt.rows != r {
        return Err(Error::ShapeMismatch {
            op: "reconstruct",
            expected: (f.u.cols, f.u.cols),
            got: (f.vt.rows, r),
        });
    }
    let mut scaled = f.vt.clone();
    for k in 0..r {
        for j in 0..scaled.cols {
            let v = scaled.get(k, j) * f.sigma[k];
            scaled.set(k, j, v);
        }
    }
    f.u.matmul(&scaled)
}

/// Horizontal concatenation `[a b]`; row counts must match.
pub fn concat_columns(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::ShapeMismatch {
            op: "concat_columns",
            expected: (a.rows, b.cols),
            got: (b.rows, b.cols),
        });
    }
    let cols = a.cols + b.cols;
    let mut out = Matrix::zeros(a.rows, cols);
    for i in 0..a.rows {
        out.data[i * cols..i * cols + a.cols].copy_from_slice(a.row(i));
        out.data[i * cols + a.cols..(i + 1) * cols].copy_from_slice(b.row(i));
    }
    Ok(out)
}

/// Splits columns into `[left | right]` blocks; `left_cols` must leave both
/// blocks non-empty.
pub fn split_columns(m: &Matrix, left_cols: usize) -> Result<(Matrix, Matrix)> {
    if left_cols == 0 || left_cols >= m.cols {
        return Err(Error::SplitOutOfRange {
            left_cols,
            cols: m.cols,
        });
    }
    let right_cols = m.cols - left_cols;
    let mut left = Matrix::zeros(m.rows, left_cols);
    let mut right = Matrix::zeros(m.rows, right_cols);
    for i in 0..m.rows {
        let row = m.row(i);
        left.data[i * left_cols..(i + 1) * left_cols].copy_from_slice(&row[..left_cols]);
        right.data[i * right_cols..(i + 1) * right_cols].copy_from_slice(&row[left_cols..]);
    }
    Ok((left, right))
}
