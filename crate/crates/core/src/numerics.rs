//! Small dense matrices.
//!
//! Everything in this crate works on matrices with a handful of rows (the
//! 2×3 gain, the 3×2 output map) plus the block transfer matrices, which
//! grow to a few hundred rows at most. A row-major `Vec<f64>` is enough.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default singular-value cutoff, relative to the largest singular value.
pub const PINV_RELATIVE_TOL: f64 = 1e-10;

/// Vectors with Euclidean norm at or below this are treated as zero by
/// [`vec_pinv`].
pub const ZERO_ERROR_GUARD: f64 = 1e-12;

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from rows. Panics on ragged or empty input; meant for
    /// literals.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        assert!(!rows.is_empty(), "from_rows: no rows");
        let cols = rows[0].as_ref().len();
        assert!(cols > 0, "from_rows: empty row");
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "from_rows: ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "from_fn: empty matrix");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| 0.0)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Column vector.
    pub fn column(v: &[f64]) -> Self {
        Self::from_fn(v.len(), 1, |i, _| v[i])
    }

    /// Row vector.
    pub fn row(v: &[f64]) -> Self {
        Self::from_fn(1, v.len(), |_, j| v[j])
    }

    /// `a bᵀ`
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        Self::from_fn(a.len(), b.len(), |i, j| a[i] * b[j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "elementwise op on {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Matrix–vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Dimension(format!(
                "{}x{} matrix times length-{} vector",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row_slice(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        assert!(
            i < self.rows && j < self.cols,
            "index ({i},{j}) out of bounds"
        );
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        assert!(
            i < self.rows && j < self.cols,
            "index ({i},{j}) out of bounds"
        );
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row_slice(i))?;
        }
        write!(f, "]")
    }
}

/// Standard matrix product `a · b`.
pub fn mat_mul(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != b.rows {
        return Err(Error::Dimension(format!(
            "product of {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            for j in 0..b.cols {
                out.data[i * b.cols + j] += aik * b.data[k * b.cols + j];
            }
        }
    }
    Ok(out)
}

/// Induced infinity norm: the largest absolute row sum.
pub fn inf_norm(m: &Mat) -> f64 {
    (0..m.rows)
        .map(|i| m.row_slice(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Moore–Penrose pseudoinverse with the default relative cutoff.
pub fn pinv(m: &Mat) -> Result<Mat> {
    pinv_with_tol(m, PINV_RELATIVE_TOL)
}

/// Moore–Penrose pseudoinverse. Singular values below `rel_tol` times the
/// largest one are treated as zero.
///
/// The singular pairs come from one-sided Jacobi rotations on the columns of
/// the tall orientation. For two columns (every gain and output map in this
/// crate) a single rotation diagonalises the 2×2 Gram matrix in closed form;
/// singular values are then read off the rotated column norms rather than as
/// square roots of Gram eigenvalues, so rank-one inputs resolve to a clean
/// zero instead of a `sqrt(eps)`-sized residue.
pub fn pinv_with_tol(m: &Mat, rel_tol: f64) -> Result<Mat> {
    if !(rel_tol > 0.0) || !rel_tol.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "pinv tolerance must be positive, got {rel_tol}"
        )));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("pinv input"));
    }
    if m.rows < m.cols {
        return Ok(pinv_tall(&m.transpose(), rel_tol).transpose());
    }
    Ok(pinv_tall(m, rel_tol))
}

fn pinv_tall(a: &Mat, rel_tol: f64) -> Mat {
    let (rows, cols) = a.shape();
    // Column-major working copy so rotations touch contiguous memory.
    let mut w: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| a[(i, j)]).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..cols).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let sigma: Vec<f64> = w.iter().map(|col| dot(col, col).sqrt()).collect();
    let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);
    let mut out = Mat::zeros(cols, rows);
    if sigma_max == 0.0 {
        return out;
    }
    let cutoff = rel_tol * sigma_max;
    for k in 0..cols {
        if sigma[k] <= cutoff {
            continue;
        }
        let inv_sq = 1.0 / (sigma[k] * sigma[k]);
        for i in 0..cols {
            let vi = v[k][i] * inv_sq;
            for j in 0..rows {
                out.data[i * rows + j] += vi * w[k][j];
            }
        }
    }
    out
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (xp, xq) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*xp, *xq);
        *xp = c * a - s * b;
        *xq = s * a + c * b;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Pseudoinverse of a column vector, returned as a row: `eᵀ / |e|²`, or all
/// zeros when `|e| <= ZERO_ERROR_GUARD`.
pub fn vec_pinv(e: &[f64]) -> Vec<f64> {
    let sq = dot(e, e);
    if sq.sqrt() <= ZERO_ERROR_GUARD {
        return vec![0.0; e.len()];
    }
    e.iter().map(|v| v / sq).collect()
}
