//! Error-transfer analysis of one gain update.
//!
//! Between iterations the stacked error `[e(nΔt), …, e(Δt)]` propagates as
//! `e_{k+1} = G e_k`, with `G` block upper triangular in 3×3 blocks:
//!
//! * diagonal block for time `j`: `a_j = Σ_{l=0}^{j} (−α₀)^l`
//! * block at (row `j`, column `i < j`): `b_i c_i d_{i+1} ⋯ d_{j−1}`
//!   with `b_i = I − a_i`.
//!
//! `G_m` replaces each block by its infinity norm. Since `|G|_∞ ≤ |G_m|_∞`,
//! `|G_m|_∞ < 1` certifies a contraction of the update.

use serde::{Deserialize, Serialize};

use crate::admittance::{c_matrix, Channels};
use crate::error::{Error, Result};
use crate::harness::CurvePoint;
use crate::ilc::{c_times_pinv, EstimatorState, GainSchedule, IterationRecord};
use crate::numerics::{inf_norm, mat_mul, Mat};

/// Operands of the transfer matrix for horizon `n = c.len()`.
/// `c[i-1]` and `d[i-1]` hold `c_i` and `d_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferOperands {
    alpha0: Mat,
    c: Vec<Mat>,
    d: Vec<Mat>,
}

impl TransferOperands {
    pub fn new(alpha0: Mat, c: Vec<Mat>, d: Vec<Mat>) -> Result<Self> {
        let (p, q) = alpha0.shape();
        if p != q {
            return Err(Error::Dimension(format!(
                "alpha0 must be square, got {p}x{q}"
            )));
        }
        if c.is_empty() {
            return Err(Error::InvalidParameter(
                "transfer horizon must be >= 1".into(),
            ));
        }
        if c.len() != d.len() {
            return Err(Error::Dimension(format!(
                "{} c-blocks but {} d-blocks",
                c.len(),
                d.len()
            )));
        }
        if c.iter().chain(&d).any(|m| m.shape() != (p, p)) {
            return Err(Error::Dimension(format!("all blocks must be {p}x{p}")));
        }
        if !alpha0.is_finite() || c.iter().chain(&d).any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("transfer operands"));
        }
        Ok(Self { alpha0, c, d })
    }

    /// Same `c` and `d` block at every step.
    pub fn constant(alpha0: Mat, c: Mat, d: Mat, n: usize) -> Result<Self> {
        Self::new(alpha0, vec![c; n], vec![d; n])
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn block_size(&self) -> usize {
        self.alpha0.rows()
    }

    pub fn alpha0(&self) -> &Mat {
        &self.alpha0
    }

    pub fn c(&self, i: usize) -> &Mat {
        &self.c[i - 1]
    }

    pub fn d(&self, i: usize) -> &Mat {
        &self.d[i - 1]
    }

    /// `n_α = |α₀|_∞`.
    pub fn n_alpha(&self) -> f64 {
        inf_norm(&self.alpha0)
    }

    /// `n_cu = max_i |c_i|_∞`.
    pub fn n_cu(&self) -> f64 {
        self.c.iter().map(inf_norm).fold(0.0, f64::max)
    }
}

/// `a_i = Σ_{l=0}^{i} (−α₀)^l`.
pub fn block_a(alpha0: &Mat, i: usize) -> Mat {
    let neg = alpha0.scale(-1.0);
    let mut power = Mat::identity(alpha0.rows());
    let mut sum = power.clone();
    for _ in 0..i {
        power = mat_mul(&power, &neg).expect("square");
        sum = sum.add(&power).expect("same shape");
    }
    sum
}

/// `b_i = −Σ_{l=1}^{i} (−α₀)^l`, summed independently of [`block_a`].
pub fn block_b(alpha0: &Mat, i: usize) -> Mat {
    let neg = alpha0.scale(-1.0);
    let mut power = Mat::identity(alpha0.rows());
    let mut sum = Mat::zeros(alpha0.rows(), alpha0.rows());
    for _ in 0..i {
        power = mat_mul(&power, &neg).expect("square");
        sum = sum.sub(&power).expect("same shape");
    }
    sum
}

/// Walks every nonzero block of `G` once, in O(n²) block products. `visit`
/// receives `(row time j, column time i, block)`.
fn for_each_block(ops: &TransferOperands, mut visit: impl FnMut(usize, usize, &Mat)) {
    let n = ops.n();
    let p = ops.block_size();
    let neg = ops.alpha0.scale(-1.0);
    let identity = Mat::identity(p);
    let mut power = identity.clone();
    let mut a = identity.clone();
    for i in 1..=n {
        power = mat_mul(&power, &neg).expect("square");
        a = a.add(&power).expect("same shape");
        visit(i, i, &a);
        if i == n {
            break;
        }
        let b = identity.sub(&a).expect("same shape");
        let mut chain = mat_mul(&b, ops.c(i)).expect("square");
        for j in i + 1..=n {
            visit(j, i, &chain);
            if j < n {
                chain = mat_mul(&chain, ops.d(j)).expect("square");
            }
        }
    }
}

/// Dense `G` with block rows and columns ordered by time `n, n−1, …, 1`.
pub fn assemble_g(ops: &TransferOperands) -> Mat {
    let n = ops.n();
    let p = ops.block_size();
    let mut g = Mat::zeros(n * p, n * p);
    for_each_block(ops, |j, i, block| {
        let (r0, c0) = ((n - j) * p, (n - i) * p);
        for r in 0..p {
            for c in 0..p {
                g[(r0 + r, c0 + c)] = block[(r, c)];
            }
        }
    });
    g
}

/// `G_m`: infinity norm of each block of `G`, same ordering.
pub fn assemble_gm(ops: &TransferOperands) -> Mat {
    let n = ops.n();
    let mut gm = Mat::zeros(n, n);
    for_each_block(ops, |j, i, block| gm[(n - j, n - i)] = inf_norm(block));
    gm
}

/// Result of checking one gain update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    #[serde(rename = "norm_G")]
    pub norm_g: f64,
    #[serde(rename = "norm_Gm")]
    pub norm_gm: f64,
    /// `None` when `n_cu ≥ 1` or `n_α = 0`, where the closed form is undefined.
    pub closed_form_bound: Option<f64>,
    pub n_alpha: f64,
    pub n_cu: f64,
    /// `norm_Gm < 1`.
    pub passes: bool,
    pub horizon: usize,
}

/// Both norms from row sums accumulated block by block, without forming `G`.
pub fn certify(ops: &TransferOperands) -> Certificate {
    let n = ops.n();
    let p = ops.block_size();
    let mut rows_g = vec![vec![0.0; p]; n + 1];
    let mut rows_gm = vec![0.0; n + 1];
    for_each_block(ops, |j, _, block| {
        for (r, acc) in rows_g[j].iter_mut().enumerate() {
            *acc += block.row_slice(r).iter().map(|v| v.abs()).sum::<f64>();
        }
        rows_gm[j] += inf_norm(block);
    });
    let norm_g = rows_g.iter().flatten().cloned().fold(0.0, f64::max);
    let norm_gm = rows_gm.iter().cloned().fold(0.0, f64::max);
    let (n_alpha, n_cu) = (ops.n_alpha(), ops.n_cu());
    Certificate {
        norm_g,
        norm_gm,
        closed_form_bound: closed_form_bound(n_alpha, n_cu).ok(),
        n_alpha,
        n_cu,
        passes: norm_gm < 1.0,
        horizon: n,
    }
}

/// `(1 + n_α n_cu / (1 − n_cu)) / (1 + n_α)`, the geometric-series bound on
/// `|G_m|_∞`. Below one exactly when `n_cu < 1/2`.
pub fn closed_form_bound(n_alpha: f64, n_cu: f64) -> Result<f64> {
    if !(n_alpha > 0.0) || !n_alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "n_alpha must be > 0, got {n_alpha}"
        )));
    }
    if !(n_cu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "n_cu must be > 0, got {n_cu}"
        )));
    }
    if n_cu >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "n_cu must be < 1 for the geometric series, got {n_cu}"
        )));
    }
    Ok((1.0 + n_alpha * n_cu / (1.0 - n_cu)) / (1.0 + n_alpha))
}

/// Exact `|G_m|_∞` for scalar constant blocks `α₀ = n_α`, `|c_i| = |d_i| = n_cu`:
/// the largest row sum `a_j + Σ_{m<j} b_m n_cu^{j−m}` with
/// `a_j = (1 − (−n_α)^{j+1}) / (1 + n_α)` and
/// `b_m = n_α (1 − (−n_α)^m) / (1 + n_α)`.
pub fn scalar_row_sum(n_alpha: f64, n_cu: f64, n: usize) -> f64 {
    let neg = -n_alpha;
    let a = |j: usize| (1.0 - neg.powi(j as i32 + 1)) / (1.0 + n_alpha);
    let b = |m: usize| n_alpha * (1.0 - neg.powi(m as i32)) / (1.0 + n_alpha);
    (1..=n)
        .map(|j| {
            a(j).abs()
                + (1..j)
                    .map(|m| b(m).abs() * n_cu.powi((j - m) as i32))
                    .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// `V_k = |e_k|²_∞` and the start of its non-increasing tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSeq {
    pub v: Vec<f64>,
    pub monotone_from: usize,
}

pub fn lyapunov(e_inf: &[f64]) -> Result<LyapunovSeq> {
    if e_inf.is_empty() {
        return Err(Error::InvalidParameter("empty learning curve".into()));
    }
    let v: Vec<f64> = e_inf.iter().map(|e| e * e).collect();
    let mut k0 = v.len() - 1;
    while k0 > 0 && v[k0] <= v[k0 - 1] {
        k0 -= 1;
    }
    Ok(LyapunovSeq {
        v,
        monotone_from: k0,
    })
}

pub fn lyapunov_of_curve(points: &[CurvePoint]) -> Result<LyapunovSeq> {
    lyapunov(&points.iter().map(|p| p.e_inf).collect::<Vec<_>>())
}

/// Which output map enters `α₀`, `c_i` and `d_i` for a learning run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMapSource {
    /// The learner's own estimate `Ĉ`.
    #[default]
    Estimated,
    /// `C` at the secant stiffness the plant actually saw.
    True,
}

/// Transfer operands for the update `U_k → U_{k+1}` that consumed `rec`.
///
/// `α₀` is the largest (in infinity norm) of `α C(τ) Ĉ⁺(τ)` over τ = 1..n.
/// `c_n` and `d_n` never enter `G` and are left at zero.
pub fn operands_from_update(
    alpha: f64,
    est: &EstimatorState,
    rec: &IterationRecord,
    u_k: &GainSchedule,
    u_next: &GainSchedule,
    source: OutputMapSource,
) -> Result<TransferOperands> {
    let n = u_k.len();
    if rec.horizon() != n || u_next.len() != n || est.c_hat().len() != n + 1 {
        return Err(Error::Horizon {
            expected: n,
            got: rec.horizon(),
        });
    }
    let map = |t: usize| match source {
        OutputMapSource::Estimated => est.c_hat()[t].clone(),
        OutputMapSource::True => c_matrix(rec.k_env[t]),
    };

    let mut alpha0 = Mat::zeros(3, 3);
    let mut best = -1.0;
    for tau in 1..=n {
        let cand = c_times_pinv(&map(tau), &est.c_hat()[tau])?.scale(alpha);
        let norm = inf_norm(&cand);
        if norm > best {
            best = norm;
            alpha0 = cand;
        }
    }

    let mut c = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for i in 1..=n {
        if i < n {
            let next = map(i + 1);
            c.push(mat_mul(&next, u_k.gains[i].as_mat())?);
            d.push(mat_mul(&next, u_next.gains[i].as_mat())?.scale(-1.0));
        } else {
            c.push(Mat::zeros(3, 3));
            d.push(Mat::zeros(3, 3));
        }
    }
    TransferOperands::new(alpha0, c, d)
}

/// Stacks `[e(nΔt), …, e(Δt)]` as in the layout of `G`.
pub fn stack_errors(errors: &[Channels]) -> Vec<f64> {
    errors[1..]
        .iter()
        .rev()
        .flat_map(|e| e.to_array())
        .collect()
}

/// Relative infinity-norm gap between the simulated next error and `G e_k`.
/// A diagnostic only: the propagation model is not exact for this plant.
pub fn transfer_deviation(g: &Mat, e_k: &[Channels], e_next: &[Channels]) -> Result<f64> {
    let now = stack_errors(e_k);
    let next = stack_errors(e_next);
    let pred = g.mul_vec(&now)?;
    if pred.len() != next.len() {
        return Err(Error::Dimension("error stacks differ in length".into()));
    }
    let gap = pred
        .iter()
        .zip(&next)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = next.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(gap / scale.max(f64::MIN_POSITIVE))
}
