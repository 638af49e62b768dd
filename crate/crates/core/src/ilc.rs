//! ILC-MBK: iterative learning on the admittance gain matrix.
//!
//! Each iteration runs the plant with a fixed gain schedule `U_k(t)`, then
//!
//! 1. refreshes the per-time output-map estimate `Ĉ(t)` with a projection
//!    step on the previous iteration's data, and
//! 2. applies the rank-one correction
//!    `U_{k+1}(t) = U_k(t) + α Ĉ⁺(t+Δt) e_k(t+Δt) e_k⁺(t)`,
//!    scaled down whenever its infinity norm exceeds `clamp_limit`.

use serde::{Deserialize, Serialize};

use crate::admittance::{
    build_gain, c_matrix, param_vector, simulate_iteration, transfer_dc, AdmittanceParams,
    Channels, GainConstants, GainMatrix, OutputVector, StateError,
};
use crate::convergence::{
    certify, operands_from_update, Certificate, OutputMapSource, TransferOperands,
};
use crate::error::{Error, Result};
use crate::harness::{rmse, CurvePoint};
use crate::numerics::{dot, inf_norm, mat_mul, norm2, pinv, vec_pinv, Mat, ZERO_ERROR_GUARD};
use crate::plant::{EnvironmentModel, ReferenceTrajectory};

/// Learning aborts once `|e_k|_inf` exceeds this multiple of the first
/// iteration's value.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// One gain matrix per control step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub dt: f64,
    pub gains: Vec<GainMatrix>,
}

impl GainSchedule {
    pub fn constant(gain: GainMatrix, horizon: usize, dt: f64) -> Self {
        Self {
            dt,
            gains: vec![gain; horizon],
        }
    }

    /// Schedule built from physical parameters, identical at every step.
    pub fn from_params(p: &AdmittanceParams, horizon: usize, dt: f64) -> Result<Self> {
        let g = build_gain(&param_vector(p)?, &GainConstants::new(dt)?);
        Ok(Self::constant(g, horizon, dt))
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Largest relative drift from the `(m, b, k)` manifold over the horizon.
    pub fn max_manifold_drift(&self) -> f64 {
        self.gains
            .iter()
            .map(|g| g.manifold_drift(self.dt))
            .fold(0.0, f64::max)
    }
}

/// Per-time output-map estimates and the projection constants.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    c_hat: Vec<Mat>,
    mu: f64,
    eta: f64,
}

impl EstimatorState {
    pub fn new(c_hat: Vec<Mat>, mu: f64, eta: f64) -> Result<Self> {
        check_projection_constants(mu, eta)?;
        if c_hat.iter().any(|c| c.shape() != (3, 2)) {
            return Err(Error::Dimension("output-map estimates must be 3x2".into()));
        }
        Ok(Self { c_hat, mu, eta })
    }

    /// `samples` copies of `C(k_env)`.
    pub fn from_stiffness(k_env: f64, samples: usize, mu: f64, eta: f64) -> Result<Self> {
        Self::new(vec![c_matrix(k_env); samples], mu, eta)
    }

    pub fn c_hat(&self) -> &[Mat] {
        &self.c_hat
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

pub(crate) fn check_projection_constants(mu: f64, eta: f64) -> Result<()> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidParameter(format!("mu must be > 0, got {mu}")));
    }
    if !(eta > 0.0 && eta <= 2.0) {
        return Err(Error::InvalidParameter(format!(
            "eta must lie in (0, 2], got {eta}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub alpha: f64,
    /// Set from the experiment, not from the `[learn]` table.
    #[serde(skip)]
    pub iterations: usize,
    /// Largest allowed infinity norm of one step's gain correction.
    pub clamp_limit: f64,
    pub mu: f64,
    pub eta: f64,
    /// Certificates use the plant's secant-stiffness map instead of `Ĉ`.
    pub true_c: bool,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            iterations: 750,
            clamp_limit: 10.0,
            mu: 1.0,
            eta: 1.0,
            true_c: false,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be >= 1".into()));
        }
        if !(self.clamp_limit > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "clamp_limit must be > 0, got {}",
                self.clamp_limit
            )));
        }
        check_projection_constants(self.mu, self.eta)
    }
}

/// Trajectories of one iteration and their summary metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub states: Vec<StateError>,
    pub outputs: Vec<OutputVector>,
    /// `e(t) = r(t) − y(t)` for t = 0..=n.
    pub errors: Vec<Channels>,
    pub k_env: Vec<f64>,
    pub rmse_position: f64,
    pub rmse_force: f64,
    /// Max-abs entry of the stacked error `[e(nΔt) … e(Δt)]`; the fixed
    /// initial error is left out.
    pub e_inf: f64,
}

impl IterationRecord {
    pub fn new(
        states: Vec<StateError>,
        outputs: Vec<OutputVector>,
        errors: Vec<Channels>,
        k_env: Vec<f64>,
    ) -> Self {
        let pos: Vec<f64> = errors.iter().map(|e| e.x).collect();
        let force: Vec<f64> = errors.iter().map(|e| e.f).collect();
        let e_inf = errors[1..].iter().map(|e| e.max_abs()).fold(0.0, f64::max);
        Self {
            rmse_position: rmse(&pos).expect("non-empty record"),
            rmse_force: rmse(&force).expect("non-empty record"),
            e_inf,
            states,
            outputs,
            errors,
            k_env,
        }
    }

    pub fn horizon(&self) -> usize {
        self.errors.len() - 1
    }

    fn is_finite(&self) -> bool {
        self.e_inf.is_finite() && self.rmse_position.is_finite() && self.rmse_force.is_finite()
    }
}

/// One normalised projection step:
/// `Ĉ' = Ĉ + η (y − Ĉ φ) φᵀ / (μ + |φ|²)`.
pub fn projection_update(c_hat: &Mat, phi: &[f64], y: &[f64], mu: f64, eta: f64) -> Result<Mat> {
    let pred = c_hat.mul_vec(phi)?;
    if pred.len() != y.len() {
        return Err(Error::Dimension(format!(
            "estimator output has {} rows, measurement has {}",
            pred.len(),
            y.len()
        )));
    }
    let residual: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
    let gain = eta / (mu + dot(phi, phi));
    c_hat.add(&Mat::outer(&residual, phi).scale(gain))
}

/// Refreshes `Ĉ(t)` at every time index from the previous iteration, with
/// regressor `φ(t) = s(t) + T_DC r(t)`.
pub fn estimate_output_map(
    est: &EstimatorState,
    prev: &IterationRecord,
    reference: &ReferenceTrajectory,
) -> Result<EstimatorState> {
    let samples = reference.samples.len();
    if prev.errors.len() != samples || est.c_hat.len() != samples {
        return Err(Error::Horizon {
            expected: reference.horizon(),
            got: prev.horizon().min(est.c_hat.len().saturating_sub(1)),
        });
    }
    let t_dc = transfer_dc();
    let c_hat = (0..samples)
        .map(|t| {
            let s = prev.states[t].to_array();
            let tr = t_dc.mul_vec(&reference.samples[t].to_array())?;
            let phi = [s[0] + tr[0], s[1] + tr[1]];
            projection_update(
                &est.c_hat[t],
                &phi,
                &prev.outputs[t].to_array(),
                est.mu,
                est.eta,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimatorState {
        c_hat,
        mu: est.mu,
        eta: est.eta,
    })
}

/// What the gain update did across the horizon.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClampReport {
    /// Steps whose correction was scaled down to the clamp limit.
    pub clamped: usize,
    /// Steps left unchanged because `|e(t)|` or `|e(t+Δt)|` vanished.
    pub frozen: usize,
    /// Largest correction norm before clamping.
    pub max_correction: f64,
}

/// Rank-one gain correction `α Ĉ⁺(t+Δt) e(t+Δt) e⁺(t)` at one step, before
/// clamping. `None` when the step is frozen.
pub fn gain_correction(
    c_next: &Mat,
    e_now: &Channels,
    e_next: &Channels,
    alpha: f64,
) -> Result<Option<Mat>> {
    let now = e_now.to_array();
    let next = e_next.to_array();
    if norm2(&now) <= ZERO_ERROR_GUARD || norm2(&next) == 0.0 {
        return Ok(None);
    }
    let ds = pinv(c_next)?.mul_vec(&next)?;
    Ok(Some(Mat::outer(&ds, &vec_pinv(&now)).scale(alpha)))
}

pub fn update_gain(
    u_k: &GainSchedule,
    est: &EstimatorState,
    rec: &IterationRecord,
    alpha: f64,
    clamp_limit: f64,
) -> Result<(GainSchedule, ClampReport)> {
    let n = u_k.len();
    if rec.horizon() != n {
        return Err(Error::Horizon {
            expected: n,
            got: rec.horizon(),
        });
    }
    if est.c_hat.len() != n + 1 {
        return Err(Error::Horizon {
            expected: n,
            got: est.c_hat.len().saturating_sub(1),
        });
    }
    let mut report = ClampReport::default();
    let mut gains = Vec::with_capacity(n);
    for t in 0..n {
        let current = &u_k.gains[t];
        match gain_correction(&est.c_hat[t + 1], &rec.errors[t], &rec.errors[t + 1], alpha)? {
            None => {
                report.frozen += 1;
                gains.push(current.clone());
            }
            Some(mut corr) => {
                let norm = inf_norm(&corr);
                report.max_correction = report.max_correction.max(norm);
                if norm > clamp_limit {
                    corr = corr.scale(clamp_limit / norm);
                    report.clamped += 1;
                }
                gains.push(GainMatrix::new(current.as_mat().add(&corr)?)?);
            }
        }
    }
    Ok((GainSchedule { dt: u_k.dt, gains }, report))
}

/// Everything a learning run produces.
#[derive(Debug, Clone)]
pub struct LearningOutcome {
    pub points: Vec<CurvePoint>,
    pub gains: GainSchedule,
    pub estimator: EstimatorState,
    pub first: IterationRecord,
    pub last: IterationRecord,
    /// Certificate of the final gain update.
    pub certificate: Certificate,
    pub last_operands: TransferOperands,
    pub clamped_total: usize,
    pub max_manifold_drift: f64,
}

/// Runs ILC-MBK for `cfg.iterations` passes from the initial parameters.
/// Every pass starts from the same state error `s0`.
pub fn run_learning(
    cfg: &LearnConfig,
    env: &EnvironmentModel,
    reference: &ReferenceTrajectory,
    init: &AdmittanceParams,
    s0: StateError,
) -> Result<LearningOutcome> {
    cfg.validate()?;
    let n = reference.horizon();
    let dt = reference.dt;
    let mut gains = GainSchedule::from_params(init, n, dt)?;
    let mut est = EstimatorState::from_stiffness(env.tangent_at_origin(), n + 1, cfg.mu, cfg.eta)?;
    let source = if cfg.true_c {
        OutputMapSource::True
    } else {
        OutputMapSource::Estimated
    };

    let mut points = Vec::with_capacity(cfg.iterations);
    let mut first: Option<IterationRecord> = None;
    let mut prev: Option<IterationRecord> = None;
    let mut certificate = None;
    let mut last_operands = None;
    let mut clamped_total = 0;
    let mut max_drift: f64 = 0.0;

    for k in 0..cfg.iterations {
        let rec = simulate_iteration(&gains, env, reference, s0)?;
        let initial = first.as_ref().map_or(rec.e_inf, |f| f.e_inf);
        if !rec.is_finite() || (initial > 0.0 && rec.e_inf > DIVERGENCE_FACTOR * initial) {
            return Err(Error::Diverged {
                iteration: k,
                e_inf: rec.e_inf,
                initial,
            });
        }
        if let Some(p) = &prev {
            est = estimate_output_map(&est, p, reference)?;
        }
        let (next, report) = update_gain(&gains, &est, &rec, cfg.alpha, cfg.clamp_limit)?;
        clamped_total += report.clamped;

        let ops = operands_from_update(cfg.alpha, &est, &rec, &gains, &next, source)?;
        let cert = certify(&ops);
        points.push(CurvePoint {
            iteration: k,
            rmse_position: rec.rmse_position,
            rmse_force: rec.rmse_force,
            e_inf: rec.e_inf,
            cert_norm_gm: cert.norm_gm,
        });
        max_drift = max_drift.max(next.max_manifold_drift());
        certificate = Some(cert);
        last_operands = Some(ops);
        gains = next;
        if first.is_none() {
            first = Some(rec.clone());
        }
        prev = Some(rec);
    }

    Ok(LearningOutcome {
        points,
        gains,
        estimator: est,
        first: first.expect("at least one iteration"),
        last: prev.expect("at least one iteration"),
        certificate: certificate.expect("at least one iteration"),
        last_operands: last_operands.expect("at least one iteration"),
        clamped_total,
        max_manifold_drift: max_drift,
    })
}

/// `C(t) Ĉ⁺(t)` helper shared with the certificate code.
pub(crate) fn c_times_pinv(c: &Mat, c_hat: &Mat) -> Result<Mat> {
    mat_mul(c, &pinv(c_hat)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::make_reference;

    fn rec_from_errors(errors: Vec<Channels>) -> IterationRecord {
        let n = errors.len();
        IterationRecord::new(
            vec![StateError::default(); n],
            vec![Channels::default(); n],
            errors,
            vec![0.0; n],
        )
    }

    #[test]
    fn projection_zero_innovation() {
        let c = Mat::from_rows(&[[-1.0, 0.0], [0.0, -1.0], [0.0, -5.0]]);
        let phi = [0.3, -0.2];
        let y = c.mul_vec(&phi).unwrap();
        assert_eq!(projection_update(&c, &phi, &y, 1.0, 1.0).unwrap(), c);
    }

    #[test]
    fn projection_scalar_hand_value() {
        let c = Mat::from_rows(&[[0.5]]);
        let next = projection_update(&c, &[2.0], &[2.0], 1.0, 1.0).unwrap();
        assert!((next[(0, 0)] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn projection_zero_regressor() {
        let c = Mat::from_rows(&[[0.5]]);
        let next = projection_update(&c, &[0.0], &[123.0], 1.0, 2.0).unwrap();
        assert_eq!(next, c);
    }

    #[test]
    fn estimator_constants_enforced() {
        assert!(EstimatorState::from_stiffness(1.0, 3, 0.0, 1.0).is_err());
        assert!(EstimatorState::from_stiffness(1.0, 3, 1.0, 0.0).is_err());
        assert!(EstimatorState::from_stiffness(1.0, 3, 1.0, 2.5).is_err());
        assert!(EstimatorState::from_stiffness(1.0, 3, 1.0, 2.0).is_ok());
    }

    #[test]
    fn update_is_identity_on_zero_error() {
        let g =
            GainSchedule::from_params(&AdmittanceParams::new(12.0, 19.0, 2784.0).unwrap(), 4, 0.05)
                .unwrap();
        let est = EstimatorState::from_stiffness(1000.0, 5, 1.0, 1.0).unwrap();
        let rec = rec_from_errors(vec![Channels::default(); 5]);
        let (next, report) = update_gain(&g, &est, &rec, 0.3, 10.0).unwrap();
        assert_eq!(next, g);
        assert_eq!(report.frozen, 4);
    }

    #[test]
    fn correction_matches_dense_oracle() {
        // Ĉ = [[-1,0],[0,-1],[0,-1000]] has orthogonal columns, so
        // Ĉ⁺ = diag(1/|c1|², 1/|c2|²) Ĉᵀ can be written down directly.
        let c = c_matrix(1000.0);
        let pinv_oracle = Mat::from_rows(&[
            [-1.0, 0.0, 0.0],
            [0.0, -1.0 / (1.0 + 1e6), -1000.0 / (1.0 + 1e6)],
        ]);
        let e_now = Channels::new(0.0, 0.0, 1.0);
        let e_next = Channels::new(0.0, 0.0, 0.5);
        let ds = pinv_oracle.mul_vec(&[0.0, 0.0, 0.5]).unwrap();
        let want = Mat::outer(&ds, &[0.0, 0.0, 1.0]).scale(0.3);
        let got = gain_correction(&c, &e_now, &e_next, 0.3).unwrap().unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!(
                    (got[(i, j)] - want[(i, j)]).abs() <= 1e-15,
                    "{got:?} vs {want:?}"
                );
            }
        }
    }

    #[test]
    fn corrections_are_rank_one_and_clamped() {
        let g = GainSchedule::from_params(&AdmittanceParams::new(1.0, 1.0, 1.0).unwrap(), 3, 0.05)
            .unwrap();
        let est = EstimatorState::from_stiffness(2.0, 4, 1.0, 1.0).unwrap();
        let rec = rec_from_errors(vec![
            Channels::new(1e-3, 2e-3, -0.01),
            Channels::new(5.0, -3.0, 40.0),
            Channels::new(-0.2, 0.1, 0.3),
            Channels::new(0.05, 0.0, -0.02),
        ]);
        let (next, report) = update_gain(&g, &est, &rec, 0.9, 1.0).unwrap();
        assert!(report.clamped >= 1);
        for t in 0..3 {
            let d = next.gains[t].as_mat().sub(g.gains[t].as_mat()).unwrap();
            assert!(inf_norm(&d) <= 1.0 + 1e-12);
            // rank one: the 2x2 minors vanish
            for (a, b) in [(0, 1), (0, 2), (1, 2)] {
                let minor = d[(0, a)] * d[(1, b)] - d[(0, b)] * d[(1, a)];
                assert!(minor.abs() <= 1e-12 * (1.0 + d.max_abs().powi(2)));
            }
        }
    }

    #[test]
    fn update_rejects_horizon_mismatch() {
        let g = GainSchedule::from_params(&AdmittanceParams::new(1.0, 1.0, 1.0).unwrap(), 3, 0.05)
            .unwrap();
        let est = EstimatorState::from_stiffness(2.0, 4, 1.0, 1.0).unwrap();
        let rec = rec_from_errors(vec![Channels::default(); 3]);
        assert!(matches!(
            update_gain(&g, &est, &rec, 0.3, 10.0),
            Err(Error::Horizon { .. })
        ));
    }

    #[test]
    fn single_iteration_run() {
        let env = EnvironmentModel::linear("lin", 1000.0, 0.01).unwrap();
        let r = make_reference(&env, 0.004, 1.0, 0.05).unwrap();
        let p = AdmittanceParams::new(12.0, 19.0, 2784.0).unwrap();
        let cfg = LearnConfig {
            iterations: 1,
            ..LearnConfig::default()
        };
        let out = run_learning(&cfg, &env, &r, &p, StateError::new(-0.002, 0.0)).unwrap();
        assert_eq!(out.points.len(), 1);
        let before = GainSchedule::from_params(&p, r.horizon(), 0.05).unwrap();
        assert_ne!(out.gains, before);
    }

    #[test]
    fn config_validation() {
        let bad = [
            LearnConfig {
                alpha: 0.0,
                ..Default::default()
            },
            LearnConfig {
                iterations: 0,
                ..Default::default()
            },
            LearnConfig {
                clamp_limit: -1.0,
                ..Default::default()
            },
            LearnConfig {
                eta: 3.0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(LearnConfig::default().validate().is_ok());
    }
}
