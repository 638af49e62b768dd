//! Comparison methods: fixed admittance gains, and a compact-form dynamic
//! linearization model-free adaptive ILC (MFAC) that tunes `u(t)` directly.

use serde::{Deserialize, Serialize};

use crate::admittance::{
    build_gain, param_vector, simulate_iteration, AdmittanceParams, Channels, GainConstants,
    ParamVector, StateError,
};
use crate::error::{Error, Result};
use crate::harness::CurvePoint;
use crate::ilc::{GainSchedule, DIVERGENCE_FACTOR};
use crate::numerics::{dot, Mat};
use crate::plant::{EnvironmentModel, ReferenceTrajectory};

/// Runs the fixed initial gains `iterations` times. Nothing learns, so every
/// point of the curve is the same.
pub fn run_pure_admittance(
    init: &AdmittanceParams,
    env: &EnvironmentModel,
    reference: &ReferenceTrajectory,
    iterations: usize,
    s0: StateError,
) -> Result<Vec<CurvePoint>> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be >= 1".into()));
    }
    let gains = GainSchedule::from_params(init, reference.horizon(), reference.dt)?;
    (0..iterations)
        .map(|k| {
            let rec = simulate_iteration(&gains, env, reference, s0)?;
            Ok(CurvePoint {
                iteration: k,
                rmse_position: rec.rmse_position,
                rmse_force: rec.rmse_force,
                e_inf: rec.e_inf,
                // no learning-rate term: G = I
                cert_norm_gm: 1.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfacConfig {
    /// Input step size, in (0, 1].
    pub rho: f64,
    /// Input regularisation weight.
    pub lambda: f64,
    /// PPD estimator step, in (0, 2].
    pub eta_phi: f64,
    pub mu_phi: f64,
    /// Initial pseudo-partial-derivative matrix (3×3, rows are outputs).
    pub phi0: [[f64; 3]; 3],
    /// The PPD estimate is reset to `phi0` when its Frobenius norm drops
    /// below this.
    pub reset_threshold: f64,
    /// Lower bound on `1/m`, as a fraction of its initial value.
    pub inv_mass_floor: f64,
    /// Work in inputs relative to the initial `u` and outputs relative to
    /// the reference's per-channel peak.
    pub normalize: bool,
}

impl Default for MfacConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            lambda: 10.0,
            eta_phi: 1.0,
            mu_phi: 1.0,
            phi0: [[-0.3, 0.0, 0.0], [0.0, -0.3, 0.0], [0.0, 0.0, -0.3]],
            reset_threshold: 1e-6,
            inv_mass_floor: 1e-3,
            normalize: true,
        }
    }
}

impl MfacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad =
            |what: &str, v: f64| Err(Error::InvalidParameter(format!("{what} out of range: {v}")));
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad("rho", self.rho);
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return bad("lambda", self.lambda);
        }
        if !(self.eta_phi > 0.0 && self.eta_phi <= 2.0) {
            return bad("eta_phi", self.eta_phi);
        }
        if !(self.mu_phi > 0.0) || !self.mu_phi.is_finite() {
            return bad("mu_phi", self.mu_phi);
        }
        if !(self.reset_threshold >= 0.0) {
            return bad("reset_threshold", self.reset_threshold);
        }
        if !(self.inv_mass_floor > 0.0 && self.inv_mass_floor <= 1.0) {
            return bad("inv_mass_floor", self.inv_mass_floor);
        }
        if self.phi0.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("phi0"));
        }
        Ok(())
    }

    fn phi0(&self) -> Mat {
        Mat::from_rows(&self.phi0)
    }
}

/// PPD projection step
/// `Φ' = Φ + η (Δy − Φ Δu) Δuᵀ / (μ + |Δu|²)`.
pub fn ppd_update(phi: &Mat, du: &[f64], dy: &[f64], eta: f64, mu: f64) -> Result<Mat> {
    let pred = phi.mul_vec(du)?;
    let resid: Vec<f64> = dy.iter().zip(&pred).map(|(a, b)| a - b).collect();
    phi.add(&Mat::outer(&resid, du).scale(eta / (mu + dot(du, du))))
}

/// Input step `u' = u + ρ Φᵀ e / (λ + |Φ|²_F)`.
pub fn input_update(
    u: &[f64],
    phi: &Mat,
    e_next: &[f64],
    rho: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let step = phi.transpose().mul_vec(e_next)?;
    let frob = dot(phi.as_slice(), phi.as_slice());
    Ok(u.iter()
        .zip(&step)
        .map(|(a, s)| a + rho * s / (lambda + frob))
        .collect())
}

/// MFAC learning curve and the final input schedule.
#[derive(Debug, Clone)]
pub struct MfacOutcome {
    pub points: Vec<CurvePoint>,
    pub inputs: Vec<ParamVector>,
    /// Smallest `1/m` applied at any step of any iteration.
    pub min_inv_mass: f64,
}

pub fn run_mfac_ilc(
    cfg: &MfacConfig,
    env: &EnvironmentModel,
    reference: &ReferenceTrajectory,
    iterations: usize,
    init: &AdmittanceParams,
    s0: StateError,
) -> Result<MfacOutcome> {
    cfg.validate()?;
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be >= 1".into()));
    }
    let n = reference.horizon();
    let consts = GainConstants::new(reference.dt)?;
    let u0 = param_vector(init)?.0;

    let (u_scale, y_scale) = if cfg.normalize {
        let mut ys = [0.0f64; 3];
        for r in &reference.samples {
            for (s, v) in ys.iter_mut().zip(r.to_array()) {
                *s = s.max(v.abs());
            }
        }
        (
            u0.map(|v| if v > 0.0 { v } else { 1.0 }),
            ys.map(|v| if v > 0.0 { v } else { 1.0 }),
        )
    } else {
        ([1.0; 3], [1.0; 3])
    };
    let floor = [0.0, 0.0, cfg.inv_mass_floor * u0[2] / u_scale[2]];
    let scaled = |c: &Channels| {
        let a = c.to_array();
        [a[0] / y_scale[0], a[1] / y_scale[1], a[2] / y_scale[2]]
    };

    let phi0 = cfg.phi0();
    let mut phi = vec![phi0.clone(); n];
    let mut w = vec![[u0[0] / u_scale[0], u0[1] / u_scale[1], u0[2] / u_scale[2]]; n];
    // previous iteration's inputs and scaled outputs
    let mut prev: Option<(Vec<[f64; 3]>, Vec<[f64; 3]>)> = None;
    let mut points = Vec::with_capacity(iterations);
    let mut initial = None;
    let mut min_inv_mass = f64::INFINITY;

    for k in 0..iterations {
        let inputs: Vec<ParamVector> = w
            .iter()
            .map(|wt| ParamVector([wt[0] * u_scale[0], wt[1] * u_scale[1], wt[2] * u_scale[2]]))
            .collect();
        for u in &inputs {
            min_inv_mass = min_inv_mass.min(u.inv_m());
        }
        let gains = GainSchedule {
            dt: reference.dt,
            gains: inputs.iter().map(|u| build_gain(u, &consts)).collect(),
        };
        let rec = simulate_iteration(&gains, env, reference, s0)?;
        let first = *initial.get_or_insert(rec.e_inf);
        if !rec.e_inf.is_finite() || (first > 0.0 && rec.e_inf > DIVERGENCE_FACTOR * first) {
            return Err(Error::Diverged {
                iteration: k,
                e_inf: rec.e_inf,
                initial: first,
            });
        }
        points.push(CurvePoint {
            iteration: k,
            rmse_position: rec.rmse_position,
            rmse_force: rec.rmse_force,
            e_inf: rec.e_inf,
            cert_norm_gm: 1.0,
        });
        if k + 1 == iterations {
            return Ok(MfacOutcome {
                points,
                inputs,
                min_inv_mass,
            });
        }

        let y: Vec<[f64; 3]> = rec.outputs.iter().map(scaled).collect();
        let e: Vec<[f64; 3]> = rec.errors.iter().map(scaled).collect();
        let mut w_next = w.clone();
        for t in 0..n {
            if let Some((w_prev, y_prev)) = &prev {
                let du: Vec<f64> = (0..3).map(|j| w[t][j] - w_prev[t][j]).collect();
                let dy: Vec<f64> = (0..3).map(|j| y[t + 1][j] - y_prev[t + 1][j]).collect();
                phi[t] = ppd_update(&phi[t], &du, &dy, cfg.eta_phi, cfg.mu_phi)?;
                if dot(phi[t].as_slice(), phi[t].as_slice()).sqrt() < cfg.reset_threshold {
                    phi[t] = phi0.clone();
                }
            }
            let next = input_update(&w[t], &phi[t], &e[t + 1], cfg.rho, cfg.lambda)?;
            for j in 0..3 {
                w_next[t][j] = next[j].max(floor[j]);
            }
        }
        prev = Some((w, y));
        w = w_next;
    }
    unreachable!("loop returns on the last iteration")
}
