//! Discrete admittance plant in gain-matrix form.
//!
//! The admittance law `m Δẍ + b Δẋ + k Δx = Δf` is reparameterised by the
//! input vector `u = [b/m, k/m, 1/m]`. One explicit Euler step then reads
//! `s(t+Δt) = U(t) (r(t) − y(t))` with `U = β uᵀ A + E`, where the state error
//! is `s = [Δv, Δx]`, and the measured output is `y = C s + D r` with
//! `D = C T_DC`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ilc::{GainSchedule, IterationRecord};
use crate::numerics::{mat_mul, Mat};
use crate::plant::{EnvironmentModel, ReferenceTrajectory};

/// Relative drift of the row-two identity beyond which recovered `(m, b, k)`
/// are flagged as off-manifold.
pub const MANIFOLD_TOL: f64 = 1e-6;

/// Physical inertia, damping and stiffness of the admittance law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceParams {
    pub m: f64,
    pub b: f64,
    pub k: f64,
}

impl AdmittanceParams {
    pub fn new(m: f64, b: f64, k: f64) -> Result<Self> {
        let p = Self { m, b, k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m.is_finite() && self.b.is_finite() && self.k.is_finite()) {
            return Err(Error::NonFinite("admittance parameters"));
        }
        if self.m <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "inertia must be > 0, got {}",
                self.m
            )));
        }
        if self.b < 0.0 || self.k < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "damping and stiffness must be >= 0, got b={} k={}",
                self.b, self.k
            )));
        }
        Ok(())
    }
}

/// `u = [b/m, k/m, 1/m]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub [f64; 3]);

impl ParamVector {
    pub fn b_over_m(&self) -> f64 {
        self.0[0]
    }

    pub fn k_over_m(&self) -> f64 {
        self.0[1]
    }

    pub fn inv_m(&self) -> f64 {
        self.0[2]
    }

    pub fn to_params(&self) -> AdmittanceParams {
        let m = 1.0 / self.inv_m();
        AdmittanceParams {
            m,
            b: self.b_over_m() * m,
            k: self.k_over_m() * m,
        }
    }
}

pub fn param_vector(p: &AdmittanceParams) -> Result<ParamVector> {
    p.validate()?;
    Ok(ParamVector([p.b / p.m, p.k / p.m, 1.0 / p.m]))
}

/// The constant pieces `β`, `A`, `E` of `U = β uᵀ A + E`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainConstants {
    pub dt: f64,
    pub beta: [f64; 2],
    pub a: Mat,
    pub e: Mat,
}

impl GainConstants {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "control period must be > 0, got {dt}"
            )));
        }
        Ok(Self {
            dt,
            beta: [dt, dt * dt],
            a: Mat::from_rows(&[[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]]),
            e: Mat::from_rows(&[[1.0, 0.0, 0.0], [dt, 1.0, 0.0]]),
        })
    }
}

/// The 2×3 matrix mapping the tracking error `[v, x, f]` to the next state
/// error `[Δv, Δx]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainMatrix(Mat);

impl GainMatrix {
    pub fn new(m: Mat) -> Result<Self> {
        if m.shape() != (2, 3) {
            return Err(Error::Dimension(format!(
                "gain matrix must be 2x3, got {:?}",
                m.shape()
            )));
        }
        if !m.is_finite() {
            return Err(Error::NonFinite("gain matrix"));
        }
        Ok(Self(m))
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn apply(&self, e: &Channels) -> StateError {
        let u = &self.0;
        let e = e.to_array();
        let row = |i: usize| u[(i, 0)] * e[0] + u[(i, 1)] * e[1] + u[(i, 2)] * e[2];
        StateError {
            dv: row(0),
            dx: row(1),
        }
    }

    /// Relative violation of `row₂ = Δt·row₁ + [0, 1, 0]`, which holds for
    /// every matrix built from a parameter vector.
    pub fn manifold_drift(&self, dt: f64) -> f64 {
        let u = &self.0;
        let expect = [dt * u[(0, 0)], dt * u[(0, 1)] + 1.0, dt * u[(0, 2)]];
        let mut num: f64 = 0.0;
        let mut den: f64 = 0.0;
        for (j, want) in expect.iter().enumerate() {
            num = num.max((u[(1, j)] - want).abs());
            den = den.max(want.abs());
        }
        num / den.max(f64::MIN_POSITIVE)
    }

    /// Reads `(m, b, k)` back from the first row.
    pub fn recover_params(&self, dt: f64) -> RecoveredParams {
        let u = &self.0;
        let m = dt / u[(0, 2)];
        let b_over_m = (1.0 - u[(0, 0)]) / dt;
        let k_over_m = -u[(0, 1)] / dt;
        RecoveredParams {
            params: AdmittanceParams {
                m,
                b: b_over_m * m,
                k: k_over_m * m,
            },
            off_manifold: self.manifold_drift(dt) > MANIFOLD_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveredParams {
    pub params: AdmittanceParams,
    pub off_manifold: bool,
}

/// `U = β uᵀ A + E`.
pub fn build_gain(u: &ParamVector, g: &GainConstants) -> GainMatrix {
    let beta = Mat::column(&g.beta);
    let u_row = Mat::row(&u.0);
    let bu = mat_mul(&beta, &u_row).expect("2x1 times 1x3");
    let bua = mat_mul(&bu, &g.a).expect("2x3 times 3x3");
    GainMatrix(bua.add(&g.e).expect("2x3 plus 2x3"))
}

/// State error `[Δv, Δx]` (reference minus actual).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StateError {
    pub dv: f64,
    pub dx: f64,
}

impl StateError {
    pub fn new(dv: f64, dx: f64) -> Self {
        Self { dv, dx }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.dv, self.dx]
    }
}

/// A `[v, x, f]` triple: velocity, position, contact force.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Channels {
    pub v: f64,
    pub x: f64,
    pub f: f64,
}

pub type ReferenceVector = Channels;
pub type OutputVector = Channels;

impl Channels {
    pub fn new(v: f64, x: f64, f: f64) -> Self {
        Self { v, x, f }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.v, self.x, self.f]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(s[0], s[1], s[2])
    }

    pub fn norm(self) -> f64 {
        (self.v * self.v + self.x * self.x + self.f * self.f).sqrt()
    }

    pub fn max_abs(self) -> f64 {
        self.v.abs().max(self.x.abs()).max(self.f.abs())
    }
}

impl std::ops::Sub for Channels {
    type Output = Channels;

    fn sub(self, o: Channels) -> Channels {
        Channels::new(self.v - o.v, self.x - o.x, self.f - o.f)
    }
}

/// `T_DC = −[[1,0,0],[0,1,0]]`, the constant linking `D = C T_DC`.
pub fn transfer_dc() -> Mat {
    Mat::from_rows(&[[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
}

/// Output equation matrices for a given environment stiffness.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputMap {
    pub k_env: f64,
    pub c: Mat,
    pub d: Mat,
}

pub fn output_map(k_env: f64) -> OutputMap {
    let c = c_matrix(k_env);
    let d = mat_mul(&c, &transfer_dc()).expect("3x2 times 2x3");
    OutputMap { k_env, c, d }
}

/// `C = −[[1,0],[0,1],[0,k_env]]`.
pub fn c_matrix(k_env: f64) -> Mat {
    Mat::from_rows(&[[-1.0, 0.0], [0.0, -1.0], [0.0, -k_env]])
}

/// One step of the plant: `s(t+Δt) = U (r − y)`.
pub fn plant_step(u: &GainMatrix, r: &ReferenceVector, y: &OutputVector) -> StateError {
    u.apply(&(*r - *y))
}

/// Measured output for state error `s` under reference `r`, using the true
/// force law. Also returns the secant stiffness at the resulting position.
pub fn observe(s: &StateError, r: &ReferenceVector, env: &EnvironmentModel) -> (OutputVector, f64) {
    let v = r.v - s.dv;
    let x = r.x - s.dx;
    let f = env.force_at(x);
    (Channels::new(v, x, f), env.secant_stiffness(x))
}

/// Runs one pass over the horizon with a fixed gain schedule.
pub fn simulate_iteration(
    gains: &GainSchedule,
    env: &EnvironmentModel,
    reference: &ReferenceTrajectory,
    s0: StateError,
) -> Result<IterationRecord> {
    let n = reference.horizon();
    if gains.len() != n {
        return Err(Error::Horizon {
            expected: n,
            got: gains.len(),
        });
    }
    let mut states = Vec::with_capacity(n + 1);
    let mut outputs = Vec::with_capacity(n + 1);
    let mut errors = Vec::with_capacity(n + 1);
    let mut k_env = Vec::with_capacity(n + 1);

    let mut s = s0;
    for (t, r) in reference.samples.iter().enumerate() {
        let (y, k) = observe(&s, r, env);
        let e = *r - y;
        states.push(s);
        outputs.push(y);
        errors.push(e);
        k_env.push(k);
        if t < n {
            s = gains.gains[t].apply(&e);
        }
    }
    Ok(IterationRecord::new(states, outputs, errors, k_env))
}
