//! Iterative learning of admittance-control gains.
//!
//! The admittance law `m Δẍ + b Δẋ + k Δx = Δf` is discretised into a
//! time-indexed 2×3 gain matrix. ILC-MBK refines that matrix from one
//! repetition of a contact task to the next, using a running estimate of the
//! environment's output map. The crate also ships the two comparison
//! methods, an infinity-norm convergence certificate, and the experiment
//! harness used by the `ilcmbk` binary.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod admittance;
pub mod baselines;
pub mod convergence;
pub mod error;
pub mod harness;
pub mod ilc;
pub mod numerics;
pub mod plant;

pub use admittance::{
    build_gain, param_vector, simulate_iteration, AdmittanceParams, Channels, GainConstants,
    GainMatrix, ParamVector, StateError,
};
pub use baselines::{run_mfac_ilc, run_pure_admittance, MfacConfig};
pub use convergence::{certify, closed_form_bound, lyapunov, Certificate, TransferOperands};
pub use error::{Error, Result};
pub use harness::{
    compare, mdr, rmse, run_experiment, ComparisonTable, CurvePoint, ExperimentConfig,
    LearningCurve, Method, Summary,
};
pub use ilc::{run_learning, EstimatorState, GainSchedule, IterationRecord, LearnConfig};
pub use numerics::{inf_norm, mat_mul, pinv, vec_pinv, Mat};
pub use plant::{
    make_reference, preset, preset_names, EnvironmentModel, Preset, ReferenceTrajectory,
};
