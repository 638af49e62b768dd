//! Synthetic contact environments and reference trajectories.
//!
//! Each environment is a piecewise-linear force law `F(x)` anchored at the
//! origin. Presets ship as TOML files under `config/presets/` and are also
//! compiled in, so the binary works without the repository checkout.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admittance::{AdmittanceParams, Channels, ReferenceVector, StateError};
use crate::error::{Error, Result};

/// Below this deflection the secant stiffness falls back to the slope of the
/// first segment.
pub const SECANT_ORIGIN_BAND: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentModel {
    name: String,
    breakpoints: Vec<(f64, f64)>,
}

impl EnvironmentModel {
    pub fn new(name: impl Into<String>, breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        let name = name.into();
        if breakpoints.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "environment `{name}` needs at least two breakpoints"
            )));
        }
        if breakpoints
            .iter()
            .any(|(x, f)| !x.is_finite() || !f.is_finite())
        {
            return Err(Error::NonFinite("environment breakpoints"));
        }
        if breakpoints[0] != (0.0, 0.0) {
            return Err(Error::InvalidParameter(format!(
                "environment `{name}` must start at (0, 0), got {:?}",
                breakpoints[0]
            )));
        }
        if breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidParameter(format!(
                "environment `{name}` positions must be strictly increasing"
            )));
        }
        Ok(Self { name, breakpoints })
    }

    /// Constant-stiffness environment `F(x) = k x`, with a single segment
    /// ending at `span`.
    pub fn linear(name: impl Into<String>, stiffness: f64, span: f64) -> Result<Self> {
        Self::new(name, vec![(0.0, 0.0), (span, stiffness * span)])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    fn segment_slope(&self, i: usize) -> f64 {
        let (x0, f0) = self.breakpoints[i];
        let (x1, f1) = self.breakpoints[i + 1];
        (f1 - f0) / (x1 - x0)
    }

    /// Piecewise-linear interpolation, extrapolated with the end slopes.
    pub fn force_at(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        let bp = &self.breakpoints;
        let last = bp.len() - 1;
        // Index of the segment containing x.
        let seg = if x <= bp[0].0 {
            0
        } else if x >= bp[last].0 {
            last - 1
        } else {
            bp.partition_point(|&(xi, _)| xi <= x) - 1
        };
        let (x0, f0) = bp[seg];
        f0 + self.segment_slope(seg) * (x - x0)
    }

    /// Slope of the first segment, i.e. the stiffness seen at first contact.
    pub fn tangent_at_origin(&self) -> f64 {
        self.segment_slope(0)
    }

    /// `F(x) / x`, or the first-segment slope for `|x| < 1e-9`.
    pub fn secant_stiffness(&self, x: f64) -> f64 {
        if x.abs() < SECANT_ORIGIN_BAND {
            self.tangent_at_origin()
        } else {
            self.force_at(x) / x
        }
    }
}

/// Reference `[v_r, x_r, f_r]` sampled every `dt` over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub dt: f64,
    pub samples: Vec<ReferenceVector>,
    /// Set when `f_r = F(x_r)` at every sample.
    pub consistent: bool,
}

impl ReferenceTrajectory {
    pub fn new(dt: f64, samples: Vec<ReferenceVector>, consistent: bool) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "control period must be > 0, got {dt}"
            )));
        }
        if samples.len() < 2 {
            return Err(Error::InvalidParameter(
                "reference needs at least two samples".into(),
            ));
        }
        if samples
            .iter()
            .any(|s| !(s.v.is_finite() && s.x.is_finite() && s.f.is_finite()))
        {
            return Err(Error::NonFinite("reference samples"));
        }
        Ok(Self {
            dt,
            samples,
            consistent,
        })
    }

    /// Number of control steps `n`; there are `n + 1` samples.
    pub fn horizon(&self) -> usize {
        self.samples.len() - 1
    }

    /// Largest `|f_r − F(x_r)|` over the samples.
    pub fn consistency_gap(&self, env: &EnvironmentModel) -> f64 {
        self.samples
            .iter()
            .map(|s| (s.f - env.force_at(s.x)).abs())
            .fold(0.0, f64::max)
    }

    /// Returns a copy whose force channel carries seeded uniform noise of
    /// relative amplitude `amplitude` (fraction of the peak reference force).
    /// The first sample is left untouched so the initial error is unchanged.
    pub fn perturbed(&self, amplitude: f64, seed: u64) -> Self {
        let peak = self.samples.iter().map(|s| s.f.abs()).fold(0.0, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let noise = if i == 0 {
                    0.0
                } else {
                    amplitude * peak * rng.gen_range(-1.0..=1.0)
                };
                Channels::new(s.v, s.x, s.f + noise)
            })
            .collect();
        Self {
            dt: self.dt,
            samples,
            consistent: amplitude == 0.0 && self.consistent,
        }
    }
}

/// Minimum-jerk approach from 0 to `depth` over `t_end`, with the force
/// channel read off the environment.
pub fn make_reference(
    env: &EnvironmentModel,
    depth: f64,
    t_end: f64,
    dt: f64,
) -> Result<ReferenceTrajectory> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "control period must be > 0, got {dt}"
        )));
    }
    if !(depth >= 0.0) || !depth.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "depth must be >= 0, got {depth}"
        )));
    }
    let n = (t_end / dt).round();
    if !(n >= 2.0) || !n.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "horizon must cover at least two steps (t_end={t_end}, dt={dt})"
        )));
    }
    let n = n as usize;
    // Snap the duration to the sample grid so x_r(n dt) = depth exactly.
    let duration = n as f64 * dt;
    let samples = (0..=n)
        .map(|i| {
            let tau = if i == n {
                1.0
            } else {
                i as f64 * dt / duration
            };
            let (x, v) = min_jerk(depth, duration, tau);
            Channels::new(v, x, env.force_at(x))
        })
        .collect();
    ReferenceTrajectory::new(dt, samples, true)
}

/// Position and velocity of the quintic minimum-jerk profile at normalised
/// time `tau`.
fn min_jerk(depth: f64, duration: f64, tau: f64) -> (f64, f64) {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    let x = depth * t3 * (10.0 - 15.0 * tau + 6.0 * t2);
    let v = depth / duration * 30.0 * t2 * (1.0 - 2.0 * tau + t2);
    (x, v)
}

/// Labels for the two reported channels; rotary tasks use torque and radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelLabels {
    pub position: String,
    pub position_unit: String,
    pub force: String,
    pub force_unit: String,
}

impl Default for ChannelLabels {
    fn default() -> Self {
        Self {
            position: "position".into(),
            position_unit: "m".into(),
            force: "force".into(),
            force_unit: "N".into(),
        }
    }
}

/// A task: environment, initial admittance parameters and motion.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: String,
    pub description: String,
    pub labels: ChannelLabels,
    pub params: AdmittanceParams,
    pub env: EnvironmentModel,
    pub depth: f64,
    pub t_end: f64,
    /// State error at t = 0, the same in every iteration.
    pub initial_state: StateError,
}

impl Preset {
    pub fn reference(&self, dt: f64) -> Result<ReferenceTrajectory> {
        make_reference(&self.env, self.depth, self.t_end, dt)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetFile {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    labels: Option<ChannelLabels>,
    admittance: AdmittanceParams,
    motion: MotionSection,
    force_law: ForceLawSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MotionSection {
    depth: f64,
    t_end: f64,
    #[serde(default)]
    initial_state: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ForceLawSection {
    breakpoints: Vec<[f64; 2]>,
}

/// Parses a preset from its TOML text.
pub fn parse_preset(text: &str) -> Result<Preset> {
    let file: PresetFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    file.admittance.validate()?;
    let env = EnvironmentModel::new(
        file.name.clone(),
        file.force_law
            .breakpoints
            .iter()
            .map(|p| (p[0], p[1]))
            .collect(),
    )?;
    let [dv, dx] = file.motion.initial_state;
    Ok(Preset {
        name: file.name,
        description: file.description,
        labels: file.labels.unwrap_or_default(),
        params: file.admittance,
        env,
        depth: file.motion.depth,
        t_end: file.motion.t_end,
        initial_state: StateError::new(dv, dx),
    })
}

pub fn load_preset_file(path: &Path) -> Result<Preset> {
    parse_preset(&std::fs::read_to_string(path)?)
}

const BUILTIN: [(&str, &str); 4] = [
    (
        "auto_reset_button",
        include_str!("../../../config/presets/auto_reset_button.toml"),
    ),
    (
        "second_gear_knob",
        include_str!("../../../config/presets/second_gear_knob.toml"),
    ),
    (
        "emergency_press",
        include_str!("../../../config/presets/emergency_press.toml"),
    ),
    (
        "emergency_reset",
        include_str!("../../../config/presets/emergency_reset.toml"),
    ),
];

/// Names of the built-in presets, in table order.
pub fn preset_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

/// Looks up a built-in preset.
pub fn preset(name: &str) -> Result<Preset> {
    let (_, text) = BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))?;
    parse_preset(text)
}
