//! Experiment orchestration: configuration, metrics, persistence and the
//! method comparison table.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::admittance::simulate_iteration;
use crate::baselines::{run_mfac_ilc, run_pure_admittance, MfacConfig};
use crate::convergence::{assemble_g, lyapunov_of_curve, transfer_deviation, Certificate};
use crate::error::{Error, Result};
use crate::ilc::{run_learning, LearnConfig};
use crate::plant::{load_preset_file, preset, ChannelLabels, Preset};

pub const CSV_HEADER: &str = "iteration,rmse_position,rmse_force,e_inf,cert_norm_gm";

/// Shipped defaults, identical to [`ExperimentConfig::default`].
pub const DEFAULT_CONFIG: &str = include_str!("../../../config/default.toml");

/// One row of a learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub rmse_position: f64,
    pub rmse_force: f64,
    pub e_inf: f64,
    pub cert_norm_gm: f64,
}

pub fn rmse(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("rmse of an empty sequence".into()));
    }
    Ok((values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt())
}

/// Maximum descent rate: the largest single-iteration drop
/// `rmse_k − rmse_{k+1}` along a learning curve. Negative when the curve
/// only rises.
pub fn mdr(curve: &[f64]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::InvalidParameter(
            "mdr needs at least two points".into(),
        ));
    }
    Ok(curve
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    IlcMbk,
    Mfac,
    Admittance,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::IlcMbk, Method::Mfac, Method::Admittance];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::IlcMbk => "ilc_mbk",
            Method::Mfac => "mfac",
            Method::Admittance => "admittance",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: String,
    pub method: Method,
    pub dt: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Relative amplitude of seeded noise on the force reference; zero keeps
    /// the reference consistent with the environment.
    pub reference_noise: f64,
    /// Output root; results land in `<out>/<task>/<method>/`.
    pub out: PathBuf,
    /// Load the task from this preset file instead of the built-ins.
    pub preset_file: Option<PathBuf>,
    pub learn: LearnConfig,
    pub mfac: MfacConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: "auto_reset_button".into(),
            method: Method::IlcMbk,
            dt: 0.05,
            iterations: 750,
            seed: 0,
            reference_noise: 0.0,
            out: PathBuf::from("results"),
            preset_file: None,
            learn: LearnConfig::default(),
            mfac: MfacConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "dt must be > 0, got {}",
                self.dt
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be >= 1".into()));
        }
        if !(self.reference_noise >= 0.0) || !self.reference_noise.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "reference_noise must be >= 0, got {}",
                self.reference_noise
            )));
        }
        self.learn_config().validate()?;
        self.mfac.validate()
    }

    pub fn resolve_preset(&self) -> Result<Preset> {
        match &self.preset_file {
            Some(p) => load_preset_file(p),
            None => preset(&self.task),
        }
    }

    pub fn learn_config(&self) -> LearnConfig {
        LearnConfig {
            iterations: self.iterations,
            ..self.learn.clone()
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.out.join(&self.task).join(self.method.as_str())
    }
}

/// Extra numbers reported for ILC-MBK runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningDiagnostics {
    /// Gain steps whose correction hit the clamp, summed over iterations.
    pub clamped_steps: usize,
    /// Largest relative distance of any learned gain from the `(m, b, k)`
    /// manifold.
    pub max_manifold_drift: f64,
    /// Relative gap between the error after the final update and the
    /// transfer-matrix prediction from the error before it.
    pub transfer_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub task: String,
    pub method: Method,
    pub labels: ChannelLabels,
    pub dt: f64,
    pub horizon: usize,
    pub points: Vec<CurvePoint>,
    pub certificate: Option<Certificate>,
    pub diagnostics: Option<LearningDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub label: String,
    pub unit: String,
    pub initial_rmse: f64,
    pub final_rmse: f64,
    pub mdr: f64,
}

impl ChannelSummary {
    fn new(label: &str, unit: &str, curve: &[f64]) -> Result<Self> {
        Ok(Self {
            label: label.to_string(),
            unit: unit.to_string(),
            initial_rmse: curve[0],
            final_rmse: curve[curve.len() - 1],
            // a one-point curve has no descent
            mdr: if curve.len() < 2 { 0.0 } else { mdr(curve)? },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: String,
    pub method: Method,
    pub dt: f64,
    pub iterations: usize,
    pub horizon: usize,
    pub position: ChannelSummary,
    pub force: ChannelSummary,
    pub final_e_inf: f64,
    pub lyapunov_monotone_from: usize,
    pub certificate: Option<Certificate>,
    pub diagnostics: Option<LearningDiagnostics>,
}

impl LearningCurve {
    pub fn position_curve(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.rmse_position).collect()
    }

    pub fn force_curve(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.rmse_force).collect()
    }

    pub fn final_point(&self) -> &CurvePoint {
        self.points.last().expect("curves are never empty")
    }

    pub fn summary(&self) -> Result<Summary> {
        if self.points.is_empty() {
            return Err(Error::InvalidParameter("empty learning curve".into()));
        }
        let l = &self.labels;
        Ok(Summary {
            task: self.task.clone(),
            method: self.method,
            dt: self.dt,
            iterations: self.points.len(),
            horizon: self.horizon,
            position: ChannelSummary::new(&l.position, &l.position_unit, &self.position_curve())?,
            force: ChannelSummary::new(&l.force, &l.force_unit, &self.force_curve())?,
            final_e_inf: self.final_point().e_inf,
            lyapunov_monotone_from: lyapunov_of_curve(&self.points)?.monotone_from,
            certificate: self.certificate.clone(),
            diagnostics: self.diagnostics.clone(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(96 * (self.points.len() + 1));
        s.push_str(CSV_HEADER);
        s.push('\n');
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                p.iteration,
                fmt_num(p.rmse_position),
                fmt_num(p.rmse_force),
                fmt_num(p.e_inf),
                fmt_num(p.cert_norm_gm)
            );
        }
        s
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Config("curve CSV has an unexpected header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Config(format!("bad curve row `{line}`")));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad number `{s}`: {e}")))
            };
            Ok(CurvePoint {
                iteration: f[0]
                    .parse()
                    .map_err(|e| Error::Config(format!("bad iteration `{}`: {e}", f[0])))?,
                rmse_position: num(f[1])?,
                rmse_force: num(f[2])?,
                e_inf: num(f[3])?,
                cert_norm_gm: num(f[4])?,
            })
        })
        .collect()
}

/// Runs one configured experiment in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<LearningCurve> {
    cfg.validate()?;
    let preset = cfg.resolve_preset()?;
    let mut reference = preset.reference(cfg.dt)?;
    if cfg.reference_noise > 0.0 {
        reference = reference.perturbed(cfg.reference_noise, cfg.seed);
    }
    let s0 = preset.initial_state;
    let (points, certificate, diagnostics) = match cfg.method {
        Method::Admittance => (
            run_pure_admittance(&preset.params, &preset.env, &reference, cfg.iterations, s0)?,
            None,
            None,
        ),
        Method::Mfac => (
            run_mfac_ilc(
                &cfg.mfac,
                &preset.env,
                &reference,
                cfg.iterations,
                &preset.params,
                s0,
            )?
            .points,
            None,
            None,
        ),
        Method::IlcMbk => {
            let out = run_learning(
                &cfg.learn_config(),
                &preset.env,
                &reference,
                &preset.params,
                s0,
            )?;
            let after = simulate_iteration(&out.gains, &preset.env, &reference, s0)?;
            let deviation = transfer_deviation(
                &assemble_g(&out.last_operands),
                &out.last.errors,
                &after.errors,
            )?;
            let diag = LearningDiagnostics {
                clamped_steps: out.clamped_total,
                max_manifold_drift: out.max_manifold_drift,
                transfer_deviation: deviation,
            };
            (out.points, Some(out.certificate), Some(diag))
        }
    };
    Ok(LearningCurve {
        task: preset.name,
        method: cfg.method,
        labels: preset.labels,
        dt: cfg.dt,
        horizon: reference.horizon(),
        points,
        certificate,
        diagnostics,
    })
}

/// Files written by [`persist`].
#[derive(Debug, Clone)]
pub struct Persisted {
    pub dir: PathBuf,
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub certificate: Option<PathBuf>,
}

/// Writes `curve.csv`, `summary.json` and, for ILC-MBK, `certificate.json`.
pub fn persist(curve: &LearningCurve, dir: &Path) -> Result<Persisted> {
    fs::create_dir_all(dir)?;
    let csv = dir.join("curve.csv");
    fs::write(&csv, curve.to_csv())?;
    let summary = dir.join("summary.json");
    fs::write(&summary, to_json(&curve.summary()?)?)?;
    let certificate = match &curve.certificate {
        Some(c) => {
            let p = dir.join("certificate.json");
            fs::write(&p, to_json(c)?)?;
            Some(p)
        }
        None => None,
    };
    Ok(Persisted {
        dir: dir.to_path_buf(),
        csv,
        summary,
        certificate,
    })
}

pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Runs and writes into `cfg.output_dir()`.
pub fn run_and_persist(cfg: &ExperimentConfig) -> Result<(LearningCurve, Persisted)> {
    let curve = run_experiment(cfg)?;
    let files = persist(&curve, &cfg.output_dir())?;
    Ok((curve, files))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub method: Method,
    pub final_rmse: f64,
    pub mdr: f64,
    /// Lowest final RMSE in its row.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub channel: String,
    pub unit: String,
    pub cells: Vec<ComparisonCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub task: String,
    pub dt: f64,
    pub iterations: usize,
    pub rows: Vec<ComparisonRow>,
}

/// Final RMSE and MDR of each method side by side, position row first.
/// All curves must come from the same task, period and iteration count.
pub fn compare(curves: &[LearningCurve]) -> Result<ComparisonTable> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidParameter("nothing to compare".into()))?;
    for c in curves {
        if c.task != first.task || c.dt != first.dt || c.points.len() != first.points.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot compare {}/{} ({} iterations, dt {}) with {}/{} ({} iterations, dt {})",
                c.task,
                c.method,
                c.points.len(),
                c.dt,
                first.task,
                first.method,
                first.points.len(),
                first.dt
            )));
        }
    }
    let summaries = curves
        .iter()
        .map(|c| c.summary())
        .collect::<Result<Vec<_>>>()?;
    let row = |pick: fn(&Summary) -> &ChannelSummary| {
        let best = summaries
            .iter()
            .map(|s| pick(s).final_rmse)
            .fold(f64::INFINITY, f64::min);
        let ch = pick(&summaries[0]);
        ComparisonRow {
            channel: ch.label.clone(),
            unit: ch.unit.clone(),
            cells: summaries
                .iter()
                .map(|s| ComparisonCell {
                    method: s.method,
                    final_rmse: pick(s).final_rmse,
                    mdr: pick(s).mdr,
                    best: pick(s).final_rmse == best,
                })
                .collect(),
        }
    };
    Ok(ComparisonTable {
        task: first.task.clone(),
        dt: first.dt,
        iterations: first.points.len(),
        rows: vec![row(|s| &s.position), row(|s| &s.force)],
    })
}

impl ComparisonTable {
    /// Plain-text table; the best cell of each row carries a `*`.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{} (dt = {} s, {} iterations)\n",
            self.task, self.dt, self.iterations
        );
        let _ = write!(s, "{:<22}", "channel");
        for c in &self.rows[0].cells {
            let _ = write!(s, " {:>26}", format!("{} rmse / mdr", c.method));
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<22}", format!("{} [{}]", r.channel, r.unit));
            for c in &r.cells {
                let mark = if c.best { "*" } else { " " };
                let _ = write!(s, " {:>12.4e}{mark} / {:>10.3e}", c.final_rmse, c.mdr);
            }
            s.push('\n');
        }
        s
    }
}
