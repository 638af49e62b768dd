//! `ilcmbk`: run, compare and certify admittance-gain learning experiments.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use admittance_ilc::harness::{persist, run_and_persist, to_json};
use admittance_ilc::plant::{load_preset_file, preset_names};
use admittance_ilc::{
    compare, preset, run_experiment, Error, ExperimentConfig, LearningCurve, Method,
};
use anyhow::{Context, Result};
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "ilcmbk",
    version,
    about = "Iterative learning of admittance-control gains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write curve.csv, summary.json and certificate.json.
    Run(RunArgs),
    /// Run all three methods on one or more tasks and tabulate final RMSE and MDR.
    Compare(CompareArgs),
    /// Learn with ILC-MBK and print the certificate of the final gain update.
    Certify(CertifyArgs),
    /// Run ILC-MBK over a grid of learning constants on a bounded worker pool.
    Sweep(SweepArgs),
    /// List the built-in tasks.
    Presets,
}

/// Settings shared by every experiment-running subcommand. Flags override
/// the config file, which overrides the built-in defaults.
#[derive(Args, Clone)]
struct Common {
    /// Experiment config file (TOML)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Number of learning iterations [default: 750]
    #[arg(long, value_name = "N")]
    iterations: Option<usize>,
    /// Control period in seconds [default: 0.05]
    #[arg(long, value_name = "SECONDS")]
    dt: Option<f64>,
    /// Seed for the reference perturbation [default: 0]
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Output root; results go to <OUT>/<task>/<method>/ [default: results]
    #[arg(long, value_name = "DIR", env = "ILCMBK_OUT")]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(n) = self.iterations {
            cfg.iterations = n;
        }
        if let Some(dt) = self.dt {
            cfg.dt = dt;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

fn method_parser() -> impl TypedValueParser<Value = Method> {
    PossibleValuesParser::new(Method::ALL.map(Method::as_str))
        .map(|s| s.parse::<Method>().expect("restricted to known names"))
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Task name or preset file path [default: auto_reset_button]
    #[arg(long, value_name = "NAME")]
    task: Option<String>,
    /// Learning method [default: ilc_mbk]
    #[arg(long, value_parser = method_parser())]
    method: Option<Method>,
    /// ILC-MBK learning rate [default: 0.3]
    #[arg(long, value_name = "A")]
    alpha: Option<f64>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Tasks to compare; repeat the flag for several [default: all built-ins]
    #[arg(long = "task", value_name = "NAME")]
    tasks: Vec<String>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: Common,
    /// Task name or preset file path [default: auto_reset_button]
    #[arg(long, value_name = "NAME")]
    task: Option<String>,
    /// ILC-MBK learning rate [default: 0.3]
    #[arg(long, value_name = "A")]
    alpha: Option<f64>,
    /// Use the plant's secant-stiffness output map instead of the learned estimate
    #[arg(long = "true-C", alias = "true-c")]
    true_c: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Task name or preset file path [default: auto_reset_button]
    #[arg(long, value_name = "NAME")]
    task: Option<String>,
    /// Learning rates, comma separated [default: 0.3]
    #[arg(long, value_delimiter = ',', value_name = "A,..")]
    alpha: Vec<f64>,
    /// Correction clamp limits, comma separated [default: 10]
    #[arg(long, value_delimiter = ',', value_name = "L,..")]
    clamp: Vec<f64>,
    /// Estimator regularisers, comma separated [default: 1]
    #[arg(long, value_delimiter = ',', value_name = "MU,..")]
    mu: Vec<f64>,
    /// Estimator step sizes in (0, 2], comma separated [default: 1]
    #[arg(long, value_delimiter = ',', value_name = "ETA,..")]
    eta: Vec<f64>,
    /// Worker threads [default: available cores]
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

/// A task argument naming an existing `.toml` file is loaded as a preset.
fn apply_task(cfg: &mut ExperimentConfig, task: Option<&str>) -> Result<()> {
    let Some(task) = task else { return Ok(()) };
    let path = PathBuf::from(task);
    if task.ends_with(".toml") && path.is_file() {
        cfg.task = load_preset_file(&path)?.name;
        cfg.preset_file = Some(path);
    } else {
        cfg.task = task.to_string();
        cfg.preset_file = None;
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = args.common.config()?;
    apply_task(&mut cfg, args.task.as_deref())?;
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(a) = args.alpha {
        cfg.learn.alpha = a;
    }
    let (curve, files) = run_and_persist(&cfg)?;
    let s = curve.summary()?;
    println!(
        "{} {}: final {} rmse {:.6e} {}, final {} rmse {:.6e} {} -> {}",
        s.task,
        s.method,
        s.position.label,
        s.position.final_rmse,
        s.position.unit,
        s.force.label,
        s.force.final_rmse,
        s.force.unit,
        files.dir.display()
    );
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let base = args.common.config()?;
    let tasks: Vec<String> = if args.tasks.is_empty() {
        preset_names().map(String::from).collect()
    } else {
        args.tasks
    };
    let mut tables = Vec::new();
    for task in &tasks {
        let mut curves: Vec<LearningCurve> = Vec::new();
        for method in Method::ALL {
            let mut cfg = base.clone();
            apply_task(&mut cfg, Some(task))?;
            cfg.method = method;
            let curve = run_experiment(&cfg)?;
            persist(&curve, &cfg.output_dir())?;
            curves.push(curve);
        }
        let table = compare(&curves)?;
        print!("{}", table.render());
        println!();
        tables.push(table);
    }
    fs::create_dir_all(&base.out)?;
    let path = base.out.join("comparison.json");
    fs::write(&path, to_json(&tables)?).with_context(|| format!("writing {}", path.display()))?;
    println!("comparison written to {}", path.display());
    Ok(())
}

fn cmd_certify(args: CertifyArgs) -> Result<()> {
    let mut cfg = args.common.config()?;
    apply_task(&mut cfg, args.task.as_deref())?;
    cfg.method = Method::IlcMbk;
    if let Some(a) = args.alpha {
        cfg.learn.alpha = a;
    }
    if args.true_c {
        cfg.learn.true_c = true;
    }
    let curve = run_experiment(&cfg)?;
    let cert = curve.certificate.expect("ILC-MBK runs carry a certificate");
    print!("{}", to_json(&cert)?);
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut base = args.common.config()?;
    apply_task(&mut base, args.task.as_deref())?;
    base.method = Method::IlcMbk;
    let or = |v: Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v };
    let alphas = or(args.alpha, base.learn.alpha);
    let clamps = or(args.clamp, base.learn.clamp_limit);
    let mus = or(args.mu, base.learn.mu);
    let etas = or(args.eta, base.learn.eta);

    let mut grid = Vec::new();
    for &alpha in &alphas {
        for &clamp in &clamps {
            for &mu in &mus {
                for &eta in &etas {
                    let mut cfg = base.clone();
                    cfg.learn.alpha = alpha;
                    cfg.learn.clamp_limit = clamp;
                    cfg.learn.mu = mu;
                    cfg.learn.eta = eta;
                    grid.push(cfg);
                }
            }
        }
    }
    // Bad constants are usage errors; catch them before spawning work.
    for cfg in &grid {
        cfg.validate()?;
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        anyhow::ensure!(j >= 1, Error::InvalidParameter("jobs must be >= 1".into()));
        pool = pool.num_threads(j);
    }
    let results: Vec<_> = pool
        .build()?
        .install(|| grid.par_iter().map(run_experiment).collect());

    let mut csv = String::from(
        "alpha,clamp_limit,mu,eta,status,rmse_position,rmse_force,e_inf,cert_norm_gm\n",
    );
    for (cfg, res) in grid.iter().zip(results) {
        let l = &cfg.learn;
        let row = match res {
            Ok(curve) => {
                let p = curve.final_point();
                format!(
                    "ok,{:.16e},{:.16e},{:.16e},{:.16e}",
                    p.rmse_position, p.rmse_force, p.e_inf, p.cert_norm_gm
                )
            }
            Err(Error::Diverged { .. }) => "diverged,,,,".to_string(),
            Err(e) => return Err(e.into()),
        };
        csv.push_str(&format!(
            "{},{},{},{},{row}\n",
            l.alpha, l.clamp_limit, l.mu, l.eta
        ));
    }
    let dir = base.out.join(&base.task);
    fs::create_dir_all(&dir)?;
    let path = dir.join("sweep.csv");
    fs::write(&path, &csv)?;
    print!("{csv}");
    println!("sweep written to {}", path.display());
    Ok(())
}

fn cmd_presets() -> Result<()> {
    for name in preset_names() {
        let p = preset(name)?;
        println!(
            "{:<20} m={} b={} k={}  {}",
            p.name, p.params.m, p.params.b, p.params.k, p.description
        );
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Diverged { .. }) => EXIT_DIVERGED,
        Some(
            Error::UnknownPreset(_)
            | Error::UnknownMethod(_)
            | Error::InvalidParameter(_)
            | Error::Config(_),
        ) => EXIT_USAGE,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let res = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Presets => cmd_presets(),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
