//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero on any FAIL.

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use admittance_ilc::convergence::{assemble_g, assemble_gm, closed_form_bound, lyapunov_of_curve};
use admittance_ilc::harness::run_and_persist;
use admittance_ilc::ilc::projection_update;
use admittance_ilc::{
    inf_norm, make_reference, mat_mul, pinv, preset, preset_names, run_experiment, run_learning,
    AdmittanceParams, EnvironmentModel, ExperimentConfig, GainSchedule, LearnConfig, Mat, Method,
    StateError, TransferOperands,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_block(rng: &mut ChaCha8Rng, scale: f64) -> Mat {
    Mat::from_fn(3, 3, |_, _| rng.gen_range(-scale..=scale))
}

fn norm_domination() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut held = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let n = rng.gen_range(2..=10);
        let alpha0 = random_block(&mut rng, 0.3);
        let c = (0..n).map(|_| random_block(&mut rng, 0.4)).collect();
        let d = (0..n).map(|_| random_block(&mut rng, 0.4)).collect();
        let ops = TransferOperands::new(alpha0, c, d).unwrap();
        let g = inf_norm(&assemble_g(&ops));
        let gm = inf_norm(&assemble_gm(&ops));
        worst = worst.max(g - gm);
        if g <= gm + 1e-9 {
            held += 1;
        }
    }
    outcome(
        held == 200,
        format!("|G| <= |G_m| in {held}/200 random instances, max(|G| - |G_m|) = {worst:.3e}"),
    )
}

/// Largest row sum of the scalar majorant, summing each geometric series
/// term by term.
fn scalar_row_sum_oracle(n_alpha: f64, n_cu: f64, n: usize) -> f64 {
    let a = |i: usize| (0..=i).map(|l| (-n_alpha).powi(l as i32)).sum::<f64>();
    let b = |i: usize| -(1..=i).map(|l| (-n_alpha).powi(l as i32)).sum::<f64>();
    (1..=n)
        .map(|j| {
            let mut row = a(j).abs();
            for i in 1..j {
                // b_i c_i d_{i+1} ... d_{j-1}
                row += (b(i) * n_cu.powi((j - i) as i32)).abs();
            }
            row
        })
        .fold(0.0, f64::max)
}

fn grid() -> impl Iterator<Item = (f64, f64)> {
    (0..10).flat_map(|i| {
        (0..10).map(move |j| (0.1 + 0.8 * i as f64 / 9.0, 0.05 + 0.4 * j as f64 / 9.0))
    })
}

fn closed_form_agreement() -> Outcome {
    let mut agree = 0;
    let mut bounded = 0;
    let mut total = 0;
    let mut worst_gap: f64 = 0.0;
    let mut worst_excess = f64::NEG_INFINITY;
    for n in [10, 40] {
        for (na, ncu) in grid() {
            total += 1;
            let s = |v: f64| Mat::from_rows(&[[v]]);
            let ops = TransferOperands::constant(s(na), s(ncu), s(ncu), n).unwrap();
            let gm = inf_norm(&assemble_gm(&ops));
            let exact = scalar_row_sum_oracle(na, ncu, n);
            worst_gap = worst_gap.max((gm - exact).abs());
            if (gm - exact).abs() <= 1e-9 {
                agree += 1;
            }
            let bound = closed_form_bound(na, ncu).unwrap();
            worst_excess = worst_excess.max(gm - bound);
            if bound >= gm {
                bounded += 1;
            }
        }
    }
    outcome(
        agree == total && bounded == total,
        format!(
            "row-sum agreement {agree}/{total} (max gap {worst_gap:.1e}); closed-form bound >= |G_m| in {bounded}/{total} (max excess {worst_excess:.4})"
        ),
    )
}

fn threshold() -> Outcome {
    let mut at_half = 0;
    let mut below = 0;
    let mut count = 0;
    for (na, ncu) in grid() {
        count += 1;
        if closed_form_bound(na, 0.5).unwrap() == 1.0 {
            at_half += 1;
        }
        if closed_form_bound(na, ncu).unwrap() < 1.0 {
            below += 1;
        }
    }
    outcome(
        at_half == count && below == count,
        format!("bound == 1 at n_cu = 0.5 for {at_half}/{count}; bound < 1 on {below}/{count} grid points"),
    )
}

fn desk_convergence() -> Outcome {
    let env = EnvironmentModel::linear("linear_1000", 1000.0, 0.01).unwrap();
    let reference = make_reference(&env, 0.004, 2.0, 0.05).unwrap();
    let params = AdmittanceParams::new(12.0, 19.0, 2784.0).unwrap();
    let cfg = LearnConfig {
        alpha: 0.3,
        iterations: 200,
        ..LearnConfig::default()
    };
    let out = run_learning(
        &cfg,
        &env,
        &reference,
        &params,
        StateError::new(-0.002, 0.0),
    )
    .unwrap();
    let ratio = out.points.last().unwrap().rmse_force / out.points[0].rmse_force;
    let k0 = lyapunov_of_curve(&out.points).unwrap().monotone_from;
    outcome(
        ratio < 1e-3 && k0 <= 10,
        format!("final/initial force rmse = {ratio:.3e} (< 1e-3), Lyapunov monotone from k0 = {k0} (<= 10)"),
    )
}

fn table_ordering() -> Outcome {
    let mut ordered = 0;
    let mut cells = Vec::new();
    for task in preset_names() {
        let final_force = |method| {
            let cfg = ExperimentConfig {
                task: task.to_string(),
                method,
                ..ExperimentConfig::default()
            };
            run_experiment(&cfg).unwrap().final_point().rmse_force
        };
        let (ilc, mfac, adm) = (
            final_force(Method::IlcMbk),
            final_force(Method::Mfac),
            final_force(Method::Admittance),
        );
        if ilc < mfac && mfac < adm {
            ordered += 1;
        }
        cells.push(format!("{task} {ilc:.2e}<{mfac:.2e}<{adm:.2e}"));
    }
    outcome(
        ordered >= 3,
        format!(
            "ILC-MBK < MFAC < admittance on {ordered}/4 tasks [{}]",
            cells.join("; ")
        ),
    )
}

fn zero_error_fixed_point() -> Outcome {
    let cfg = LearnConfig {
        iterations: 50,
        ..LearnConfig::default()
    };
    let mut held = 0;
    for task in preset_names() {
        let p = preset(task).unwrap();
        let r = p.reference(0.05).unwrap();
        let out = run_learning(&cfg, &p.env, &r, &p.params, StateError::default()).unwrap();
        let start = GainSchedule::from_params(&p.params, r.horizon(), r.dt).unwrap();
        let zero = out
            .points
            .iter()
            .all(|q| q.rmse_position == 0.0 && q.rmse_force == 0.0 && q.e_inf == 0.0);
        let velocity_zero = out.last.errors.iter().all(|e| e.v == 0.0);
        if zero && velocity_zero && out.gains == start {
            held += 1;
        }
    }
    outcome(
        held == 4,
        format!("e == 0 and gains unchanged for 50 iterations on {held}/4 tasks"),
    )
}

fn estimator_projection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut monotone = 0;
    let mut converged = 0;
    let mut most_updates = 0;
    for _ in 0..100 {
        let c_true: f64 = rng.gen_range(-2000.0..=-1.0);
        let c0: f64 = c_true + rng.gen_range(-500.0..=500.0);
        let eta: f64 = 2.0 - rng.gen_range(0.0..2.0);
        let mu: f64 = rng.gen_range(0.1..=10.0);
        let probe: f64 = rng.gen_range(0.1..=1.0);

        let pred_err = |c: &Mat| ((c_true - c[(0, 0)]) * probe).abs();
        let mut c = Mat::from_rows(&[[c0]]);
        let mut ok = true;
        let mut prev = pred_err(&c);
        for _ in 0..100 {
            let phi: f64 = rng.gen_range(-3.0..=3.0);
            c = projection_update(&c, &[phi], &[c_true * phi], mu, eta).unwrap();
            let e = pred_err(&c);
            if e > prev {
                ok = false;
            }
            prev = e;
        }
        if ok {
            monotone += 1;
        }

        // persistent excitation: |phi| bounded away from zero
        let mut c = Mat::from_rows(&[[c0]]);
        let start = pred_err(&c);
        let mut updates = 0;
        while pred_err(&c) >= 1e-6 * start && updates < 1_000_000 {
            let mag: f64 = rng.gen_range(0.5..=2.0);
            let phi = if rng.gen_bool(0.5) { mag } else { -mag };
            c = projection_update(&c, &[phi], &[c_true * phi], mu, eta).unwrap();
            updates += 1;
        }
        most_updates = most_updates.max(updates);
        if pred_err(&c) < 1e-6 * start {
            converged += 1;
        }
    }
    outcome(
        monotone == 100 && converged == 100,
        format!(
            "non-increasing over 100 updates in {monotone}/100; below 1e-6 of initial under excitation in {converged}/100 (worst {most_updates} updates)"
        ),
    )
}

fn penrose() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut held = 0;
    let mut rank_one = 0;
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let a = if trial % 4 == 0 {
            rank_one += 1;
            let u: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..=10.0)).collect();
            let v: Vec<f64> = (0..2).map(|_| rng.gen_range(-10.0..=10.0)).collect();
            Mat::outer(&u, &v)
        } else {
            let scale = 10f64.powi(rng.gen_range(-3..=3));
            Mat::from_fn(3, 2, |_, _| scale * rng.gen_range(-1.0..=1.0))
        };
        let p = pinv(&a).unwrap();
        let ap = mat_mul(&a, &p).unwrap();
        let pa = mat_mul(&p, &a).unwrap();
        let rel = |x: &Mat, y: &Mat, s: f64| x.sub(y).unwrap().max_abs() / s.max(f64::MIN_POSITIVE);
        let errs = [
            rel(&mat_mul(&ap, &a).unwrap(), &a, a.max_abs()),
            rel(&mat_mul(&pa, &p).unwrap(), &p, p.max_abs()),
            rel(&ap.transpose(), &ap, ap.max_abs()),
            rel(&pa.transpose(), &pa, pa.max_abs()),
        ];
        let e = errs.iter().cloned().fold(0.0, f64::max);
        worst = worst.max(e);
        if e <= 1e-8 {
            held += 1;
        }
    }
    outcome(
        held == 1000,
        format!(
            "all four conditions within 1e-8 on {held}/1000 ({rank_one} rank-1), worst {worst:.1e}"
        ),
    )
}

fn determinism() -> Outcome {
    let mut identical = 0;
    let mut files = 0;
    for method in Method::ALL {
        let run = || {
            let dir = tempfile::tempdir().unwrap();
            let cfg = ExperimentConfig {
                method,
                iterations: 60,
                seed: 11,
                reference_noise: 0.02,
                out: dir.path().to_path_buf(),
                ..ExperimentConfig::default()
            };
            let (_, written) = run_and_persist(&cfg).unwrap();
            let mut paths = vec![written.csv, written.summary];
            paths.extend(written.certificate);
            let bytes: Vec<Vec<u8>> = paths.iter().map(|p| fs::read(p).unwrap()).collect();
            (dir, bytes)
        };
        let (_d1, a) = run();
        let (_d2, b) = run();
        files += a.len();
        identical += a.iter().zip(&b).filter(|(x, y)| x == y).count();
    }
    outcome(
        identical == files && files > 0,
        format!("{identical}/{files} output files byte-identical across repeated runs"),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (
            "1 norm domination",
            norm_domination,
            Some(Duration::from_secs(5)),
        ),
        ("2 closed-form bound agreement", closed_form_agreement, None),
        ("3 certificate threshold", threshold, None),
        (
            "4 desk-scale convergence",
            desk_convergence,
            Some(Duration::from_secs(10)),
        ),
        (
            "5 method ordering",
            table_ordering,
            Some(Duration::from_secs(120)),
        ),
        ("6 zero-error fixed point", zero_error_fixed_point, None),
        ("7 estimator projection", estimator_projection, None),
        ("8 pseudoinverse Penrose", penrose, None),
        ("9 determinism", determinism, None),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let t = Instant::now();
        let mut o = check();
        let took = t.elapsed();
        if let Some(limit) = budget {
            if took > limit {
                o.pass = false;
                o.detail.push_str(&format!("; over time budget {limit:?}"));
            }
        }
        if !o.pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {name}: {} ({:.2?})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            took
        );
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
