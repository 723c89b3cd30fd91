//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::f64::consts::TAU;
use std::process::Command;
use std::time::Instant;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smd::mc::{self, McConfig, StartState};
use smd::model::{eval_t2, sigma, t1_ode_residual, wrap_angle};
use smd::solver::{self, convergence_study, MeanConvention, Mode, SolverConfig};
use smd::sweep::{self, minimize_bracketed, Scale, SweepError, SweepSpec};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_budget(started: Instant, budget: f64, detail: String) -> Outcome {
    let t = started.elapsed().as_secs_f64();
    check(t < budget, format!("{detail}; {t:.2} s (budget {budget} s)"))
}

fn closed_form_exactness() -> Outcome {
    let started = Instant::now();
    let mut worst_point = 0.0f64;
    let mut worst_mean = 0.0f64;
    for radius in [1.0, 2.0] {
        for d1 in [0.5, 1.0] {
            for eps in [0.1, 0.3] {
                let p = params(radius, d1, 1.0, 0.0, 0.1, eps, 0.0);
                let s = solver::solve(&p, &SolverConfig::default()).map_err(|e| e.to_string())?;
                let sig = sigma(&p);
                for k in 0..1000 {
                    let theta = TAU * (k as f64 + 0.5) / 1000.0;
                    let expected = no_excursion_t1(sig, eps, theta);
                    let got = s.t1(theta).map_err(|e| e.to_string())?;
                    let err = if expected == 0.0 {
                        got.abs()
                    } else {
                        ((got - expected) / expected).abs()
                    };
                    worst_point = worst_point.max(err);
                }
                let expected = sig * (TAU - 2.0 * eps).powi(3) / 12.0;
                worst_mean = worst_mean.max(((s.mean(MeanConvention::Integral) - expected) / expected).abs());
            }
        }
    }
    if !(worst_point < 1e-12 && worst_mean < 1e-10) {
        return Err(format!("pointwise {worst_point:.2e}, mean {worst_mean:.2e}"));
    }
    within_budget(
        started,
        1.0,
        format!("max pointwise rel err {worst_point:.2e}, max mean rel err {worst_mean:.2e}"),
    )
}

fn surface_equation_residual() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = random_params(&mut rng);
        let order = rng.gen_range(1..=48);
        let c = random_coefficients(&mut rng, order, false);
        for _ in 0..20 {
            let theta = random_free_angle(&mut rng, &p, 0.0);
            let r = t1_ode_residual(&c, &p, theta).map_err(|e| e.to_string())?;
            worst = worst.max(r.relative());
        }
    }
    if !(worst < 1e-10) {
        return Err(format!("max relative residual {worst:.2e}"));
    }
    within_budget(
        started,
        1.0,
        format!("max relative residual {worst:.2e} over 100 coefficient sets x 20 angles"),
    )
}

fn bulk_harmonicity() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = random_params(&mut rng);
        let c = random_coefficients(&mut rng, 8, false);
        let r = p.geometry.radius * rng.gen_range(0.1..0.9);
        let theta = rng.gen_range(0.0..TAU);
        let f = |r: f64, th: f64| eval_t2(&c, &p, r, wrap_angle(th)).unwrap();
        let mid = f(r, theta);
        let (rp, rm) = (f(r + h, theta), f(r - h, theta));
        let (tp, tm) = (f(r, theta + h), f(r, theta - h));
        let lap = (rp - 2.0 * mid + rm) / (h * h) + (rp - rm) / (2.0 * h * r) + (tp - 2.0 * mid + tm) / (h * h * r * r);
        let expected = -1.0 / p.transport.d2;
        worst = worst.max(((lap - expected) / expected).abs());
    }
    if !(worst < 1e-4) {
        return Err(format!("max relative deviation {worst:.2e}"));
    }
    within_budget(
        started,
        1.0,
        format!("max relative deviation of FD Laplacian from -1/D2: {worst:.2e}"),
    )
}

fn boundary_convergence() -> Outcome {
    let started = Instant::now();
    let p = reference();
    let cfg = SolverConfig::default();
    let rows = convergence_study(&p, &cfg, &[8, 16, 32], MeanConvention::Integral).map_err(|e| e.to_string())?;
    let l2: Vec<f64> = rows
        .iter()
        .map(|r| r.residual_l2().ok_or(format!("order {} failed", r.order)))
        .collect::<Result<_, _>>()?;
    let integral = rows[2].mean().unwrap();
    let average = integral / p.geometry.free_arc();
    let decreasing = l2[0] > l2[1] && l2[1] > l2[2];
    let ratio = l2[2] / integral;
    println!(
        "     info [4]: l2(N=32) / arc-average mean = {:.3e} (average {average:.5}; not below 1e-3 under that convention)",
        l2[2] / average
    );
    let detail = format!(
        "l2 = {:.3e}, {:.3e}, {:.3e}; l2(32) / integral mean {integral:.4} = {ratio:.3e}",
        l2[0], l2[1], l2[2]
    );
    if !(decreasing && ratio < 1e-3) {
        return Err(detail);
    }
    within_budget(started, 10.0, detail)
}

fn cross_validation() -> Outcome {
    let p = reference();
    let spectral = solver::solve(&p, &SolverConfig::default())
        .map_err(|e| e.to_string())?
        .mean(MeanConvention::Average);
    let base = McConfig::for_params(&p);
    let mut details = Vec::new();
    let mut ok = true;
    for dt in [base.dt_surface, base.dt_surface / 2.0] {
        let cfg = base.with_dt(dt);
        let started = Instant::now();
        let est = mc::estimate_mfpt(&p, StartState::UniformOffTargetSurface, &cfg).map_err(|e| e.to_string())?;
        let band = 3.0 * est.stderr + 0.02 * spectral;
        let diff = (spectral - est.mean).abs();
        ok &= mc::agrees(spectral, &est, 3.0, 0.02);
        details.push(format!(
            "dt={dt:.0e}: mc {:.5} ± {:.5}, |diff| {diff:.4} <= {band:.4}, z {:.2}, {:.1} s",
            est.mean,
            est.stderr,
            mc::zscore(spectral, &est).unwrap_or(f64::NAN),
            started.elapsed().as_secs_f64()
        ));
    }
    check(ok, format!("spectral {spectral:.5}; {}", details.join("; ")))
}

fn symmetry_elimination() -> Outcome {
    let started = Instant::now();
    let p = reference();
    let g = solver::solve(&p, &SolverConfig::default().with_mode(Mode::General)).map_err(|e| e.to_string())?;
    let s = solver::solve(&p, &SolverConfig::default()).map_err(|e| e.to_string())?;
    let amax = g.coeffs.alpha.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bmax = g.coeffs.beta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (mg, ms) = (g.mean(MeanConvention::Average), s.mean(MeanConvention::Average));
    let rel = ((mg - ms) / ms).abs();
    let detail = format!("max|beta|/max|alpha| = {:.2e}, mean rel diff {rel:.2e}", bmax / amax);
    if !(bmax < 1e-8 * amax && rel < 1e-8) {
        return Err(detail);
    }
    within_budget(started, 5.0, detail)
}

fn rotational_covariance() -> Outcome {
    let started = Instant::now();
    let base = reference();
    let shift = 1.0;
    let rotated = base.with_target_center(shift);
    let general = SolverConfig::default().with_mode(Mode::General);
    let s0 = solver::solve(&base, &general).map_err(|e| e.to_string())?;
    let s1 = solver::solve(&rotated, &general).map_err(|e| e.to_string())?;
    let (mut sup, mut norm) = (0.0f64, 0.0f64);
    for k in 0..4096 {
        let theta = TAU * (k as f64 + 0.5) / 4096.0;
        let a = s0.t1(theta).map_err(|e| e.to_string())?;
        let b = s1.t1(wrap_angle(theta + shift)).map_err(|e| e.to_string())?;
        sup = sup.max((a - b).abs());
        norm = norm.max(a.abs());
    }
    let cos_only = solver::fit(&rotated, &SolverConfig::default()).map_err(|e| e.to_string())?;
    let l2_ratio = cos_only.boundary_residual_l2 / s1.boundary_residual_l2;
    let sup_ratio = cos_only.boundary_residual_sup / s1.boundary_residual_sup;
    let detail = format!(
        "shifted sup rel err {:.2e}; symmetric/general residual ratio l2 {l2_ratio:.1}, sup {sup_ratio:.1}",
        sup / norm
    );
    if !(sup < 1e-6 * norm && l2_ratio >= 100.0) {
        return Err(detail);
    }
    within_budget(started, 10.0, detail)
}

fn optimizer_correctness() -> Outcome {
    let started = Instant::now();
    let p = params(1.0, 1.0, 1.0, 1.0, 0.5, 0.3, 0.0);
    let (lo, hi) = (0.5, 50.0);
    let cfg = SolverConfig::default();
    let spec = SweepSpec {
        lambda_min: lo,
        lambda_max: hi,
        points: 200,
        scale: Scale::Log,
    };
    let rows = sweep::sweep_lambda(&p, &spec, &cfg, MeanConvention::Average).map_err(|e| e.to_string())?;
    let values: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| {
            r.outcome
                .as_ref()
                .map(|rec| (r.lambda, rec.mean_mfpt))
                .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let (k, &(grid_x, _)) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .unwrap();
    if k == 0 || k == values.len() - 1 {
        return Err(format!("dense grid argmin at the bracket end ({grid_x})"));
    }
    let spacing = (hi / lo).ln() / 199.0;
    let m = sweep::optimize_lambda(&p, (lo, hi), 1e-6, &cfg, MeanConvention::Average).map_err(|e| e.to_string())?;
    let offset = (m.x / grid_x).ln().abs();
    let tol = 1e-8;
    let stub = minimize_bracketed::<SweepError, _>(|x| Ok((x - 3.0).powi(2) + 1.0), 0.5, 20.0, tol)
        .map_err(|e| e.to_string())?;
    let stub_err = (stub.x - 3.0).abs();
    let detail = format!(
        "golden {:.4} vs grid argmin {grid_x:.4}: |ln ratio| {offset:.4} <= spacing {spacing:.4} ({} evals); stub x* = {:.9}",
        m.x, m.evaluations, stub.x
    );
    if !(offset <= spacing && stub_err <= tol * 3.0) {
        return Err(detail);
    }
    within_budget(started, 60.0, detail)
}

fn run_binary(args: &[&str]) -> Result<Vec<u8>, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_smd"))
        .args(args)
        .env_remove("SMD_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("smd {args:?} exited with {:?}", o.status.code()));
    }
    Ok(o.stdout)
}

fn determinism() -> Outcome {
    let sweep_args = ["sweep", "--lambda-min", "0.01", "--lambda-max", "100", "--points", "9"];
    let sim_args = ["simulate", "--paths", "2000", "--dt", "1e-3", "--seed", "42"];
    let cmp_args = [
        "compare", "--paths", "2000", "--dt", "1e-3", "--seed", "7", "--format", "csv",
    ];
    let mut identical = true;
    let mut sizes = Vec::new();
    for args in [&sweep_args[..], &sim_args[..], &cmp_args[..]] {
        let a = run_binary(args)?;
        let b = run_binary(args)?;
        identical &= a == b && !a.is_empty();
        sizes.push(a.len());
    }
    let p = reference();
    let spec = SweepSpec {
        lambda_min: 0.01,
        lambda_max: 100.0,
        points: 9,
        scale: Scale::Log,
    };
    let csv = || -> Result<Vec<u8>, String> {
        let rows = sweep::sweep_lambda(&p, &spec, &SolverConfig::default(), MeanConvention::Average)
            .map_err(|e| e.to_string())?;
        let records: Vec<_> = rows
            .into_iter()
            .map(|r| r.outcome.map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        let mut out = Vec::new();
        sweep::write_sweep_csv(&mut out, &records).map_err(|e| e.to_string())?;
        Ok(out)
    };
    let in_process = csv()?;
    identical &= in_process == csv()?;
    identical &= in_process == run_binary(&sweep_args)?;
    check(
        identical,
        format!(
            "sweep, simulate and compare CSV byte-identical across runs ({sizes:?} bytes); library and CLI sweep agree"
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("closed-form branch exactness", closed_form_exactness),
        ("surface equation residual", surface_equation_residual),
        ("bulk harmonicity", bulk_harmonicity),
        ("boundary-matching convergence", boundary_convergence),
        ("Monte Carlo cross-validation", cross_validation),
        ("symmetry elimination", symmetry_elimination),
        ("rotational covariance", rotational_covariance),
        ("optimizer correctness", optimizer_correctness),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL [{}] {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
