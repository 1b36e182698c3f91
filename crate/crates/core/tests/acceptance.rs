//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::f64::consts::{E, PI};
use std::time::Instant;

use ergodic_lab::bounds::{self, CalibrationConstants, Constant, DiscreteExponentChoice, PacRequest};
use ergodic_lab::exec::{self, Execution, SimOptions};
use ergodic_lab::functionals::{self as fun, TestFunction};
use ergodic_lab::langevin::{self, UlaPacConfig, UlaPlan};
use ergodic_lab::lasso::{self, GramSystem, LassoPipeline};
use ergodic_lab::output::{fmt_num, CsvTable};
use ergodic_lab::sde::{self, DiffusionModel, StationaryMethod};
use ergodic_lab::{lab, rng};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

const SEED: u64 = 20240601;

struct Outcome {
    pass: bool,
    detail: String,
    csv: String,
    info: Option<String>,
}

type Experiment = fn(u64) -> ergodic_lab::Result<Outcome>;

fn render(cols: &[&str], rows: Vec<Vec<String>>, tag: &str) -> String {
    CsvTable::new(cols, rows).render(&json!({ "experiment": tag }))
}

fn ou() -> DiffusionModel {
    DiffusionModel::ornstein_uhlenbeck(1, 1.0, 2f64.sqrt()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn formula_exactness(_: u64) -> ergodic_lab::Result<Outcome> {
    let ones = CalibrationConstants::default();
    let e4 = (-4f64).exp();
    let choice = DiscreteExponentChoice { alpha: 2.0, gamma_tilde: 5.0, r: Some(2.0), rho: 5.0, sigma_tilde: 3.5 };
    let cases: Vec<(&str, f64, f64)> = vec![
        ("kappa(0,0)", bounds::kappa(0.0, 0.0)?, 2.0 / 3.0),
        ("c(0.5,1)", bounds::cattiaux_c(0.5, 1.0)?, 3f64.sqrt() / 2.0),
        (
            "psi_cont unbounded",
            bounds::sample_length_continuous(&PacRequest::new(0.1, e4)?, 1.0, 0.0, 1.0, 1.0, &ones)?,
            (E * 128.0 / 0.1).powi(2),
        ),
        (
            "psi_cont bounded",
            bounds::sample_length_continuous(&PacRequest::new(0.1, 2.0 * e4)?, 0.0, 0.0, 0.0, 1.0, &ones)?,
            32400.0,
        ),
        ("lambda_min", bounds::lasso_lambda_min(3.0, 1, 6.0 / E, 1.0, 1.0)?, 2.0),
        (
            "t0",
            bounds::lasso_t0((-1f64).exp(), 1, 1.0, 1.0, 0.0, 0.0, 1, 1.0)?,
            (2.0 * 21f64.ln() + 1.0).powi(3) * 324.0 * 9.0 * E * E,
        ),
        (
            "psi_disc",
            bounds::sample_size_discrete_for(&PacRequest::new(0.1, e4)?, 0.01, &choice, &ones)?,
            (3.0 * E).powi(2) * 4f64.powi(7) / 1e-4,
        ),
        (
            "phi",
            bounds::discrete_moment_bound(100.0, 0.1, 2.0, &ones, &choice)?,
            10.0 * 0.1f64.powf(1.5) + 3.2 + 2f64.powf(3.5),
        ),
        (
            "ula_tv",
            bounds::ula_tv_bound(1e4, 1e-3, 1.0, 0.5, 1, 1.0, 0.0, &ones)?,
            (-(10f64).powf(1.0 / 3.0)).exp() + (1e-2f64 / 2.0).sqrt(),
        ),
        (
            "mu_const",
            bounds::mu_moment_constant(0.0, 1.0, 1.0)?,
            (E / 2.0 + 1.0 / 12.0).exp() / E * (2.0 * PI).sqrt(),
        ),
    ];
    let worst = cases.iter().map(|(_, v, h)| rel(*v, *h)).fold(0.0, f64::max);
    let rows = cases.iter().map(|(n, v, h)| vec![n.to_string(), fmt_num(*v), fmt_num(*h)]).collect();
    Ok(Outcome {
        pass: worst <= 1e-9,
        detail: format!("{} cases, worst relative error {worst:.2e}", cases.len()),
        csv: render(&["case", "value", "hand"], rows, "formulas"),
        info: None,
    })
}

fn poisson_oracle(seed: u64) -> ergodic_lab::Result<Outcome> {
    let model = ou();
    let opts = SimOptions::with_step(1e-3);
    let lin = TestFunction::coordinate(0).with_centered_mean(0.0);
    let quad = TestFunction::squared_norm().with_centered_mean(1.0);
    let a = fun::estimate_poisson_potential_with(&model, &lin, &[1.0], 12.0, 20_000, seed, &opts)?;
    let b = fun::estimate_poisson_potential_with(&model, &quad, &[2.0], 12.0, 20_000, rng::sub_seed(seed, "quad"), &opts)?;
    let ok = |est: &fun::PoissonEstimate, want: f64| {
        let err = (est.estimate - want).abs();
        err <= 3.0 * est.stderr && err <= 0.1
    };
    let rows = vec![
        vec!["x@1".into(), fmt_num(a.estimate), fmt_num(a.stderr)],
        vec!["x2-1@2".into(), fmt_num(b.estimate), fmt_num(b.stderr)],
    ];
    Ok(Outcome {
        pass: ok(&a, -1.0) && ok(&b, -1.5),
        detail: format!("{:.4} (se {:.4}) vs -1, {:.4} (se {:.4}) vs -1.5", a.estimate, a.stderr, b.estimate, b.stderr),
        csv: render(&["case", "estimate", "stderr"], rows, "poisson"),
        info: None,
    })
}

fn ergodic_average_pac(seed: u64) -> ergodic_lab::Result<Outcome> {
    let req = PacRequest::new(0.05, 0.05)?;
    let rep = lab::burnin_coverage(&ou(), &TestFunction::squared_norm(), &[0.0], 10.0, 500.0, 1.0, &req, 100, seed, &SimOptions::with_step(1e-3))?;
    Ok(Outcome {
        pass: rep.within_eps >= 98,
        detail: format!("{}/100 within 0.05 of 1", rep.within_eps),
        csv: rep.to_csv().render(&json!({ "experiment": "burnin" })),
        info: None,
    })
}

fn tail_calibration(seed: u64) -> ergodic_lab::Result<Outcome> {
    let model = ou();
    let f = TestFunction::coordinate(0).with_centered_mean(0.0);
    let opts = SimOptions::with_step(1e-3);
    let grid = [2.0, 2.5, 3.0];
    let e = &model.ergodicity;
    let st = bounds::sigma_tilde(f.eta1, e.q, e.q_prime);
    let (values, _) = lab::functional_values(&model, &f, 100.0, 2000, StationaryMethod::Exact, seed, &opts)?;
    let train = lab::TailTable::from_values(&values, &[])?;
    let w = lab::calibrate_w(&train, f.l_frak, st, &grid)?;
    let (fresh_vals, _) =
        lab::functional_values(&model, &f, 100.0, 2000, StationaryMethod::Exact, rng::sub_seed(seed, "fresh"), &opts)?;
    let fresh = lab::TailTable::from_values(&fresh_vals, &[])?;
    let viol = lab::w_violations(&fresh, w, f.l_frak, st, &grid);
    let var = exec::sample_variance(&values);
    let rows = grid
        .iter()
        .map(|&u| {
            let th = w * E * f.l_frak * u.powf(st);
            vec![fmt_num(u), fmt_num(train.fraction_above(th)), fmt_num(fresh.fraction_above(th))]
        })
        .collect();
    Ok(Outcome {
        pass: viol.is_empty() && (var - 2.0).abs() <= 0.15 * 2.0,
        detail: format!("w_hat {w:.4}, fresh violations {viol:?}, variance {var:.4}"),
        csv: render(&["u", "train_fraction", "fresh_fraction"], rows, "tails"),
        info: None,
    })
}

fn discrete_continuous(seed: u64) -> ergodic_lab::Result<Outcome> {
    let model = ou();
    let f = TestFunction::coordinate(0);
    let fine = 1e-3;
    let steps = [0.5, 0.1, 0.02];
    let diffs = exec::map_indices(200, Execution::default(), |i| -> ergodic_lab::Result<Vec<f64>> {
        let x0 = sde::sample_stationary(&model, StationaryMethod::Exact, rng::sub_seed(seed, &format!("x0-{i}")))?;
        let t = sde::euler_maruyama(&model, &x0, fine, 100_000, seed, i)?;
        let cont = fun::continuous_additive(&t, &f)?;
        steps
            .iter()
            .map(|&d| {
                let stride = (d / fine).round() as usize;
                Ok(fun::discrete_additive(&t.sampled(stride), d, &f)? - cont)
            })
            .collect()
    })
    .into_iter()
    .collect::<ergodic_lab::Result<Vec<_>>>()?;
    let rms: Vec<f64> = (0..steps.len()).map(|j| (diffs.iter().map(|d| d[j] * d[j]).sum::<f64>() / diffs.len() as f64).sqrt()).collect();
    let rows = steps.iter().zip(&rms).map(|(d, r)| vec![fmt_num(*d), fmt_num(*r)]).collect();
    Ok(Outcome {
        pass: rms.windows(2).all(|w| w[1] < w[0]),
        detail: format!("rms {rms:.4?} for steps {steps:?}"),
        csv: render(&["step", "rms"], rows, "discretisation"),
        info: None,
    })
}

fn ula_ar1(seed: u64) -> ergodic_lab::Result<Outcome> {
    let pot = langevin::gaussian_potential(1)?;
    let delta = 0.01;
    let n = 10_000_000u64;
    let burn = 10_000u64;
    let (mut s1, mut s2, mut lag, mut prev) = (0.0, 0.0, 0.0, None::<f64>);
    let mut r = rng::stream(seed, 0);
    langevin::ula_drive(&pot, &[0.0], delta, n, &mut r, |k, x| {
        if k > burn {
            s1 += x[0];
            s2 += x[0] * x[0];
            if let Some(p) = prev {
                lag += p * x[0];
            }
            prev = Some(x[0]);
        }
        Ok(())
    })?;
    let cnt = (n - burn) as f64;
    let mean = s1 / cnt;
    let var = s2 / cnt - mean * mean;
    let rho = (lag / (cnt - 1.0) - mean * mean) / var;
    let want = 1.0 / (1.0 - delta / 2.0);
    Ok(Outcome {
        pass: rel(var, want) <= 0.02 && (rho - 0.99).abs() <= 0.01,
        detail: format!("variance {var:.5} vs {want:.5}, lag-1 {rho:.5}"),
        csv: render(&["variance", "lag1"], vec![vec![fmt_num(var), fmt_num(rho)]], "ar1"),
        info: None,
    })
}

fn ula_heavy_pac(seed: u64) -> ergodic_lab::Result<Outcome> {
    let pot = langevin::make_heavy_potential(1, 0.5, 1.0, 1.0)?;
    let f = TestFunction::squared_norm();
    let req = PacRequest::new(0.1, 0.05)?;
    let target = langevin::quadrature_target_integral(&pot, &f, pot.default_half_width()?, 4001)?;
    let opts = SimOptions::default();
    let d_hat = langevin::calibrate_d_hat(&pot, &f, target, 0.05, 1000, 20_000, 100, rng::sub_seed(seed, "d"), &[2.0, 2.5, 3.0], &opts)?;
    let consts = CalibrationConstants { d_frak: Constant::calibrated(d_hat), ..Default::default() };
    let mut rows = vec![vec!["target".into(), fmt_num(target)], vec!["d_hat".into(), fmt_num(d_hat)]];

    let mut cfg = UlaPacConfig::new(req, consts, 100, seed);
    cfg.plan = UlaPlan::Override { delta_step: 0.05, n: 1_000_000, m: 10_000 };
    let explo = langevin::ula_pac_experiment_with(&pot, &f, &cfg, &opts)?;
    let info = format!(
        "INFO criterion 7 exploratory run (step 0.05, n 1e6, m 1e4, outside the tuning rule): {}/100 within 0.1 of {target:.4}",
        explo.coverage.within_eps
    );
    rows.push(vec!["exploratory_within".into(), explo.coverage.within_eps.to_string()]);

    cfg.plan = UlaPlan::Tuned;
    let (pass, detail) = match langevin::ula_pac_experiment_with(&pot, &f, &cfg, &opts) {
        Ok(rep) => (rep.coverage.within_eps >= 95, format!("tuned step {:e}, {}/100 within 0.1", rep.delta_step, rep.coverage.within_eps)),
        Err(e) => (false, format!("target {target:.4}, d_hat {d_hat:.4}; tuned run not executable: {e}")),
    };
    Ok(Outcome { pass, detail, csv: render(&["quantity", "value"], rows, "ula_heavy"), info: Some(info) })
}

fn lasso_pipeline(seed: u64) -> ergodic_lab::Result<Outcome> {
    let pipe = LassoPipeline::diagonal_linear(&[-1.0, -1.5, -1.0, -2.0, -1.2])?;
    let (d_inf, e_inf) = pipe.pilot_constants(1000.0, seed)?;
    let runs = exec::map_indices(50, Execution::default(), |i| pipe.run(&[200.0, 400.0], d_inf, e_inf, seed, i))
        .into_iter()
        .collect::<ergodic_lab::Result<Vec<_>>>()?;
    let holds = runs.iter().filter(|r| r[0].1.holds).count();
    let median = |k: usize| {
        let mut v: Vec<f64> = runs.iter().map(|r| r[k].1.lhs).collect();
        v.sort_by(f64::total_cmp);
        0.5 * (v[24] + v[25])
    };
    let (m200, m400) = (median(0), median(1));
    let drop = 1.0 - m400 / m200;
    let rows = runs
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            r.iter().zip([200.0, 400.0]).map(move |((fit, oc), t)| {
                vec![i.to_string(), fmt_num(t), fmt_num(fit.lambda), fmt_num(oc.lhs), fmt_num(oc.rhs), (oc.holds as u8).to_string()]
            })
        })
        .collect();
    Ok(Outcome {
        pass: holds >= 45 && drop >= 0.4,
        detail: format!("bound holds in {holds}/50 at T=200; median error {m200:.4} -> {m400:.4} ({:.0}% drop)", 100.0 * drop),
        csv: render(&["replicate", "t", "lambda", "lhs", "rhs", "holds"], rows, "lasso"),
        info: None,
    })
}

fn random_system(n: usize, seed: u64) -> GramSystem {
    let mut r = rng::stream(seed, 0);
    let b = DMatrix::from_fn(n, n, |_, _| rng::normal(&mut r));
    let psi = b.transpose() * &b / n as f64 + DMatrix::identity(n, n) * 0.1;
    let h = DVector::from_fn(n, |_, _| rng::normal(&mut r));
    GramSystem::new(psi, h, 1.0).unwrap()
}

// Exhaustive search on a coarse grid, then on a fine grid around the coarse
// minimiser; the objective is convex so the coarse cell brackets the optimum.
fn brute_force_2d(sys: &GramSystem, lambda: f64) -> [f64; 2] {
    let (a, b, c) = (sys.psi_bar[(0, 0)], sys.psi_bar[(0, 1)], sys.psi_bar[(1, 1)]);
    let (h0, h1) = (sys.h_bar[0], sys.h_bar[1]);
    let obj = |x: f64, y: f64| a * x * x + 2.0 * b * x * y + c * y * y - 2.0 * (h0 * x + h1 * y) + lambda * (x.abs() + y.abs());
    let search = |cx: f64, cy: f64, half: f64, h: f64| {
        let k = (half / h).round() as i64;
        let mut best = (f64::INFINITY, cx, cy);
        for i in -k..=k {
            for j in -k..=k {
                let (x, y) = (cx + i as f64 * h, cy + j as f64 * h);
                let v = obj(x, y);
                if v < best.0 {
                    best = (v, x, y);
                }
            }
        }
        (best.1, best.2)
    };
    let (x, y) = search(0.0, 0.0, 40.0, 0.02);
    let (x, y) = search(x, y, 0.04, 1e-4);
    [x, y]
}

fn lasso_solver(seed: u64) -> ergodic_lab::Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for k in 0..20u64 {
        let sys = random_system(2, rng::sub_seed(seed, &format!("bf-{k}")));
        let lambda = 0.1 + 0.1 * (k % 10) as f64;
        let fit = lasso::lasso_solve(&sys, lambda, 1e-12, lasso::DEFAULT_MAX_SWEEPS)?;
        let bf = brute_force_2d(&sys, lambda);
        let err = (fit.theta_hat[0] - bf[0]).abs().max((fit.theta_hat[1] - bf[1]).abs());
        worst = worst.max(err);
        rows.push(vec![format!("bf-{k}"), fmt_num(fit.theta_hat[0]), fmt_num(fit.theta_hat[1]), fmt_num(err)]);
    }
    let mut killed = 0;
    for k in 0..50u64 {
        let n = 1 + (k % 10) as usize;
        let sys = random_system(n, rng::sub_seed(seed, &format!("kill-{k}")));
        let lambda = 2.0 * sys.h_bar.amax() * (1.0 + 0.02 * (k % 5) as f64);
        let fit = lasso::lasso_solve(&sys, lambda, lasso::DEFAULT_TOL, lasso::DEFAULT_MAX_SWEEPS)?;
        killed += fit.theta_hat.iter().all(|v| *v == 0.0) as usize;
    }
    rows.push(vec!["killed".into(), killed.to_string(), String::new(), String::new()]);
    Ok(Outcome {
        pass: worst <= 2e-3 && killed == 50,
        detail: format!("worst brute-force gap {worst:.2e} over 20 systems, {killed}/50 killed"),
        csv: render(&["case", "theta0", "theta1", "gap"], rows, "solver"),
        info: None,
    })
}

fn main() {
    let experiments: [(&str, Experiment); 9] = [
        ("1 formula exactness", formula_exactness),
        ("2 Poisson potential oracle", poisson_oracle),
        ("3 ergodic-average PAC", ergodic_average_pac),
        ("4 tail calibration stability", tail_calibration),
        ("5 discrete-continuous consistency", discrete_continuous),
        ("6 ULA AR(1) oracle", ula_ar1),
        ("7 ULA heavy-tailed PAC", ula_heavy_pac),
        ("8 lasso pipeline", lasso_pipeline),
        ("9 lasso solver oracle", lasso_solver),
    ];
    let mut failed = 0;
    let mut report = |name: &str, pass: bool, detail: &str, secs: f64| {
        println!("{} criterion {name}: {detail} [{secs:.1}s]", if pass { "PASS" } else { "FAIL" });
        failed += (!pass) as usize;
    };
    let mut first = Vec::new();
    for (name, exp) in experiments {
        let t = Instant::now();
        let out = exp(SEED);
        let secs = t.elapsed().as_secs_f64();
        match &out {
            Ok(o) => {
                if let Some(i) = &o.info {
                    println!("{i}");
                }
                report(name, o.pass, &o.detail, secs)
            }
            Err(e) => report(name, false, &format!("error: {e}"), secs),
        }
        first.push(out.ok().map(|o| o.csv));
    }

    let t = Instant::now();
    let mut mismatched = Vec::new();
    for ((name, exp), before) in experiments.iter().zip(&first) {
        let again = exp(SEED).ok().map(|o| o.csv);
        if before.is_none() || *before != again {
            mismatched.push(name.split(' ').next().unwrap_or(name).to_string());
        }
    }
    let detail = if mismatched.is_empty() {
        "all nine experiments re-ran to byte-identical CSV".to_string()
    } else {
        format!("CSV differs or missing for criteria {}", mismatched.join(", "))
    };
    report("10 determinism", mismatched.is_empty(), &detail, t.elapsed().as_secs_f64());

    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
