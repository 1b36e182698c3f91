//! Empirical tails, constant calibration and PAC coverage experiments.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::bounds::{DiscreteExponentChoice, PacRequest};
use crate::error::{ensure, Error, Result};
use crate::exec::{self, CompensatedSum, SimOptions};
use crate::functionals::{self, TestFunction};
use crate::output::CsvTable;
use crate::output::fmt_num;
use crate::rng;
use crate::sde::{self, DiffusionModel, StationaryMethod};

/// Exceedance fractions of `|G|` at a set of thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailTable {
    pub thresholds: Vec<f64>,
    pub exceed_fraction: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub replicates: usize,
    pub diverged: usize,
    /// Absolute functional values, sorted ascending.
    pub values: Vec<f64>,
}

impl TailTable {
    pub fn from_values(values: &[f64], thresholds: &[f64]) -> Result<Self> {
        ensure(!values.is_empty(), || "no functional values".into())?;
        ensure(thresholds.iter().all(|t| *t >= 0.0 && t.is_finite()), || "thresholds must be finite and >= 0".into())?;
        ensure(thresholds.windows(2).all(|w| w[0] <= w[1]), || "thresholds must be sorted".into())?;
        let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let mut table = TailTable {
            thresholds: thresholds.to_vec(),
            exceed_fraction: Vec::new(),
            standard_errors: Vec::new(),
            replicates: abs.len(),
            diverged: 0,
            values: abs,
        };
        for &t in thresholds {
            let p = table.fraction_above(t);
            table.exceed_fraction.push(p);
            table.standard_errors.push(binomial_se(p, table.replicates));
        }
        Ok(table)
    }

    /// Fraction of values strictly above `threshold`.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        let at_or_below = self.values.partition_point(|v| *v <= threshold);
        (self.values.len() - at_or_below) as f64 / self.values.len() as f64
    }

    pub fn to_csv(&self) -> CsvTable {
        let rows = (0..self.thresholds.len())
            .map(|i| vec![fmt_num(self.thresholds[i]), fmt_num(self.exceed_fraction[i]), fmt_num(self.standard_errors[i])])
            .collect();
        CsvTable::new(&["threshold", "exceed_fraction", "se"], rows)
    }
}

pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Signed values of `G_t(f - mu(f))` over replicate paths started from the
/// (approximate) invariant law. Diverged paths are dropped and counted.
#[allow(clippy::too_many_arguments)]
pub fn functional_values(
    model: &DiffusionModel,
    f: &TestFunction,
    t: f64,
    replicates: usize,
    init: StationaryMethod,
    seed: u64,
    opts: &SimOptions,
) -> Result<(Vec<f64>, usize)> {
    ensure(t > 0.0, || format!("t must be positive, got {t}"))?;
    let step = opts.step;
    let n = (t / step).round().max(1.0) as usize;
    let center = functionals::resolve_center(model, f, seed, step)?;
    let norm = step / (n as f64 * step).sqrt();
    let runs = exec::map_indices(replicates, opts.exec, |i| -> Result<Option<f64>> {
        let mut rng = rng::stream(seed, i);
        let x0 = match sde::sample_stationary_with(model, init, step, &mut rng) {
            Ok(x) => x,
            Err(Error::Divergence { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut acc = CompensatedSum::default();
        let res = sde::drive(model, &x0, step, n, 1, &mut rng, |k, x| {
            if k < n {
                acc.add(f.try_eval(x)? - center);
            }
            Ok(())
        });
        match res {
            Ok(_) => Ok(Some(acc.value() * norm)),
            Err(Error::Divergence { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut values = Vec::with_capacity(replicates);
    for r in runs {
        if let Some(v) = r? {
            values.push(v);
        }
    }
    let diverged = replicates - values.len();
    Ok((values, diverged))
}

#[allow(clippy::too_many_arguments)]
pub fn run_tail_experiment(
    model: &DiffusionModel,
    f: &TestFunction,
    t: f64,
    replicates: usize,
    init: StationaryMethod,
    seed: u64,
    thresholds: &[f64],
) -> Result<TailTable> {
    run_tail_experiment_with(model, f, t, replicates, init, seed, thresholds, &SimOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn run_tail_experiment_with(
    model: &DiffusionModel,
    f: &TestFunction,
    t: f64,
    replicates: usize,
    init: StationaryMethod,
    seed: u64,
    thresholds: &[f64],
    opts: &SimOptions,
) -> Result<TailTable> {
    ensure(replicates >= 100, || format!("need at least 100 replicates, got {replicates}"))?;
    let (values, diverged) = functional_values(model, f, t, replicates, init, seed, opts)?;
    if diverged as f64 > 0.01 * replicates as f64 {
        return Err(Error::Experiment(format!("{diverged} of {replicates} paths diverged")));
    }
    let mut table = TailTable::from_values(&values, thresholds)?;
    table.diverged = diverged;
    Ok(table)
}

/// `1e-3 * 1.05^k` up to `1e3`.
pub fn calibration_grid() -> Vec<f64> {
    let mut out = Vec::new();
    let mut w = 1e-3;
    while w <= 1e3 * (1.0 + 1e-12) {
        out.push(w);
        w *= 1.05;
    }
    out
}

/// One `(u, observed fraction, allowed fraction)` row per violated constraint.
pub type Violation = (f64, f64, f64);

/// Constraint check for a candidate scale: the fraction of `|G|` above
/// `scale * base(u)` must not exceed `tail_scale e^{-u} + 2 SE`, where SE is
/// the binomial standard error at the nominal level `tail_scale e^{-u}`.
pub fn scale_violations(
    table: &TailTable,
    scale: f64,
    base: &dyn Fn(f64) -> f64,
    u_grid: &[f64],
    tail_scale: f64,
) -> Vec<Violation> {
    u_grid
        .iter()
        .filter_map(|&u| {
            let nominal = (tail_scale * (-u).exp()).min(1.0);
            let allowed = nominal + 2.0 * binomial_se(nominal, table.replicates);
            let frac = table.fraction_above(scale * base(u));
            (frac > allowed).then_some((u, frac, allowed))
        })
        .collect()
}

/// Smallest grid scale with no violations.
pub fn calibrate_scale(table: &TailTable, base: &dyn Fn(f64) -> f64, u_grid: &[f64], tail_scale: f64) -> Result<f64> {
    ensure(!u_grid.is_empty(), || "u grid is empty".into())?;
    ensure(u_grid.iter().all(|u| *u >= 2.0), || "u grid must lie in [2, inf)".into())?;
    ensure(tail_scale >= 0.0, || "tail scale must be >= 0".into())?;
    let grid = calibration_grid();
    for &s in &grid {
        if scale_violations(table, s, base, u_grid, tail_scale).is_empty() {
            return Ok(s);
        }
    }
    let top = *grid.last().expect("grid nonempty");
    let diag: Vec<String> = scale_violations(table, top, base, u_grid, tail_scale)
        .iter()
        .map(|(u, f, a)| format!("u={u}: fraction {f:.4} > allowed {a:.4}"))
        .collect();
    Err(Error::Calibration(format!("no scale up to {top} satisfies the tail bound; at the top: {}", diag.join("; "))))
}

pub fn calibrate_w(table: &TailTable, l_frak: f64, sigma_tilde: f64, u_grid: &[f64]) -> Result<f64> {
    calibrate_w_scaled(table, l_frak, sigma_tilde, u_grid, 1.0)
}

/// [`calibrate_w`] with the nominal tail `e^{-u}` multiplied by `tail_scale`.
pub fn calibrate_w_scaled(table: &TailTable, l_frak: f64, sigma_tilde: f64, u_grid: &[f64], tail_scale: f64) -> Result<f64> {
    ensure(l_frak > 0.0, || "L must be positive".into())?;
    calibrate_scale(table, &|u| E * l_frak * u.powf(sigma_tilde), u_grid, tail_scale)
}

pub fn w_violations(table: &TailTable, w: f64, l_frak: f64, sigma_tilde: f64, u_grid: &[f64]) -> Vec<Violation> {
    scale_violations(table, w, &|u| E * l_frak * u.powf(sigma_tilde), u_grid, 1.0)
}

/// Calibrates the discrete moment constant from a table of `|G_{n,Delta}|`
/// values: thresholds are `e D Phi_1(n, Delta, u)` with `Phi_1` the moment
/// bound at unit constant.
pub fn calibrate_d(table: &TailTable, n: f64, delta_step: f64, choice: &DiscreteExponentChoice, u_grid: &[f64]) -> Result<f64> {
    let base = move |u: f64| {
        E * (n.sqrt() * delta_step.powf(1.5) + delta_step * u.powf(choice.rho) + u.powf(choice.sigma_tilde))
    };
    calibrate_scale(table, &base, u_grid, 1.0)
}

/// `(mean |v|^p)^{1/p}` for each `p`.
pub fn empirical_moments(values: &[f64], p_list: &[u32]) -> Result<Vec<(u32, f64)>> {
    ensure(!values.is_empty(), || "no values".into())?;
    ensure(p_list.iter().all(|p| *p >= 1), || "p must be >= 1".into())?;
    Ok(p_list
        .iter()
        .map(|&p| {
            let m = exec::sum(values.iter().map(|v| v.abs().powi(p as i32))) / values.len() as f64;
            (p, m.powf(1.0 / p as f64))
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub runs: usize,
    pub within_eps: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub target_value: f64,
    pub verdict: Verdict,
    /// Binomial SE at the nominal coverage `1 - delta`.
    pub coverage_se: f64,
    pub estimates: Vec<f64>,
}

impl CoverageReport {
    pub fn from_estimates(estimates: Vec<f64>, target: f64, req: &PacRequest) -> Self {
        let runs = estimates.len();
        let within_eps = estimates.iter().filter(|e| (*e - target).abs() <= req.epsilon).count();
        let coverage_se = binomial_se(req.delta, runs);
        let pass = within_eps as f64 / runs as f64 >= 1.0 - req.delta - 2.0 * coverage_se;
        CoverageReport {
            runs,
            within_eps,
            epsilon: req.epsilon,
            delta: req.delta,
            target_value: target,
            verdict: if pass { Verdict::Pass } else { Verdict::Fail },
            coverage_se,
            estimates,
        }
    }

    pub fn coverage(&self) -> f64 {
        self.within_eps as f64 / self.runs as f64
    }

    pub fn to_csv(&self) -> CsvTable {
        let rows = self
            .estimates
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let within = (e - self.target_value).abs() <= self.epsilon;
                vec![i.to_string(), fmt_num(*e), (within as u8).to_string()]
            })
            .collect();
        CsvTable::new(&["run_id", "estimate", "within"], rows)
    }
}

/// Runs `experiment(run_id, seed)` for each run and counts estimates within
/// `epsilon` of `target`.
pub fn pac_coverage<F>(experiment: F, target: f64, req: &PacRequest, runs: usize, seed: u64, opts: &SimOptions) -> Result<CoverageReport>
where
    F: Fn(u64, u64) -> Result<f64> + Sync + Send,
{
    ensure(runs >= 20, || format!("need at least 20 runs, got {runs}"))?;
    let estimates = exec::map_indices(runs, opts.exec, |i| experiment(i, seed)).into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CoverageReport::from_estimates(estimates, target, req))
}

/// Time average of `f` over `[v, v + t]` along a path started at `x0`,
/// driven by stream `(seed, run_id)`.
#[allow(clippy::too_many_arguments)]
pub fn burnin_average_run(
    model: &DiffusionModel,
    f: &TestFunction,
    x0: &[f64],
    v: f64,
    t: f64,
    seed: u64,
    run_id: u64,
    step: f64,
) -> Result<f64> {
    ensure(v >= 0.0 && t > 0.0, || "need v >= 0 and t > 0".into())?;
    let start = (v / step).round() as usize;
    let end = ((v + t) / step).round() as usize;
    ensure(end > start, || "averaging window shorter than one step".into())?;
    let mut rng = rng::stream(seed, run_id);
    let mut acc = CompensatedSum::default();
    sde::drive(model, x0, step, end, 1, &mut rng, |k, x| {
        if k >= start && k < end {
            acc.add(f.try_eval(x)?);
        }
        Ok(())
    })?;
    Ok(acc.value() / (end - start) as f64)
}

/// PAC coverage of the continuous burn-in average started at `x0`.
#[allow(clippy::too_many_arguments)]
pub fn burnin_coverage(
    model: &DiffusionModel,
    f: &TestFunction,
    x0: &[f64],
    v: f64,
    t: f64,
    target: f64,
    req: &PacRequest,
    runs: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<CoverageReport> {
    let step = opts.step;
    pac_coverage(|i, s| burnin_average_run(model, f, x0, v, t, s, i, step), target, req, runs, seed, opts)
}
