//! Potentials, the unadjusted Langevin chain and its PAC experiments.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::{self, CalibrationConstants, PacRequest, UlaTuning};
use crate::error::{ensure, Error, Result};
use crate::exec::{self, CompensatedSum, SimOptions};
use crate::functionals::{ScalarFn, TestFunction};
use crate::lab::{self, CoverageReport, TailTable};
use crate::output::{fmt_num, CsvTable};
use crate::rng::{self, Stream};
use crate::sde::{self, norm, ConditionReport, Diffusion, DiffusionModel, ErgodicityParams, VectorField, DIVERGENCE_RADIUS};

/// A smooth potential `U` with the constants the tuning rule needs.
#[derive(Clone)]
pub struct Potential {
    pub name: String,
    pub dim: usize,
    /// Radial exponent: `<grad U(x), x/|x|> >= r |x|^{-q}` for `|x| >= M0`.
    pub q: f64,
    pub l_lip: f64,
    pub grad_sup: f64,
    pub m0: f64,
    pub r_frak: f64,
    u: ScalarFn,
    grad: VectorField,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("q", &self.q)
            .field("l_lip", &self.l_lip)
            .field("grad_sup", &self.grad_sup)
            .field("m0", &self.m0)
            .field("r_frak", &self.r_frak)
            .finish()
    }
}

/// `U(x) = strength (scale^2 + |x|^2)^{(1-q)/2}`.
pub fn make_heavy_potential(d: usize, q: f64, scale: f64, strength: f64) -> Result<Potential> {
    ensure(d >= 1, || "d must be >= 1".into())?;
    ensure(q > 0.0 && q < 1.0, || format!("q must lie in (0, 1), got {q}"))?;
    ensure(scale > 0.0 && scale.is_finite(), || format!("scale must be positive, got {scale}"))?;
    ensure(strength > 0.0 && strength.is_finite(), || format!("strength must be positive, got {strength}"))?;
    let a2 = scale * scale;
    let u: ScalarFn = Arc::new(move |x| strength * (a2 + x.iter().map(|v| v * v).sum::<f64>()).powf((1.0 - q) / 2.0));
    let grad: VectorField = Arc::new(move |x, out| {
        let c = strength * (1.0 - q) * (a2 + x.iter().map(|v| v * v).sum::<f64>()).powf(-(1.0 + q) / 2.0);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = c * xi;
        }
    });
    // |grad U| peaks at |x| = scale / sqrt(q); the Hessian norm peaks at 0.
    let grad_sup = strength * (1.0 - q) * scale.powf(-q) * q.powf(q / 2.0) * (1.0 + q).powf(-(1.0 + q) / 2.0);
    let l_lip = strength * (1.0 - q) * scale.powf(-(1.0 + q));
    let r_frak = strength * (1.0 - q) / 2f64.powf((1.0 + q) / 2.0);
    Ok(Potential { name: format!("heavy(q={q})"), dim: d, q, l_lip, grad_sup, m0: scale, r_frak, u, grad })
}

/// `U(x) = |x|^2 / 2`, the standard Gaussian target.
pub fn gaussian_potential(d: usize) -> Result<Potential> {
    ensure(d >= 1, || "d must be >= 1".into())?;
    Ok(Potential {
        name: "gaussian".into(),
        dim: d,
        q: -1.0,
        l_lip: 1.0,
        grad_sup: f64::INFINITY,
        m0: 0.0,
        r_frak: 1.0,
        u: Arc::new(|x| 0.5 * x.iter().map(|v| v * v).sum::<f64>()),
        grad: Arc::new(|x, out| out.copy_from_slice(x)),
    })
}

/// `U = 0`. Not a probability potential; used to test the chain recursion.
pub fn flat_potential(d: usize) -> Result<Potential> {
    ensure(d >= 1, || "d must be >= 1".into())?;
    Ok(Potential {
        name: "flat".into(),
        dim: d,
        q: 0.0,
        l_lip: 0.0,
        grad_sup: 0.0,
        m0: 0.0,
        r_frak: 0.0,
        u: Arc::new(|_| 0.0),
        grad: Arc::new(|_, out| out.iter_mut().for_each(|o| *o = 0.0)),
    })
}

pub fn potential_by_name(name: &str, d: usize, q: f64, scale: f64, strength: f64) -> Result<Potential> {
    match name {
        "heavy" => make_heavy_potential(d, q, scale, strength),
        "gaussian" => gaussian_potential(d),
        "flat" => flat_potential(d),
        other => Err(Error::Argument(format!("unknown potential '{other}' (expected heavy, gaussian or flat)"))),
    }
}

impl Potential {
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        (self.u)(x)
    }

    #[inline]
    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        (self.grad)(x, out)
    }

    /// Probes `<grad U(x), x/|x|> >= r |x|^{-q}` at radii `>= M0`.
    pub fn check_condition(&self, probe_radii: &[f64], directions: usize) -> Result<ConditionReport> {
        ensure(probe_radii.iter().all(|r| *r >= self.m0), || format!("probe radii must be >= M0 = {}", self.m0))?;
        let g = self.grad.clone();
        let inward = move |x: &[f64], out: &mut [f64]| {
            g(x, out);
            out.iter_mut().for_each(|v| *v = -*v);
        };
        sde::probe_radial_margin(&inward, self.dim, self.q, self.r_frak, probe_radii, directions)
    }

    /// Central-difference check of the gradient. The margin at each probe is
    /// `|grad U - FD| - 1e-5 (1 + |grad U|)`.
    pub fn check_gradient(&self, probe_radii: &[f64], directions: usize) -> Result<ConditionReport> {
        let d = self.dim;
        let mut probes = vec![vec![0.0; d]];
        for u in sde::sphere_directions(d, directions, 0x6e4d) {
            for &r in probe_radii {
                probes.push(u.iter().map(|v| v * r).collect());
            }
        }
        let mut g = vec![0.0; d];
        let mut holds = true;
        let mut worst = f64::NEG_INFINITY;
        let mut witness = Vec::new();
        for x in probes {
            self.grad(&x, &mut g);
            let mut err2 = 0.0;
            let mut xp = x.clone();
            for i in 0..d {
                let h = 1e-6 * (1.0 + x[i].abs());
                xp[i] = x[i] + h;
                let up = self.value(&xp);
                xp[i] = x[i] - h;
                let um = self.value(&xp);
                xp[i] = x[i];
                let fd = (up - um) / (2.0 * h);
                if !fd.is_finite() || !g[i].is_finite() {
                    return Err(Error::eval("potential", &x));
                }
                err2 += (g[i] - fd).powi(2);
            }
            let margin = err2.sqrt() - 1e-5 * (1.0 + norm(&g));
            if margin > 0.0 {
                holds = false;
            }
            if margin > worst {
                worst = margin;
                witness = x;
            }
        }
        Ok(ConditionReport { holds, worst_margin: worst, witness: if holds { None } else { Some(witness) } })
    }

    /// The Langevin diffusion `dX = -grad U dt + sqrt(2) dW`.
    pub fn langevin_model(&self) -> Result<DiffusionModel> {
        ensure(self.r_frak > 0.0, || format!("potential '{}' has no confining drift", self.name))?;
        let g = self.grad.clone();
        let drift: VectorField = Arc::new(move |x, out| {
            g(x, out);
            out.iter_mut().for_each(|v| *v = -*v);
        });
        let erg = ErgodicityParams::new(self.q, 0.0, self.m0, self.r_frak, 2.0, 2.0, 2.0 * self.dim as f64)?;
        DiffusionModel::new(format!("langevin-{}", self.name), self.dim, drift, Diffusion::scaled_identity(self.dim, 2f64.sqrt()), erg)
    }

    /// Smallest `w` along the first axis with `U(w e1) - U(0) >= gap`.
    fn radius_for_gap(&self, gap: f64) -> Result<f64> {
        let mut x = vec![0.0; self.dim];
        let u0 = self.value(&x);
        let mut at = |w: f64| {
            x[0] = w;
            self.value(&x) - u0
        };
        let mut hi = 1e-6;
        while at(hi) < gap {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(Error::Argument(format!("potential '{}' does not grow by {gap}", self.name)));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if at(mid) >= gap {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// `max(50 scale^{1/(1-q)}, w)` with `w` the radius where the potential has
    /// risen by 50.
    pub fn default_half_width(&self) -> Result<f64> {
        let base = if self.q > -1.0 && self.m0 > 0.0 { 50.0 * self.m0.powf(1.0 / (1.0 - self.q)) } else { 50.0 };
        Ok(base.max(self.radius_for_gap(50.0)?))
    }
}

/// A stored ULA chain: `n_steps + 1` states including the start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UlaChain {
    pub dim: usize,
    pub delta_step: f64,
    pub seed: u64,
    pub replicate_id: u64,
    states: Vec<f64>,
}

impl UlaChain {
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut cols = vec!["step".to_string()];
        cols.extend((0..self.dim).map(|i| format!("x{i}")));
        let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
        let rows = self
            .states()
            .enumerate()
            .map(|(k, x)| std::iter::once(k.to_string()).chain(x.iter().map(|v| fmt_num(*v))).collect())
            .collect();
        CsvTable::new(&cols, rows)
    }
}

/// Runs `x <- x - Delta grad U(x) + sqrt(2 Delta) xi` and visits states
/// 0 through `n_steps`.
pub fn ula_drive<F>(pot: &Potential, x0: &[f64], delta_step: f64, n_steps: u64, rng: &mut Stream, mut visit: F) -> Result<Vec<f64>>
where
    F: FnMut(u64, &[f64]) -> Result<()>,
{
    let d = pot.dim;
    ensure(x0.len() == d, || format!("x0 has dimension {} but potential has {d}", x0.len()))?;
    ensure(delta_step > 0.0 && delta_step.is_finite(), || format!("step must be positive, got {delta_step}"))?;
    let mut x = x0.to_vec();
    let mut g = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let noise = (2.0 * delta_step).sqrt();
    let limit = DIVERGENCE_RADIUS * DIVERGENCE_RADIUS;
    visit(0, &x)?;
    for k in 1..=n_steps {
        pot.grad(&x, &mut g);
        rng::fill_normal(rng, &mut xi);
        let mut n2 = 0.0;
        for i in 0..d {
            x[i] += -delta_step * g[i] + noise * xi[i];
            n2 += x[i] * x[i];
        }
        if !(n2 <= limit) {
            return Err(Error::Divergence { step: k as usize });
        }
        visit(k, &x)?;
    }
    Ok(x)
}

pub fn ula_chain(pot: &Potential, delta_step: f64, n_steps: usize, x0: &[f64], seed: u64) -> Result<UlaChain> {
    ula_chain_replicate(pot, delta_step, n_steps, x0, seed, 0)
}

pub fn ula_chain_replicate(pot: &Potential, delta_step: f64, n_steps: usize, x0: &[f64], seed: u64, replicate_id: u64) -> Result<UlaChain> {
    let mut rng = rng::stream(seed, replicate_id);
    let mut states = Vec::with_capacity((n_steps + 1) * pot.dim);
    ula_drive(pot, x0, delta_step, n_steps as u64, &mut rng, |_, x| {
        states.extend_from_slice(x);
        Ok(())
    })?;
    Ok(UlaChain { dim: pot.dim, delta_step, seed, replicate_id, states })
}

/// `(1/n) sum_{k=m+1}^{m+n} f(state_k)`.
pub fn ula_estimator(chain: &UlaChain, m: usize, n: usize, f: &TestFunction) -> Result<f64> {
    ensure(n >= 1, || "n must be >= 1".into())?;
    ensure(chain.len() > m + n, || format!("chain has {} states, need m + n + 1 = {}", chain.len(), m + n + 1))?;
    let mut acc = CompensatedSum::default();
    for k in m + 1..=m + n {
        acc.add(f.try_eval(chain.state(k))?);
    }
    Ok(acc.value() / n as f64)
}

/// Same estimate without storing the chain.
#[allow(clippy::too_many_arguments)]
pub fn ula_estimate_streaming(pot: &Potential, f: &TestFunction, x0: &[f64], delta_step: f64, m: u64, n: u64, seed: u64, replicate_id: u64) -> Result<f64> {
    ensure(n >= 1, || "n must be >= 1".into())?;
    let mut rng = rng::stream(seed, replicate_id);
    let mut acc = CompensatedSum::default();
    ula_drive(pot, x0, delta_step, m + n, &mut rng, |k, x| {
        if k > m {
            acc.add(f.try_eval(x)?);
        }
        Ok(())
    })?;
    Ok(acc.value() / n as f64)
}

fn simpson_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i == 0 || i == n - 1 { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 })
        .collect()
}

/// `int f e^{-U} / int e^{-U}` by composite Simpson in `x = c sinh(u)` per
/// axis, where `c` is the radius at which `U` has risen by 1.
pub fn quadrature_target_integral(pot: &Potential, f: &TestFunction, half_width: f64, n_nodes: usize) -> Result<f64> {
    let d = pot.dim;
    ensure(d == 1 || d == 2, || format!("quadrature supports d = 1 or 2, got {d}"))?;
    ensure(half_width > 0.0 && half_width.is_finite(), || "half_width must be positive".into())?;
    ensure(n_nodes >= 3, || "need at least 3 nodes".into())?;
    let n_nodes = if n_nodes.is_multiple_of(2) { n_nodes + 1 } else { n_nodes };
    let c = pot.radius_for_gap(1.0)?.min(half_width);
    let umax = (half_width / c).asinh();
    let h = 2.0 * umax / (n_nodes - 1) as f64;
    let w = simpson_weights(n_nodes);
    let nodes: Vec<(f64, f64)> = (0..n_nodes)
        .map(|i| {
            let u = -umax + i as f64 * h;
            (c * u.sinh(), w[i] * c * u.cosh())
        })
        .collect();
    let u0 = pot.value(&vec![0.0; d]);
    let mut num = CompensatedSum::default();
    let mut den = CompensatedSum::default();
    let mut edge: f64 = 0.0;
    let mut x = vec![0.0; d];
    let mut visit = |x: &[f64], jac: f64, on_edge: bool| -> Result<()> {
        let dens = (-(pot.value(x) - u0)).exp();
        let fx = f.try_eval(x)?;
        let term = fx * dens * jac;
        if !term.is_finite() || !dens.is_finite() {
            return Err(Error::eval("quadrature integrand", x));
        }
        num.add(term);
        den.add(dens * jac);
        if on_edge {
            edge = edge.max((1.0 + fx.abs()) * dens);
        }
        Ok(())
    };
    if d == 1 {
        for (i, (xi, wi)) in nodes.iter().enumerate() {
            x[0] = *xi;
            visit(&x, *wi, i == 0 || i == n_nodes - 1)?;
        }
    } else {
        for (i, (xi, wi)) in nodes.iter().enumerate() {
            for (j, (xj, wj)) in nodes.iter().enumerate() {
                x[0] = *xi;
                x[1] = *xj;
                let on_edge = i == 0 || j == 0 || i == n_nodes - 1 || j == n_nodes - 1;
                visit(&x, wi * wj, on_edge)?;
            }
        }
    }
    let (num, den) = (num.value(), den.value());
    // Crude mass left outside the box, relative to the integrals.
    let outside = edge * (2.0 * half_width).powi(d as i32);
    if outside > 1e-10 * (den + num.abs()) {
        return Err(Error::Argument(format!(
            "half_width {half_width} leaves too much mass outside the box (edge integrand {edge:e})"
        )));
    }
    Ok(num / den)
}

/// Calibrates the discrete moment constant from chains of length `n` at step
/// `delta_step` started at 0 after `m` burn-in steps. Values are
/// `G_{n,Delta}(f - target)`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_d_hat(
    pot: &Potential,
    f: &TestFunction,
    target: f64,
    delta_step: f64,
    m: u64,
    n: u64,
    replicates: usize,
    seed: u64,
    u_grid: &[f64],
    opts: &SimOptions,
) -> Result<f64> {
    ensure(replicates >= 100, || format!("need at least 100 replicates, got {replicates}"))?;
    let eta2 = f.eta2.ok_or_else(|| Error::Argument(format!("test function '{}' has no derivative growth", f.name)))?;
    let eta3 = f.eta3.unwrap_or(0.0);
    let choice = bounds::choose_discrete_exponents(pot.q, 0.0, f.eta1, eta2, eta3)?;
    let x0 = vec![0.0; pot.dim];
    let scale = delta_step / (n as f64 * delta_step).sqrt();
    let values = exec::map_indices(replicates, opts.exec, |i| {
        let avg = ula_estimate_streaming(pot, f, &x0, delta_step, m, n, seed, i)?;
        Ok((avg - target) * n as f64 * scale)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let table = TailTable::from_values(&values, &[])?;
    lab::calibrate_d(&table, n as f64, delta_step, &choice, u_grid)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UlaPlan {
    /// `(Delta, n, m)` from the tuning rule.
    Tuned,
    /// Exploratory: run with the given values regardless of the rule.
    Override { delta_step: f64, n: u64, m: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UlaPacConfig {
    pub req: PacRequest,
    pub consts: CalibrationConstants,
    pub runs: usize,
    pub seed: u64,
    pub plan: UlaPlan,
    /// Refuse plans whose chains exceed this many steps.
    pub max_steps: f64,
    pub half_width: Option<f64>,
    pub nodes: usize,
}

impl UlaPacConfig {
    pub fn new(req: PacRequest, consts: CalibrationConstants, runs: usize, seed: u64) -> Self {
        UlaPacConfig { req, consts, runs, seed, plan: UlaPlan::Tuned, max_steps: 1e9, half_width: None, nodes: 4001 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UlaPacReport {
    pub target: f64,
    pub delta_step: f64,
    pub n: u64,
    pub m: u64,
    pub tuning: Option<UlaTuning>,
    /// Tuning conditions the executed `(Delta, n, m)` fails, re-checked after
    /// the run. Empty for tuned plans.
    pub violations: Vec<String>,
    pub exploratory: bool,
    pub coverage: CoverageReport,
}

pub fn ula_pac_experiment(
    pot: &Potential,
    f: &TestFunction,
    req: &PacRequest,
    consts: &CalibrationConstants,
    runs: usize,
    seed: u64,
) -> Result<CoverageReport> {
    let cfg = UlaPacConfig::new(*req, *consts, runs, seed);
    Ok(ula_pac_experiment_with(pot, f, &cfg, &SimOptions::default())?.coverage)
}

pub fn ula_pac_experiment_with(pot: &Potential, f: &TestFunction, cfg: &UlaPacConfig, opts: &SimOptions) -> Result<UlaPacReport> {
    let half_width = match cfg.half_width {
        Some(w) => w,
        None => pot.default_half_width()?,
    };
    let target = quadrature_target_integral(pot, f, half_width, cfg.nodes)?;
    let problem = |eta2: f64, eta3: f64| bounds::UlaProblem {
        req: cfg.req,
        q: pot.q,
        eta1: f.eta1,
        eta2,
        eta3,
        d: pot.dim,
        l_lip: pot.l_lip,
        grad_sup: pot.grad_sup,
        consts: cfg.consts,
    };
    let growth = || -> Result<(f64, f64)> {
        let eta2 = f.eta2.ok_or_else(|| Error::Argument(format!("test function '{}' has no derivative growth", f.name)))?;
        Ok((eta2, f.eta3.unwrap_or(0.0)))
    };
    let (delta_step, n, m, tuning, exploratory) = match cfg.plan {
        UlaPlan::Tuned => {
            let (e2, e3) = growth()?;
            let t = problem(e2, e3).tune()?;
            if t.n + t.m > cfg.max_steps {
                return Err(Error::Regime(format!(
                    "tuned chain needs n + m = {:e} steps at step {:e}, above the budget of {:e}",
                    t.n + t.m,
                    t.delta_step,
                    cfg.max_steps
                )));
            }
            (t.delta_step, t.n as u64, t.m as u64, Some(t), false)
        }
        UlaPlan::Override { delta_step, n, m } => {
            ensure(delta_step > 0.0 && n >= 1, || "override needs a positive step and n >= 1".into())?;
            ensure(((n + m) as f64) <= cfg.max_steps, || format!("override needs {} steps, above the budget", n + m))?;
            (delta_step, n, m, None, true)
        }
    };
    let x0 = vec![0.0; pot.dim];
    let coverage = lab::pac_coverage(
        |i, s| ula_estimate_streaming(pot, f, &x0, delta_step, m, n, s, i),
        target,
        &cfg.req,
        cfg.runs,
        cfg.seed,
        opts,
    )?;
    let violations = match (growth(), pot.q > 0.0 && pot.q < 1.0) {
        (Ok((e2, e3)), true) => problem(e2, e3).violations(delta_step, n as f64, m as f64)?,
        _ => vec!["tuning rule does not apply to this potential".into()],
    };
    Ok(UlaPacReport { target, delta_step, n, m, tuning, violations, exploratory, coverage })
}
