//! Scaled additive functionals, burn-in averages and the Poisson potential.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::exec::{self, CompensatedSum, SimOptions};
use crate::rng;
use crate::sde::{self, norm, ConditionReport, DiffusionModel, Trajectory};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A polynomially bounded observable: `|f(x)| <= L (1 + |x|^eta1)`.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    pub eta1: f64,
    pub l_frak: f64,
    pub eta2: Option<f64>,
    pub eta3: Option<f64>,
    /// Known mean under the invariant law, if any.
    pub centered_mean: Option<f64>,
    eval: ScalarFn,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("eta1", &self.eta1)
            .field("l_frak", &self.l_frak)
            .field("eta2", &self.eta2)
            .field("eta3", &self.eta3)
            .field("centered_mean", &self.centered_mean)
            .finish()
    }
}

impl TestFunction {
    pub fn new(name: impl Into<String>, eval: ScalarFn, eta1: f64, l_frak: f64) -> Result<Self> {
        ensure(eta1 >= 0.0, || format!("eta1 must be >= 0, got {eta1}"))?;
        ensure(l_frak > 0.0 && l_frak.is_finite(), || format!("L must be positive, got {l_frak}"))?;
        Ok(TestFunction { name: name.into(), eta1, l_frak, eta2: None, eta3: None, centered_mean: None, eval })
    }

    pub fn with_derivative_growth(mut self, eta2: f64, eta3: f64) -> Self {
        self.eta2 = Some(eta2);
        self.eta3 = Some(eta3);
        self
    }

    pub fn with_centered_mean(mut self, mean: f64) -> Self {
        self.centered_mean = Some(mean);
        self
    }

    pub fn constant(c: f64) -> Self {
        TestFunction::new(format!("const({c})"), Arc::new(move |_| c), 0.0, c.abs().max(1e-300))
            .expect("constant function is always valid")
            .with_derivative_growth(0.0, 0.0)
            .with_centered_mean(c)
    }

    /// `x -> x_j`.
    pub fn coordinate(j: usize) -> Self {
        TestFunction::new(format!("x{j}"), Arc::new(move |x| x[j]), 1.0, 1.0)
            .expect("valid")
            .with_derivative_growth(0.0, 0.0)
    }

    /// `x -> |x|^2`.
    pub fn squared_norm() -> Self {
        TestFunction::new("sqnorm", Arc::new(|x| x.iter().map(|v| v * v).sum()), 2.0, 1.0)
            .expect("valid")
            .with_derivative_growth(1.0, 0.0)
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn try_eval(&self, x: &[f64]) -> Result<f64> {
        let v = (self.eval)(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::eval(format!("value of test function '{}'", self.name), x))
        }
    }

    /// `c f`, with growth constant and mean scaled accordingly.
    pub fn scaled(&self, c: f64) -> Self {
        let inner = self.eval.clone();
        TestFunction {
            name: format!("{c}*{}", self.name),
            eval: Arc::new(move |x| c * inner(x)),
            l_frak: (c.abs() * self.l_frak).max(1e-300),
            centered_mean: self.centered_mean.map(|m| c * m),
            ..self.clone()
        }
    }

    /// `a f + b g`.
    pub fn combine(a: f64, f: &TestFunction, b: f64, g: &TestFunction) -> Self {
        let (fe, ge) = (f.eval.clone(), g.eval.clone());
        let opt_max = |x: Option<f64>, y: Option<f64>| Some(x?.max(y?));
        TestFunction {
            name: format!("{a}*{}+{b}*{}", f.name, g.name),
            eval: Arc::new(move |x| a * fe(x) + b * ge(x)),
            eta1: f.eta1.max(g.eta1),
            l_frak: (a.abs() * f.l_frak + b.abs() * g.l_frak).max(1e-300),
            eta2: opt_max(f.eta2, g.eta2),
            eta3: opt_max(f.eta3, g.eta3),
            centered_mean: f.centered_mean.zip(g.centered_mean).map(|(m, n)| a * m + b * n),
        }
    }

    /// `f - shift`, with the recorded mean moved to zero.
    pub fn shifted(&self, shift: f64) -> Self {
        let inner = self.eval.clone();
        TestFunction {
            name: format!("{}-{shift}", self.name),
            eval: Arc::new(move |x| inner(x) - shift),
            l_frak: self.l_frak + shift.abs(),
            centered_mean: self.centered_mean.map(|m| m - shift),
            ..self.clone()
        }
    }

    /// Probes `|f(x)| <= L (1 + |x|^eta1)` on Gaussian points of several
    /// scales. The margin is `|f(x)| - L (1 + |x|^eta1)`.
    pub fn check_growth(&self, dim: usize, n_probe: usize, seed: u64) -> Result<ConditionReport> {
        let mut rng = rng::stream(rng::sub_seed(seed, "growth-probe"), 0);
        let mut x = vec![0.0; dim];
        let mut holds = true;
        let mut worst = f64::NEG_INFINITY;
        let mut witness = Vec::new();
        for k in 0..n_probe.max(1) {
            let scale = [0.1, 1.0, 10.0, 100.0][k % 4];
            rng::fill_normal(&mut rng, &mut x);
            x.iter_mut().for_each(|v| *v *= scale);
            let v = self.try_eval(&x)?;
            let bound = self.l_frak * (1.0 + norm(&x).powf(self.eta1));
            let margin = v.abs() - bound;
            if margin > 1e-12 * bound {
                holds = false;
            }
            if margin > worst {
                worst = margin;
                witness = x.clone();
            }
        }
        Ok(ConditionReport { holds, worst_margin: worst, witness: if holds { None } else { Some(witness) } })
    }
}

/// `t^{-1/2} sum_k f(X_k) step` over the left-endpoint grid, `t = n_steps step`.
pub fn continuous_additive(traj: &Trajectory, f: &TestFunction) -> Result<f64> {
    ensure(traj.len() >= 2, || "trajectory needs at least two states".into())?;
    let n = traj.n_steps();
    let mut acc = CompensatedSum::default();
    for x in traj.states().take(n) {
        acc.add(f.try_eval(x)?);
    }
    let t = traj.horizon();
    Ok(acc.value() * traj.step / t.sqrt())
}

/// `(n Delta)^{-1/2} sum_{k=1..n} f(X_{k Delta}) Delta`, where `samples[k-1]`
/// holds `X_{k Delta}`.
pub fn discrete_additive<S: AsRef<[f64]>>(samples: &[S], delta: f64, f: &TestFunction) -> Result<f64> {
    ensure(!samples.is_empty(), || "empty sample".into())?;
    ensure(delta > 0.0, || format!("delta must be positive, got {delta}"))?;
    let n = samples.len() as f64;
    let s = sum_values(samples.iter().map(|s| s.as_ref()), f)?;
    Ok(s * delta / (n * delta).sqrt())
}

/// Time average of `f` over `[v, v + t]` on the trajectory's grid.
pub fn burnin_average_continuous(traj: &Trajectory, v: f64, t: f64, f: &TestFunction) -> Result<f64> {
    ensure(v >= 0.0 && t > 0.0, || format!("need v >= 0 and t > 0, got v={v}, t={t}"))?;
    let start = (v / traj.step).round() as usize;
    let end = ((v + t) / traj.step).round() as usize;
    ensure(end > start, || "averaging window shorter than one step".into())?;
    ensure(end <= traj.n_steps(), || {
        format!("trajectory covers [0, {}] but [0, {}] is needed", traj.horizon(), v + t)
    })?;
    let s = sum_values((start..end).map(|k| traj.state(k)), f)?;
    Ok(s / (end - start) as f64)
}

/// `(1/n) sum_{k=m+1..m+n} f(X_{k Delta})`.
pub fn burnin_average_discrete<S: AsRef<[f64]>>(
    samples: &[S],
    delta: f64,
    m: usize,
    n: usize,
    f: &TestFunction,
) -> Result<f64> {
    ensure(delta > 0.0, || format!("delta must be positive, got {delta}"))?;
    ensure(n >= 1, || "n must be >= 1".into())?;
    ensure(samples.len() >= m + n, || format!("need {} samples, have {}", m + n, samples.len()))?;
    let s = sum_values(samples[m..m + n].iter().map(|s| s.as_ref()), f)?;
    Ok(s / n as f64)
}

fn sum_values<'a>(states: impl Iterator<Item = &'a [f64]>, f: &TestFunction) -> Result<f64> {
    let mut acc = CompensatedSum::default();
    for x in states {
        acc.add(f.try_eval(x)?);
    }
    Ok(acc.value())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub replicates: usize,
    pub excluded: usize,
    /// More than 1% of the paths diverged and were dropped.
    pub warning: bool,
    pub horizon: f64,
    /// Mean subtracted from `f` before integrating.
    pub center: f64,
}

/// `max(12, 6 / iota')`.
pub fn default_poisson_horizon(model: &DiffusionModel) -> f64 {
    let ip = model.ergodicity.iota_prime();
    if ip > 0.0 && ip.is_finite() {
        (6.0 / ip).max(12.0)
    } else {
        12.0
    }
}

/// Long-run average of `f` along an auxiliary path of `1e5` steps started
/// from the model's default stationary initialisation.
pub fn plugin_mean(model: &DiffusionModel, f: &TestFunction, seed: u64, step: f64) -> Result<f64> {
    const STEPS: usize = 100_000;
    let mut rng = rng::stream(rng::sub_seed(seed, "centering"), 0);
    let x0 = sde::sample_stationary_with(model, sde::default_stationary_method(model), step, &mut rng)?;
    let mut acc = CompensatedSum::default();
    sde::drive(model, &x0, step, STEPS, 1, &mut rng, |k, x| {
        if k < STEPS {
            acc.add(f.try_eval(x)?);
        }
        Ok(())
    })?;
    Ok(acc.value() / STEPS as f64)
}

/// The recorded mean of `f`, or a plug-in estimate when none is recorded.
pub fn resolve_center(model: &DiffusionModel, f: &TestFunction, seed: u64, step: f64) -> Result<f64> {
    match f.centered_mean {
        Some(m) => Ok(m),
        None => plugin_mean(model, f, seed, step),
    }
}

pub fn estimate_poisson_potential(
    model: &DiffusionModel,
    f: &TestFunction,
    x: &[f64],
    horizon: f64,
    replicates: usize,
    seed: u64,
) -> Result<PoissonEstimate> {
    estimate_poisson_potential_with(model, f, x, horizon, replicates, seed, &SimOptions::default())
}

/// Averages `-int_0^horizon (f - mu(f))(X_t) dt` over replicate paths from
/// `x`. Truncation bias is of order `exp(-rate * horizon)` and is not
/// corrected.
pub fn estimate_poisson_potential_with(
    model: &DiffusionModel,
    f: &TestFunction,
    x: &[f64],
    horizon: f64,
    replicates: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<PoissonEstimate> {
    ensure(horizon > 0.0, || format!("horizon must be positive, got {horizon}"))?;
    ensure(replicates >= 1, || "replicates must be >= 1".into())?;
    let center = resolve_center(model, f, seed, opts.step)?;
    let n = (horizon / opts.step).round().max(1.0) as usize;
    let step = opts.step;
    let runs = exec::map_indices(replicates, opts.exec, |i| -> Result<Option<f64>> {
        let mut rng = rng::stream(seed, i);
        let mut acc = CompensatedSum::default();
        let res = sde::drive(model, x, step, n, 1, &mut rng, |k, y| {
            if k < n {
                acc.add(f.try_eval(y)? - center);
            }
            Ok(())
        });
        match res {
            Ok(_) => Ok(Some(-acc.value() * step)),
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
    let excluded = replicates - values.len();
    if values.is_empty() {
        return Err(Error::Experiment("every replicate path diverged".into()));
    }
    let (estimate, stderr) = exec::mean_and_stderr(&values);
    Ok(PoissonEstimate {
        estimate,
        stderr,
        replicates,
        excluded,
        warning: excluded as f64 > 0.01 * replicates as f64,
        horizon: n as f64 * step,
        center,
    })
}
