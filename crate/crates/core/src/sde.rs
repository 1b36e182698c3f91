//! Diffusion models, drift-condition probing and Euler-Maruyama simulation.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::{self, Stream};

/// Writes `b(x)` into the output slice.
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Writes a row-major `d x d` matrix into the output slice.
pub type MatrixField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Fills the output slice with one exact draw from the invariant law.
pub type StationarySampler = Arc<dyn Fn(&mut Stream, &mut [f64]) + Send + Sync>;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DIVERGENCE_RADIUS: f64 = 1e12;
pub const DEFAULT_DIRECTIONS: usize = 32;
const PROBE_SEED: u64 = 0x0005_eed0_d1ec;

/// Radial drift exponents and the Lyapunov scale attached to a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityParams {
    pub q: f64,
    pub q_prime: f64,
    pub m0: f64,
    pub r_frak: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub lambda_cap: f64,
    pub iota: f64,
}

impl ErgodicityParams {
    /// Builds the parameter set with `iota` at half of its admissible supremum
    /// `2 r / (lambda_plus (1 - q+))`.
    pub fn new(
        q: f64,
        q_prime: f64,
        m0: f64,
        r_frak: f64,
        lambda_minus: f64,
        lambda_plus: f64,
        lambda_cap: f64,
    ) -> Result<Self> {
        let qp = q.max(0.0);
        let iota = r_frak / (lambda_plus * (1.0 - qp));
        let p = ErgodicityParams { q, q_prime, m0, r_frak, lambda_minus, lambda_plus, lambda_cap, iota };
        p.validate()?;
        Ok(p)
    }

    pub fn with_iota(mut self, iota: f64) -> Result<Self> {
        self.iota = iota;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        ensure((-1.0..1.0).contains(&self.q), || format!("q must lie in [-1, 1), got {}", self.q))?;
        ensure(self.q_prime >= 0.0, || format!("q_prime must be >= 0, got {}", self.q_prime))?;
        ensure(self.m0 >= 0.0, || format!("M0 must be >= 0, got {}", self.m0))?;
        for (name, v) in [
            ("r_frak", self.r_frak),
            ("lambda_minus", self.lambda_minus),
            ("lambda_plus", self.lambda_plus),
            ("lambda_cap", self.lambda_cap),
            ("iota", self.iota),
        ] {
            ensure(v > 0.0 && v.is_finite(), || format!("{name} must be positive and finite, got {v}"))?;
        }
        let bound = self.iota * self.lambda_plus * (1.0 - self.q_plus()) / 2.0;
        ensure(self.r_frak > bound, || {
            format!("iota {} too large: need r_frak > iota*lambda_plus*(1-q+)/2 = {bound}", self.iota)
        })
    }

    pub fn q_plus(&self) -> f64 {
        self.q.max(0.0)
    }

    /// `exp(iota * |x|^(1 - q+))`.
    pub fn lyapunov(&self, x: &[f64]) -> f64 {
        (self.iota * norm(x).powf(1.0 - self.q_plus())).exp()
    }

    /// Subexponential rate constant `iota'`.
    pub fn iota_prime(&self) -> f64 {
        let qp = self.q_plus();
        self.iota.powf((1.0 + qp) / (1.0 - qp))
            * (1.0 + qp)
            * (self.r_frak - self.lambda_plus * self.iota * (1.0 - qp) / 2.0)
    }

    /// Rate `iota (r - lambda_plus iota / 2)` of the exponentially ergodic
    /// parameterisation. Agrees with [`Self::iota_prime`] when `q+ = 0`.
    pub fn iota_prime_exponential(&self) -> f64 {
        self.iota * (self.r_frak - self.lambda_plus * self.iota / 2.0)
    }

    pub fn default_iota_dd(&self) -> f64 {
        0.5 * self.iota_prime()
    }
}

#[derive(Clone)]
pub enum Diffusion {
    /// Row-major constant matrix.
    Constant(Vec<f64>),
    StateDependent(MatrixField),
}

impl Diffusion {
    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        let mut m = vec![0.0; dim * dim];
        for i in 0..dim {
            m[i * dim + i] = s;
        }
        Diffusion::Constant(m)
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Diffusion::Constant(m) => out.copy_from_slice(m),
            Diffusion::StateDependent(f) => f(x, out),
        }
    }
}

impl fmt::Debug for Diffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diffusion::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            Diffusion::StateDependent(_) => f.write_str("StateDependent(..)"),
        }
    }
}

#[derive(Clone)]
pub struct DiffusionModel {
    pub name: String,
    pub dim: usize,
    pub ergodicity: ErgodicityParams,
    drift: VectorField,
    diffusion: Diffusion,
    stationary: Option<StationarySampler>,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("ergodicity", &self.ergodicity)
            .field("diffusion", &self.diffusion)
            .field("exact_sampler", &self.stationary.is_some())
            .finish()
    }
}

impl DiffusionModel {
    /// Builds a model and checks that drift and diffusion are finite on a
    /// fixed probe set. Ellipticity is checked separately by
    /// [`Self::check_ellipticity`] because degenerate models are useful in
    /// tests.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        drift: VectorField,
        diffusion: Diffusion,
        ergodicity: ErgodicityParams,
    ) -> Result<Self> {
        ensure(dim >= 1, || "dimension must be >= 1".into())?;
        if let Diffusion::Constant(m) = &diffusion {
            ensure(m.len() == dim * dim, || format!("constant diffusion needs {} entries", dim * dim))?;
        }
        ergodicity.validate()?;
        let model = DiffusionModel { name: name.into(), dim, ergodicity, drift, diffusion, stationary: None };
        model.check_finite_on_probes()?;
        Ok(model)
    }

    pub fn with_stationary_sampler(mut self, sampler: StationarySampler) -> Self {
        self.stationary = Some(sampler);
        self
    }

    /// `dX = -theta X dt + sigma dW` with its Gaussian invariant law.
    pub fn ornstein_uhlenbeck(dim: usize, theta: f64, sigma: f64) -> Result<Self> {
        ensure(theta > 0.0 && sigma > 0.0, || "theta and sigma must be positive".into())?;
        let s2 = sigma * sigma;
        let erg = ErgodicityParams::new(-1.0, 1.0, 0.0, theta, s2, s2, s2 * dim as f64)?;
        let drift: VectorField = Arc::new(move |x, out| {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = -theta * xi;
            }
        });
        let sd = sigma / (2.0 * theta).sqrt();
        let model = DiffusionModel::new("ou", dim, drift, Diffusion::scaled_identity(dim, sigma), erg)?;
        Ok(model.with_stationary_sampler(Arc::new(move |rng, out| {
            for o in out {
                *o = sd * rng::normal(rng);
            }
        })))
    }

    /// `dX = A X dt + sigma dW` with row-major `A` and constant `sigma`.
    pub fn linear(
        name: impl Into<String>,
        a: Vec<f64>,
        sigma: Vec<f64>,
        ergodicity: ErgodicityParams,
    ) -> Result<Self> {
        let dim = (sigma.len() as f64).sqrt().round() as usize;
        ensure(a.len() == dim * dim && sigma.len() == dim * dim, || "A and sigma must be square and equal size".into())?;
        let drift: VectorField = Arc::new(move |x, out| {
            let d = x.len();
            for i in 0..d {
                out[i] = (0..d).map(|j| a[i * d + j] * x[j]).sum();
            }
        });
        DiffusionModel::new(name, dim, drift, Diffusion::Constant(sigma), ergodicity)
    }

    #[inline]
    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn drift_field(&self) -> &VectorField {
        &self.drift
    }

    pub fn diffusion(&self) -> &Diffusion {
        &self.diffusion
    }

    pub fn has_exact_sampler(&self) -> bool {
        self.stationary.is_some()
    }

    fn check_finite_on_probes(&self) -> Result<()> {
        let d = self.dim;
        let mut b = vec![0.0; d];
        let mut s = vec![0.0; d * d];
        let mut points = vec![vec![0.0; d]];
        for r in [0.5, 1.0, 2.0, 5.0, 10.0] {
            for j in 0..d {
                for sign in [1.0, -1.0] {
                    let mut x = vec![0.0; d];
                    x[j] = sign * r;
                    points.push(x);
                }
            }
        }
        for x in &points {
            self.drift(x, &mut b);
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::eval("drift", x));
            }
            self.diffusion.eval(x, &mut s);
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::eval("diffusion", x));
            }
        }
        Ok(())
    }

    /// Probes the smallest eigenvalue of `sigma sigma^T` against `lambda_minus`.
    /// The margin is `lambda_minus - lambda_min`; it holds when every margin is
    /// non-positive up to rounding.
    pub fn check_ellipticity(&self, probe_radii: &[f64], directions_per_radius: usize) -> Result<ConditionReport> {
        let d = self.dim;
        let mut s = vec![0.0; d * d];
        let mut report = ReportBuilder::default();
        let mut probes = vec![vec![0.0; d]];
        for u in sphere_directions(d, directions_per_radius, PROBE_SEED) {
            for &r in probe_radii {
                probes.push(u.iter().map(|v| v * r).collect());
            }
        }
        for x in probes {
            self.diffusion.eval(&x, &mut s);
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::eval("diffusion", &x));
            }
            let m = DMatrix::from_row_slice(d, d, &s);
            let a = &m * m.transpose();
            let lmin = SymmetricEigen::new(a).eigenvalues.min();
            let margin = self.ergodicity.lambda_minus - lmin;
            report.push(margin, 1e-12 * self.ergodicity.lambda_minus, &x);
        }
        Ok(report.finish())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub holds: bool,
    pub worst_margin: f64,
    pub witness: Option<Vec<f64>>,
}

#[derive(Default)]
struct ReportBuilder {
    holds: bool,
    seen: bool,
    worst: f64,
    worst_point: Vec<f64>,
}

impl ReportBuilder {
    fn push(&mut self, margin: f64, tol: f64, x: &[f64]) {
        if !self.seen {
            self.seen = true;
            self.holds = true;
            self.worst = f64::NEG_INFINITY;
        }
        if margin > tol {
            self.holds = false;
        }
        if margin > self.worst {
            self.worst = margin;
            self.worst_point = x.to_vec();
        }
    }

    fn finish(self) -> ConditionReport {
        ConditionReport {
            holds: self.holds,
            worst_margin: self.worst,
            witness: if self.holds { None } else { Some(self.worst_point) },
        }
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit vectors drawn uniformly on the sphere from a fixed stream.
pub fn sphere_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(rng::sub_seed(seed, "directions"), 0);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut u = vec![0.0; dim];
        rng::fill_normal(&mut rng, &mut u);
        let n = norm(&u);
        if n > 1e-12 {
            u.iter_mut().for_each(|v| *v /= n);
            out.push(u);
        }
    }
    out
}

/// Evaluates `<field(x), x/|x|> + r |x|^(-q)` on radii times random
/// directions. The condition holds when every margin is non-positive (up to
/// a relative rounding tolerance).
pub fn probe_radial_margin(
    field: &(dyn Fn(&[f64], &mut [f64]) + Send + Sync),
    dim: usize,
    q: f64,
    r_frak: f64,
    probe_radii: &[f64],
    directions_per_radius: usize,
) -> Result<ConditionReport> {
    ensure(directions_per_radius >= 1, || "directions_per_radius must be >= 1".into())?;
    ensure(!probe_radii.is_empty(), || "at least one probe radius is required".into())?;
    ensure(probe_radii.iter().all(|&r| r > 0.0 && r.is_finite()), || "probe radii must be positive".into())?;
    let mut b = vec![0.0; dim];
    let mut report = ReportBuilder::default();
    for u in sphere_directions(dim, directions_per_radius, PROBE_SEED) {
        for &r in probe_radii {
            let x: Vec<f64> = u.iter().map(|v| v * r).collect();
            field(&x, &mut b);
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::eval("drift", &x));
            }
            let radial = dot(&b, &u);
            let target = r_frak * r.powf(-q);
            report.push(radial + target, 1e-12 * (radial.abs() + target), &x);
        }
    }
    Ok(report.finish())
}

pub fn check_drift_condition(
    model: &DiffusionModel,
    probe_radii: &[f64],
    directions_per_radius: usize,
) -> Result<ConditionReport> {
    let e = &model.ergodicity;
    ensure(probe_radii.iter().all(|&r| r >= e.m0), || format!("probe radii must be >= M0 = {}", e.m0))?;
    probe_radial_margin(model.drift.as_ref(), model.dim, e.q, e.r_frak, probe_radii, directions_per_radius)
}

/// One Euler-Maruyama path stored as a flat buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub step: f64,
    pub dim: usize,
    pub seed: u64,
    pub replicate_id: u64,
    states: Vec<f64>,
}

impl Trajectory {
    pub fn from_states(t0: f64, step: f64, dim: usize, states: Vec<f64>, seed: u64, replicate_id: u64) -> Result<Self> {
        ensure(step > 0.0, || "step must be positive".into())?;
        ensure(dim >= 1 && !states.is_empty() && states.len().is_multiple_of(dim), || "states must be a nonempty multiple of dim".into())?;
        if let Some(k) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k / dim });
        }
        Ok(Trajectory { t0, step, dim, seed, replicate_id, states })
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.len() - 1
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.step
    }

    /// Elapsed time `n_steps * step`.
    pub fn horizon(&self) -> f64 {
        self.n_steps() as f64 * self.step
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn raw(&self) -> &[f64] {
        &self.states
    }

    /// States at indices `stride, 2 stride, ...`, i.e. the discrete
    /// observations `X_{k Delta}` for `k >= 1` with `Delta = stride * step`.
    pub fn sampled(&self, stride: usize) -> Vec<Vec<f64>> {
        assert!(stride >= 1);
        (1..=self.n_steps() / stride).map(|k| self.state(k * stride).to_vec()).collect()
    }
}

/// Runs the Euler-Maruyama recursion and hands every state (index 0 through
/// `n_steps`) to `visit`. Each step consumes `substeps * dim` standard normals;
/// the step's increment is their block sum scaled by `1/sqrt(substeps)`, so a
/// run with step `h/m` and `substeps = 1` follows the same Brownian path as a
/// run with step `h` and `substeps = m`.
pub fn drive<F>(
    model: &DiffusionModel,
    x0: &[f64],
    step: f64,
    n_steps: usize,
    substeps: usize,
    rng: &mut Stream,
    mut visit: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &[f64]) -> Result<()>,
{
    let d = model.dim;
    ensure(x0.len() == d, || format!("x0 has dimension {} but model has {d}", x0.len()))?;
    ensure(step > 0.0 && step.is_finite(), || format!("step must be positive, got {step}"))?;
    ensure(substeps >= 1, || "substeps must be >= 1".into())?;
    let mut x = x0.to_vec();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: 0 });
    }
    let mut b = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    let constant = matches!(model.diffusion, Diffusion::Constant(_));
    if constant {
        model.diffusion.eval(&x, &mut sig);
    }
    let sqrt_h = step.sqrt();
    let inv_sqrt_m = 1.0 / (substeps as f64).sqrt();
    let limit = DIVERGENCE_RADIUS * DIVERGENCE_RADIUS;
    visit(0, &x)?;
    for k in 1..=n_steps {
        model.drift(&x, &mut b);
        if !constant {
            model.diffusion.eval(&x, &mut sig);
        }
        if substeps == 1 {
            rng::fill_normal(rng, &mut xi);
        } else {
            xi.iter_mut().for_each(|v| *v = 0.0);
            for _ in 0..substeps {
                for v in xi.iter_mut() {
                    *v += rng::normal(rng);
                }
            }
            xi.iter_mut().for_each(|v| *v *= inv_sqrt_m);
        }
        let mut n2 = 0.0;
        for i in 0..d {
            let row = &sig[i * d..(i + 1) * d];
            let noise: f64 = row.iter().zip(&xi).map(|(s, z)| s * z).sum();
            x[i] += b[i] * step + noise * sqrt_h;
            n2 += x[i] * x[i];
        }
        if !(n2 <= limit) {
            return Err(Error::Divergence { step: k });
        }
        visit(k, &x)?;
    }
    Ok(x)
}

pub fn euler_maruyama(
    model: &DiffusionModel,
    x0: &[f64],
    step: f64,
    n_steps: usize,
    seed: u64,
    replicate_id: u64,
) -> Result<Trajectory> {
    euler_maruyama_refined(model, x0, step, n_steps, 1, seed, replicate_id)
}

/// Like [`euler_maruyama`], but each step aggregates `substeps` draws of the
/// stream (see [`drive`]).
pub fn euler_maruyama_refined(
    model: &DiffusionModel,
    x0: &[f64],
    step: f64,
    n_steps: usize,
    substeps: usize,
    seed: u64,
    replicate_id: u64,
) -> Result<Trajectory> {
    ensure(n_steps >= 1, || "n_steps must be >= 1".into())?;
    let mut rng = rng::stream(seed, replicate_id);
    let mut states = Vec::with_capacity((n_steps + 1) * model.dim);
    drive(model, x0, step, n_steps, substeps, &mut rng, |_, x| {
        states.extend_from_slice(x);
        Ok(())
    })?;
    Ok(Trajectory { t0: 0.0, step, dim: model.dim, seed, replicate_id, states })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationaryMethod {
    Exact,
    Burnin { t_burn: f64 },
}

/// Exact sampling when the model registers a sampler, else a burn-in of
/// length `20 (1 + M0)`.
pub fn default_stationary_method(model: &DiffusionModel) -> StationaryMethod {
    if model.has_exact_sampler() {
        StationaryMethod::Exact
    } else {
        StationaryMethod::Burnin { t_burn: 20.0 * (1.0 + model.ergodicity.m0) }
    }
}

pub fn sample_stationary(model: &DiffusionModel, method: StationaryMethod, seed: u64) -> Result<Vec<f64>> {
    let mut rng = rng::stream(rng::sub_seed(seed, "stationary"), 0);
    sample_stationary_with(model, method, DEFAULT_STEP, &mut rng)
}

/// Draws from the invariant law (or its burn-in approximation) using the
/// caller's stream. `step` is the Euler step for burn-in.
pub fn sample_stationary_with(
    model: &DiffusionModel,
    method: StationaryMethod,
    step: f64,
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    match method {
        StationaryMethod::Exact => {
            let sampler = model.stationary.as_ref().ok_or_else(|| {
                Error::UnsupportedMethod(format!("model '{}' has no exact stationary sampler", model.name))
            })?;
            let mut x = vec![0.0; model.dim];
            sampler(rng, &mut x);
            Ok(x)
        }
        StationaryMethod::Burnin { t_burn } => {
            ensure(t_burn >= 0.0, || "burn-in length must be >= 0".into())?;
            let n = (t_burn / step).ceil() as usize;
            drive(model, &vec![0.0; model.dim], step, n, 1, rng, |_, _| Ok(()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deterministic(dim: usize, drift: VectorField, q: f64, r: f64) -> DiffusionModel {
        let erg = ErgodicityParams::new(q, 1.0, 0.0, r, 1.0, 1.0, 1.0).unwrap();
        DiffusionModel::new("det", dim, drift, Diffusion::scaled_identity(dim, 0.0), erg).unwrap()
    }

    #[test]
    fn lyapunov_is_one_at_origin_and_increasing() {
        let e = ErgodicityParams::new(0.3, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(e.lyapunov(&[0.0, 0.0]), 1.0);
        let mut prev = 1.0;
        for r in [0.1, 0.5, 1.0, 3.0, 10.0] {
            let v = e.lyapunov(&[r, 0.0]);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn iota_must_respect_drift_margin() {
        let e = ErgodicityParams::new(0.0, 0.0, 0.0, 1.0, 1.0, 2.0, 1.0).unwrap();
        assert!(e.clone().with_iota(0.99).is_ok());
        assert!(e.with_iota(1.0).is_err());
    }

    #[test]
    fn both_rate_parameterisations_agree_without_decay() {
        let e = ErgodicityParams::new(-0.5, 1.0, 0.0, 1.3, 1.0, 2.0, 1.0).unwrap();
        assert!((e.iota_prime() - e.iota_prime_exponential()).abs() < 1e-15);
    }

    #[test]
    fn one_deterministic_euler_step() {
        let m = deterministic(1, Arc::new(|x, o| o[0] = -x[0]), -1.0, 1.0);
        let t = euler_maruyama(&m, &[1.0], 0.1, 1, 0, 0).unwrap();
        assert!((t.state(1)[0] - 0.9).abs() < 1e-15);
        assert_eq!(t.time(1), 0.1);
    }

    #[test]
    fn frozen_dynamics_keep_the_start() {
        let m = deterministic(1, Arc::new(|_, o| o[0] = 0.0), -1.0, 1.0);
        let t = euler_maruyama(&m, &[3.0], 0.01, 50, 1, 2).unwrap();
        assert!(t.states().all(|x| x[0] == 3.0));
    }

    #[test]
    fn divergence_reports_step() {
        let m = deterministic(1, Arc::new(|x, o| o[0] = x[0] * x[0]), -1.0, 1.0);
        match euler_maruyama(&m, &[10.0], 1.0, 100, 0, 0) {
            Err(Error::Divergence { step }) => assert!(step > 0 && step < 10),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn drift_condition_examples() {
        let contracting = deterministic(2, Arc::new(|x, o| { o[0] = -x[0]; o[1] = -x[1]; }), -1.0, 1.0);
        let rep = check_drift_condition(&contracting, &[1.0, 2.0, 5.0], 32).unwrap();
        assert!(rep.holds);
        assert!(rep.worst_margin.abs() < 1e-12);

        let expanding = deterministic(2, Arc::new(|x, o| { o[0] = x[0]; o[1] = x[1]; }), 0.0, 1.0);
        let rep = check_drift_condition(&expanding, &[1.0], 8).unwrap();
        assert!(!rep.holds);
        assert!((norm(rep.witness.as_ref().unwrap()) - 1.0).abs() < 1e-12);

        let saturating = deterministic(
            2,
            Arc::new(|x, o| {
                let n = norm(x);
                o[0] = -x[0] / (1.0 + n);
                o[1] = -x[1] / (1.0 + n);
            }),
            0.0,
            0.5,
        );
        let rep = check_drift_condition(&saturating, &[2.0, 10.0], 32).unwrap();
        assert!(rep.holds);
        // The worst probe sits at radius 2: 0.5 - 2/3.
        assert!((rep.worst_margin - (0.5 - 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn drift_condition_rejects_radii_inside_m0() {
        let mut m = DiffusionModel::ornstein_uhlenbeck(1, 1.0, 1.0).unwrap();
        m.ergodicity.m0 = 2.0;
        assert!(matches!(check_drift_condition(&m, &[1.0], 4), Err(Error::Argument(_))));
    }

    #[test]
    fn non_finite_drift_names_the_point() {
        let erg = ErgodicityParams::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let bad = DiffusionModel::new("bad", 1, Arc::new(|x, o| o[0] = 1.0 / (x[0] - 2.0)), Diffusion::scaled_identity(1, 1.0), erg);
        match bad {
            Err(Error::Evaluation { point, .. }) => assert_eq!(point, vec![2.0]),
            other => panic!("expected evaluation error, got {other:?}"),
        }
    }

    #[test]
    fn ou_is_uniformly_elliptic() {
        let m = DiffusionModel::ornstein_uhlenbeck(3, 1.0, 2.0f64.sqrt()).unwrap();
        assert!(m.check_ellipticity(&[0.5, 3.0], 8).unwrap().holds);
    }

    #[test]
    fn exact_sampling_needs_a_sampler() {
        let m = deterministic(1, Arc::new(|x, o| o[0] = -x[0]), -1.0, 1.0);
        assert!(matches!(sample_stationary(&m, StationaryMethod::Exact, 1), Err(Error::UnsupportedMethod(_))));
        let x = sample_stationary(&m, StationaryMethod::Burnin { t_burn: 20.0 }, 1).unwrap();
        assert!(x[0].abs() < 1e-6);
    }

    #[test]
    fn refined_stream_matches_coarse_path_noise() {
        // With zero drift the coarse path is exactly a subsample of the fine one.
        let erg = ErgodicityParams::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let m = DiffusionModel::new("bm", 1, Arc::new(|_, o| o[0] = 0.0), Diffusion::scaled_identity(1, 1.0), erg).unwrap();
        let fine = euler_maruyama(&m, &[0.0], 0.01, 100, 5, 0).unwrap();
        let coarse = euler_maruyama_refined(&m, &[0.0], 0.1, 10, 10, 5, 0).unwrap();
        for k in 0..=10 {
            assert!((fine.state(10 * k)[0] - coarse.state(k)[0]).abs() < 1e-12);
        }
    }
}
