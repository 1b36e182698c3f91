//! l1-penalized drift estimation on a radial dictionary.
//!
//! The drift is modelled as `b(x) = sum_i theta_i psi_i(x)` where each basis
//! function puts `x_l (alpha + |x|)^{-(q+1)}` into row `k` of the output.
//! Index `i` (0-based) decomposes as `block * d^2 + k * d + l`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::bounds;
use crate::error::{ensure, Error, Result};
use crate::output::{fmt_num, CsvTable};
use crate::rng::{self, Stream};
use crate::sde::{self, norm, ConditionReport, Diffusion, DiffusionModel, ErgodicityParams, Trajectory, VectorField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub q_tilde: f64,
    pub alpha_tilde: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    pub d: usize,
    pub blocks: Vec<Block>,
    /// Growth degree `max_b (-q_b)_+`.
    pub eta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisIndex {
    pub block: usize,
    pub row: usize,
    pub col: usize,
}

pub fn build_dictionary(d: usize, blocks: &[Block]) -> Result<Dictionary> {
    ensure(d >= 1, || "d must be >= 1".into())?;
    ensure(!blocks.is_empty(), || "at least one block is required".into())?;
    for b in blocks {
        ensure(b.alpha_tilde > 0.0 && b.alpha_tilde.is_finite(), || format!("alpha must be positive, got {}", b.alpha_tilde))?;
        ensure((-1.0..1.0).contains(&b.q_tilde), || format!("q must lie in [-1, 1), got {}", b.q_tilde))?;
    }
    let eta = blocks.iter().map(|b| (-b.q_tilde).max(0.0)).fold(0.0, f64::max);
    Ok(Dictionary { d, blocks: blocks.to_vec(), eta })
}

impl Dictionary {
    pub fn n_basis(&self) -> usize {
        self.blocks.len() * self.d * self.d
    }

    pub fn index(&self, i: usize) -> BasisIndex {
        let d2 = self.d * self.d;
        let local = i % d2;
        BasisIndex { block: i / d2, row: local / self.d, col: local % self.d }
    }

    pub fn position(&self, idx: BasisIndex) -> usize {
        idx.block * self.d * self.d + idx.row * self.d + idx.col
    }

    /// `(alpha_b + |x|)^{-(q_b + 1)}` per block.
    pub fn radial_weights(&self, x: &[f64], out: &mut [f64]) {
        let r = norm(x);
        for (o, b) in out.iter_mut().zip(&self.blocks) {
            *o = (b.alpha_tilde + r).powf(-(b.q_tilde + 1.0));
        }
    }

    /// Nonzero entry of each `psi_i(x)`; it sits in row `index(i).row`.
    pub fn features(&self, x: &[f64], out: &mut [f64]) {
        let mut w = vec![0.0; self.blocks.len()];
        self.radial_weights(x, &mut w);
        for (i, o) in out.iter_mut().enumerate() {
            let idx = self.index(i);
            *o = w[idx.block] * x[idx.col];
        }
    }

    pub fn psi(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let idx = self.index(i);
        let mut w = vec![0.0; self.blocks.len()];
        self.radial_weights(x, &mut w);
        let mut v = vec![0.0; self.d];
        v[idx.row] = w[idx.block] * x[idx.col];
        v
    }

    /// The `d x N` matrix with columns `psi_i(x)`.
    pub fn design(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.n_basis();
        let mut g = vec![0.0; n];
        self.features(x, &mut g);
        let mut m = DMatrix::zeros(self.d, n);
        for (i, gi) in g.iter().enumerate() {
            m[(self.index(i).row, i)] = *gi;
        }
        m
    }

    pub fn drift(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        let mut w = vec![0.0; self.blocks.len()];
        self.radial_weights(x, &mut w);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, t) in theta.iter().enumerate() {
            if *t != 0.0 {
                let idx = self.index(i);
                out[idx.row] += t * w[idx.block] * x[idx.col];
            }
        }
    }

    /// Probes `lambda_max(Psi(x)) <= L (1 + |x|^{2 eta})` with
    /// `Psi(x) = psi(x)^T a0(x)^{-1} psi(x)`.
    pub fn check_growth(&self, sigma0: &Diffusion, l_frak: f64, probe_radii: &[f64], directions: usize) -> Result<ConditionReport> {
        let mut probes = vec![vec![0.0; self.d]];
        for u in sde::sphere_directions(self.d, directions, 0x9a3) {
            for &r in probe_radii {
                probes.push(u.iter().map(|v| v * r).collect());
            }
        }
        let mut holds = true;
        let mut worst = f64::NEG_INFINITY;
        let mut witness = Vec::new();
        for x in probes {
            let a_inv = inverse_covariance(sigma0, &x, self.d)?;
            let p = self.design(&x);
            let m = p.transpose() * a_inv * &p;
            let lmax = SymmetricEigen::new(m).eigenvalues.max();
            let bound = l_frak * (1.0 + norm(&x).powf(2.0 * self.eta));
            let margin = lmax - bound;
            if margin > 1e-12 * bound {
                holds = false;
            }
            if margin > worst {
                worst = margin;
                witness = x;
            }
        }
        Ok(ConditionReport { holds, worst_margin: worst, witness: if holds { None } else { Some(witness) } })
    }
}

fn inverse_covariance(sigma0: &Diffusion, x: &[f64], d: usize) -> Result<DMatrix<f64>> {
    let mut s = vec![0.0; d * d];
    sigma0.eval(x, &mut s);
    let m = DMatrix::from_row_slice(d, d, &s);
    let a = &m * m.transpose();
    Cholesky::new(a)
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numerical(format!("a0 = sigma0 sigma0^T is singular at {x:?}")))
}

/// `Psi_bar = (1/T) int psi^T a0^{-1} psi ds` and `h_bar = (1/T) int psi^T a0^{-1} dX`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramSystem {
    pub psi_bar: DMatrix<f64>,
    pub h_bar: DVector<f64>,
    pub t: f64,
    pub n: usize,
}

impl GramSystem {
    pub fn new(psi_bar: DMatrix<f64>, h_bar: DVector<f64>, t: f64) -> Result<Self> {
        let n = h_bar.len();
        ensure(psi_bar.nrows() == n && psi_bar.ncols() == n, || "Psi_bar must be N x N".into())?;
        let sys = GramSystem { psi_bar, h_bar, t, n };
        sys.check_invariants()?;
        Ok(sys)
    }

    /// Finite entries, symmetry to `1e-12` relative and eigenvalues no lower
    /// than `-1e-8 |Psi_bar|`.
    pub fn check_invariants(&self) -> Result<()> {
        if self.psi_bar.iter().chain(self.h_bar.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("Gram system has non-finite entries".into()));
        }
        let scale = self.psi_bar.amax().max(f64::MIN_POSITIVE);
        let asym = (&self.psi_bar - self.psi_bar.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::Numerical(format!("Psi_bar asymmetric by {asym:e}")));
        }
        let lmin = self.min_eigenvalue();
        if lmin < -1e-8 * self.psi_bar.norm() {
            return Err(Error::Numerical(format!("Psi_bar has eigenvalue {lmin:e}")));
        }
        Ok(())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.psi_bar.clone()).eigenvalues.min()
    }

    /// Plug-in `(D_inf, e_inf)`: the largest diagonal entry and the smallest
    /// eigenvalue of `Psi_bar`.
    pub fn plugin_constants(&self) -> (f64, f64) {
        (self.psi_bar.diagonal().max(), self.min_eigenvalue())
    }
}

/// Streaming accumulator for the Gram system along a path.
pub struct GramAccumulator<'a> {
    dict: &'a Dictionary,
    sigma0: &'a Diffusion,
    constant_inv: Option<DMatrix<f64>>,
    step: f64,
    steps: usize,
    prev: Option<Vec<f64>>,
    g: Vec<f64>,
    // Constant a0: sums over (block, col) features, expanded on snapshot.
    m: DMatrix<f64>,
    z: DMatrix<f64>,
    // State-dependent a0: direct sums over basis pairs.
    psi: DMatrix<f64>,
    h: DVector<f64>,
}

impl<'a> GramAccumulator<'a> {
    pub fn new(dict: &'a Dictionary, sigma0: &'a Diffusion, step: f64) -> Result<Self> {
        ensure(step > 0.0, || "step must be positive".into())?;
        let constant_inv = match sigma0 {
            Diffusion::Constant(_) => Some(inverse_covariance(sigma0, &vec![0.0; dict.d], dict.d)?),
            Diffusion::StateDependent(_) => None,
        };
        let f = dict.blocks.len() * dict.d;
        let n = dict.n_basis();
        Ok(GramAccumulator {
            dict,
            sigma0,
            constant_inv,
            step,
            steps: 0,
            prev: None,
            g: vec![0.0; n.max(f)],
            m: DMatrix::zeros(f, f),
            z: DMatrix::zeros(f, dict.d),
            psi: DMatrix::zeros(n, n),
            h: DVector::zeros(n),
        })
    }

    /// Feeds the next state of the path.
    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        let d = self.dict.d;
        let Some(prev) = self.prev.as_mut() else {
            self.prev = Some(x.to_vec());
            return Ok(());
        };
        let dx: Vec<f64> = x.iter().zip(prev.iter()).map(|(a, b)| a - b).collect();
        if self.constant_inv.is_some() {
            let nb = self.dict.blocks.len();
            let mut w = vec![0.0; nb];
            self.dict.radial_weights(prev, &mut w);
            let f = nb * d;
            for b in 0..nb {
                for c in 0..d {
                    self.g[b * d + c] = w[b] * prev[c];
                }
            }
            for a in 0..f {
                let ga = self.g[a];
                for b in a..f {
                    self.m[(a, b)] += ga * self.g[b];
                }
                for j in 0..d {
                    self.z[(a, j)] += ga * dx[j];
                }
            }
        } else {
            let a_inv = inverse_covariance(self.sigma0, prev, d)
                .map_err(|_| Error::Numerical(format!("a0 is singular at step {} (state {prev:?})", self.steps)))?;
            let n = self.dict.n_basis();
            self.dict.features(prev, &mut self.g[..n]);
            let w = &a_inv * DVector::from_column_slice(&dx);
            for i in 0..n {
                let ri = self.dict.index(i).row;
                let gi = self.g[i];
                self.h[i] += gi * w[ri];
                for j in i..n {
                    let rj = self.dict.index(j).row;
                    self.psi[(i, j)] += gi * self.g[j] * a_inv[(ri, rj)];
                }
            }
        }
        prev.copy_from_slice(x);
        self.steps += 1;
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// The Gram system over the states pushed so far.
    pub fn snapshot(&self) -> Result<GramSystem> {
        ensure(self.steps >= 1, || "need at least two states".into())?;
        let n = self.dict.n_basis();
        let d = self.dict.d;
        let t = self.steps as f64 * self.step;
        let mut psi = DMatrix::zeros(n, n);
        let mut h = DVector::zeros(n);
        match &self.constant_inv {
            Some(a) => {
                let feat = |i: usize| {
                    let idx = self.dict.index(i);
                    (idx.block * d + idx.col, idx.row)
                };
                for i in 0..n {
                    let (fi, ri) = feat(i);
                    h[i] = (0..d).map(|j| a[(ri, j)] * self.z[(fi, j)]).sum::<f64>() / t;
                    for j in i..n {
                        let (fj, rj) = feat(j);
                        let mv = if fi <= fj { self.m[(fi, fj)] } else { self.m[(fj, fi)] };
                        let v = a[(ri, rj)] * mv / self.steps as f64;
                        psi[(i, j)] = v;
                        psi[(j, i)] = v;
                    }
                }
            }
            None => {
                for i in 0..n {
                    h[i] = self.h[i] / t;
                    for j in i..n {
                        let v = self.psi[(i, j)] / self.steps as f64;
                        psi[(i, j)] = v;
                        psi[(j, i)] = v;
                    }
                }
            }
        }
        Ok(GramSystem { psi_bar: psi, h_bar: h, t, n })
    }
}

pub fn gram_and_target(traj: &Trajectory, dict: &Dictionary, sigma0: &Diffusion) -> Result<GramSystem> {
    ensure(traj.dim == dict.d, || format!("trajectory dimension {} does not match dictionary {}", traj.dim, dict.d))?;
    ensure(traj.len() >= 2, || "trajectory needs at least two states".into())?;
    let mut acc = GramAccumulator::new(dict, sigma0, traj.step)?;
    for x in traj.states() {
        acc.push(x)?;
    }
    acc.snapshot()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub theta_hat: Vec<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub sweeps: usize,
    /// Objective after each sweep.
    pub objective_history: Vec<f64>,
}

impl LassoFit {
    pub fn support(&self) -> Vec<usize> {
        self.theta_hat.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.theta_hat.iter().map(|v| v.abs()).sum()
    }

    pub fn to_csv(&self, dict: &Dictionary) -> CsvTable {
        let rows = self
            .theta_hat
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let idx = dict.index(i);
                vec![i.to_string(), idx.block.to_string(), idx.row.to_string(), idx.col.to_string(), fmt_num(*v)]
            })
            .collect();
        CsvTable::new(&["index", "block", "row", "col", "theta_hat"], rows)
    }
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_SWEEPS: usize = 100_000;

/// `theta^T Psi theta - 2 theta^T h + lambda |theta|_1`.
pub fn objective(sys: &GramSystem, theta: &[f64], lambda: f64) -> f64 {
    let t = DVector::from_column_slice(theta);
    (t.transpose() * &sys.psi_bar * &t)[(0, 0)] - 2.0 * t.dot(&sys.h_bar) + lambda * t.iter().map(|v| v.abs()).sum::<f64>()
}

/// `max_i dist(2 (Psi theta - h)_i, -lambda d|theta_i|)`.
pub fn kkt_residual(sys: &GramSystem, theta: &[f64], lambda: f64) -> f64 {
    let t = DVector::from_column_slice(theta);
    let g = (&sys.psi_bar * &t - &sys.h_bar) * 2.0;
    g.iter()
        .zip(theta)
        .map(|(gi, ti)| if *ti != 0.0 { (gi + lambda * ti.signum()).abs() } else { (gi.abs() - lambda).max(0.0) })
        .fold(0.0, f64::max)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent with exact soft-threshold updates.
pub fn lasso_solve(sys: &GramSystem, lambda: f64, tol: f64, max_sweeps: usize) -> Result<LassoFit> {
    ensure(lambda >= 0.0 && lambda.is_finite(), || format!("lambda must be >= 0, got {lambda}"))?;
    ensure(tol > 0.0 && max_sweeps >= 1, || "need tol > 0 and max_sweeps >= 1".into())?;
    let n = sys.n;
    if let Some(i) = (0..n).find(|&i| !(sys.psi_bar[(i, i)] > 0.0)) {
        return Err(Error::Argument(format!("Psi_bar[{i},{i}] = {} is not positive", sys.psi_bar[(i, i)])));
    }
    let mut theta = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut history = Vec::new();
    let mut prev: f64 = 0.0;
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for i in 0..n {
            let pii = sys.psi_bar[(i, i)];
            let rho = sys.h_bar[i] - (r[i] - pii * theta[i]);
            let new = soft_threshold(rho, lambda / 2.0) / pii;
            let delta = new - theta[i];
            if delta != 0.0 {
                for (k, rk) in r.iter_mut().enumerate() {
                    *rk += delta * sys.psi_bar[(k, i)];
                }
                theta[i] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        let obj = objective(sys, &theta, lambda);
        if obj > prev + 1e-10 * (1.0 + prev.abs()) {
            return Err(Error::Numerical(format!("objective rose from {prev} to {obj} in sweep {sweeps}")));
        }
        history.push(obj);
        prev = obj;
        if max_change <= tol {
            converged = true;
            break;
        }
    }
    let kkt = kkt_residual(sys, &theta, lambda);
    if !converged && kkt > 100.0 * tol {
        return Err(Error::NonConvergence { sweeps, kkt_residual: kkt });
    }
    Ok(LassoFit { objective: prev, theta_hat: theta, lambda, kkt_residual: kkt, sweeps, objective_history: history })
}

/// Indices of the `s` largest magnitudes, lowest index first on ties.
pub fn top_s(zeta: &[f64], s: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..zeta.len()).collect();
    idx.sort_by(|&a, &b| zeta[b].abs().total_cmp(&zeta[a].abs()).then(a.cmp(&b)));
    idx.truncate(s);
    idx
}

/// `|zeta|_1 <= (1 + c0) |zeta restricted to its s largest entries|_1`.
pub fn cone_contains(zeta: &[f64], s: usize, c0: f64) -> bool {
    let l1: f64 = zeta.iter().map(|v| v.abs()).sum();
    let core: f64 = top_s(zeta, s).iter().map(|&i| zeta[i].abs()).sum();
    l1 <= (1.0 + c0) * core
}

fn random_cone_vector(rng: &mut Stream, n: usize, s: usize, c0: f64) -> Vec<f64> {
    let support = index::sample(rng, n, s).into_vec();
    let mut z = vec![0.0; n];
    let mut in_core = vec![false; n];
    for &i in &support {
        z[i] = rng::normal(rng);
        in_core[i] = true;
    }
    let core: f64 = support.iter().map(|&i| z[i].abs()).sum();
    if s < n && c0 > 0.0 {
        let mut tail: Vec<(usize, f64)> = (0..n).filter(|i| !in_core[*i]).map(|i| (i, rng::normal(rng))).collect();
        let t1: f64 = tail.iter().map(|(_, v)| v.abs()).sum();
        if t1 > 0.0 {
            // Just inside the boundary so rounding cannot push it out.
            let scale = c0 * core * (1.0 - 1e-9) / t1;
            for (i, v) in tail.iter_mut() {
                z[*i] = *v * scale;
            }
        }
    }
    z
}

/// Minimum Rayleigh quotient of `Psi_bar` over random cone vectors and all
/// signed coordinate axes.
pub fn restricted_eigenvalue_probe(sys: &GramSystem, s: usize, c0: f64, n_probe: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    let n = sys.n;
    ensure(s >= 1 && s <= n, || format!("s must lie in [1, {n}], got {s}"))?;
    ensure(n_probe >= 100, || format!("need at least 100 probes, got {n_probe}"))?;
    ensure(c0 >= 0.0, || "c0 must be >= 0".into())?;
    let mut rng = rng::stream(rng::sub_seed(seed, "re-probe"), 0);
    let quotient = |z: &[f64]| {
        let v = DVector::from_column_slice(z);
        (v.transpose() * &sys.psi_bar * &v)[(0, 0)] / v.norm_squared()
    };
    let mut best = (f64::INFINITY, Vec::new());
    let mut consider = |z: Vec<f64>| {
        if z.iter().any(|v| *v != 0.0) {
            let q = quotient(&z);
            if q < best.0 {
                best = (q, z);
            }
        }
    };
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut z = vec![0.0; n];
            z[i] = sign;
            consider(z);
        }
    }
    for _ in 0..n_probe {
        consider(random_cone_vector(&mut rng, n, s, c0));
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Compares `(theta - theta0)^T Psi_bar (theta - theta0)` with
/// `lambda^2 2 s0 / e_inf`.
pub fn oracle_check(fit: &LassoFit, theta0: &[f64], sys: &GramSystem, s0: usize, e_inf_hat: f64) -> Result<OracleCheck> {
    ensure(e_inf_hat > 0.0, || format!("e_inf must be positive, got {e_inf_hat}"))?;
    ensure(theta0.len() == sys.n && fit.theta_hat.len() == sys.n, || "parameter length mismatch".into())?;
    let diff = DVector::from_iterator(sys.n, fit.theta_hat.iter().zip(theta0).map(|(a, b)| a - b));
    let lhs = (diff.transpose() * &sys.psi_bar * &diff)[(0, 0)];
    let rhs = fit.lambda * fit.lambda * 2.0 * s0 as f64 / e_inf_hat;
    Ok(OracleCheck { lhs, rhs, holds: lhs <= rhs })
}

/// A dictionary-driven model `dX = sum theta0_i psi_i(X) dt + sigma0 dW` with
/// everything needed to run the estimator end to end.
#[derive(Clone, Debug)]
pub struct LassoPipeline {
    pub dict: Dictionary,
    pub theta0: Vec<f64>,
    pub sigma0: Diffusion,
    pub model: DiffusionModel,
    pub s0: usize,
    pub eps0: f64,
    pub step: f64,
    pub burn_in: f64,
}

impl LassoPipeline {
    pub fn new(dict: Dictionary, theta0: Vec<f64>, sigma0: Diffusion, ergodicity: ErgodicityParams) -> Result<Self> {
        ensure(theta0.len() == dict.n_basis(), || format!("theta0 needs {} entries", dict.n_basis()))?;
        let d2 = dict.clone();
        let t2 = theta0.clone();
        let drift: VectorField = std::sync::Arc::new(move |x, out| d2.drift(&t2, x, out));
        let model = DiffusionModel::new("dictionary", dict.d, drift, sigma0.clone(), ergodicity)?;
        let s0 = theta0.iter().filter(|v| **v != 0.0).count();
        Ok(LassoPipeline { dict, theta0, sigma0, model, s0, eps0: 0.1, step: sde::DEFAULT_STEP, burn_in: 20.0 })
    }

    /// Linear block with `A = diag(diag)` and identity noise. `diag` must be
    /// strictly negative.
    pub fn diagonal_linear(diag: &[f64]) -> Result<Self> {
        let d = diag.len();
        ensure(d >= 1 && diag.iter().all(|a| *a < 0.0), || "diagonal drift entries must be negative".into())?;
        let dict = build_dictionary(d, &[Block { q_tilde: -1.0, alpha_tilde: 1.0 }])?;
        let mut theta0 = vec![0.0; dict.n_basis()];
        for (k, a) in diag.iter().enumerate() {
            theta0[dict.position(BasisIndex { block: 0, row: k, col: k })] = *a;
        }
        let rate = diag.iter().map(|a| -a).fold(f64::INFINITY, f64::min);
        let erg = ErgodicityParams::new(-1.0, 1.0, 0.0, rate, 1.0, 1.0, d as f64)?;
        LassoPipeline::new(dict, theta0, Diffusion::scaled_identity(d, 1.0), erg)
    }

    /// Gram systems at each horizon (ascending) along one path, started after
    /// a burn-in from the origin. Stream `(seed, replicate)` drives both parts.
    pub fn systems(&self, horizons: &[f64], seed: u64, replicate: u64) -> Result<Vec<GramSystem>> {
        ensure(!horizons.is_empty() && horizons.windows(2).all(|w| w[0] < w[1]), || "horizons must be ascending".into())?;
        let mut rng = rng::stream(seed, replicate);
        let x0 = sde::sample_stationary_with(&self.model, sde::StationaryMethod::Burnin { t_burn: self.burn_in }, self.step, &mut rng)?;
        let marks: Vec<usize> = horizons.iter().map(|h| (h / self.step).round() as usize).collect();
        let total = *marks.last().expect("nonempty");
        let mut acc = GramAccumulator::new(&self.dict, &self.sigma0, self.step)?;
        let mut out = Vec::with_capacity(marks.len());
        sde::drive(&self.model, &x0, self.step, total, 1, &mut rng, |k, x| {
            acc.push(x)?;
            if marks.contains(&k) {
                out.push(acc.snapshot()?);
            }
            Ok(())
        })?;
        Ok(out)
    }

    /// Plug-in `(D_inf, e_inf)` from a pilot path of length `t_pilot`.
    pub fn pilot_constants(&self, t_pilot: f64, seed: u64) -> Result<(f64, f64)> {
        let sys = self.systems(&[t_pilot], rng::sub_seed(seed, "pilot"), 0)?.remove(0);
        let (d_inf, e_inf) = sys.plugin_constants();
        if !(e_inf > 0.0) {
            return Err(Error::Numerical(format!("pilot Gram matrix is not positive definite (min eigenvalue {e_inf})")));
        }
        Ok((d_inf, e_inf))
    }

    pub fn lambda_for(&self, t: f64, d_inf: f64, e_inf: f64) -> Result<f64> {
        bounds::lasso_lambda_min(t, self.dict.n_basis(), self.eps0, d_inf, e_inf)
    }

    /// Fits at each horizon with `lambda_min(T)` and checks the oracle bound.
    pub fn run(&self, horizons: &[f64], d_inf: f64, e_inf: f64, seed: u64, replicate: u64) -> Result<Vec<(LassoFit, OracleCheck)>> {
        self.systems(horizons, seed, replicate)?
            .iter()
            .map(|sys| {
                let fit = lasso_solve(sys, self.lambda_for(sys.t, d_inf, e_inf)?, DEFAULT_TOL, DEFAULT_MAX_SWEEPS)?;
                let oc = oracle_check(&fit, &self.theta0, sys, self.s0, e_inf)?;
                Ok((fit, oc))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_linear_dictionary_is_identity() {
        let d = build_dictionary(1, &[Block { q_tilde: -1.0, alpha_tilde: 1.0 }]).unwrap();
        assert_eq!(d.n_basis(), 1);
        assert_eq!(d.eta, 1.0);
        for x in [-3.0, 0.0, 2.5] {
            assert_eq!(d.psi(0, &[x]), vec![x]);
        }
    }

    #[test]
    fn rejects_bad_blocks() {
        assert!(build_dictionary(2, &[Block { q_tilde: 0.0, alpha_tilde: 0.0 }]).is_err());
        assert!(build_dictionary(2, &[Block { q_tilde: 1.0, alpha_tilde: 1.0 }]).is_err());
    }

    #[test]
    fn index_round_trip() {
        let d = build_dictionary(3, &[Block { q_tilde: 0.0, alpha_tilde: 1.0 }, Block { q_tilde: -0.5, alpha_tilde: 2.0 }]).unwrap();
        for i in 0..d.n_basis() {
            assert_eq!(d.position(d.index(i)), i);
        }
    }

    #[test]
    fn soft_threshold_example() {
        let sys = GramSystem::new(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 0.0]), 1.0).unwrap();
        let fit = lasso_solve(&sys, 1.0, 1e-12, 100).unwrap();
        assert_eq!(fit.theta_hat, vec![0.5, 0.0]);
        let fit = lasso_solve(&sys, 0.0, 1e-12, 100).unwrap();
        assert_eq!(fit.theta_hat, vec![1.0, 0.0]);
    }

    #[test]
    fn zero_diagonal_is_rejected() {
        let sys = GramSystem::new(DMatrix::zeros(1, 1), DVector::from_vec(vec![1.0]), 1.0).unwrap();
        assert!(matches!(lasso_solve(&sys, 0.1, 1e-8, 10), Err(Error::Argument(_))));
    }

    #[test]
    fn cone_membership_and_ties() {
        assert_eq!(top_s(&[1.0, -1.0, 0.5], 1), vec![0]);
        assert!(cone_contains(&[1.0, 0.5, 0.5], 1, 1.0));
        assert!(!cone_contains(&[1.0, 0.6, 0.5], 1, 1.0));
    }

    #[test]
    fn identity_rayleigh_quotient() {
        let sys = GramSystem::new(DMatrix::identity(6, 6), DVector::zeros(6), 1.0).unwrap();
        let (q, _) = restricted_eigenvalue_probe(&sys, 2, 1.0, 200, 5).unwrap();
        assert!((q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weak_axis_is_found() {
        let sys = GramSystem::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-6])), DVector::zeros(2), 1.0).unwrap();
        let (q, z) = restricted_eigenvalue_probe(&sys, 1, 1.0, 100, 1).unwrap();
        assert!(q <= 1e-3);
        assert!(cone_contains(&z, 1, 1.0));
    }

    #[test]
    fn constant_path_gives_pointwise_gram() {
        let dict = build_dictionary(2, &[Block { q_tilde: 0.0, alpha_tilde: 1.0 }]).unwrap();
        let x = [0.7, -1.2];
        let states: Vec<f64> = (0..5).flat_map(|_| x).collect();
        let traj = Trajectory::from_states(0.0, 0.1, 2, states, 0, 0).unwrap();
        let sigma = Diffusion::Constant(vec![1.0, 0.2, 0.0, 1.5]);
        let sys = gram_and_target(&traj, &dict, &sigma).unwrap();
        let a_inv = inverse_covariance(&sigma, &x, 2).unwrap();
        let p = dict.design(&x);
        let expect = p.transpose() * a_inv * &p;
        assert!((&sys.psi_bar - expect).amax() < 1e-14);
        assert!(sys.h_bar.amax() == 0.0);
    }

    #[test]
    fn oracle_check_at_truth() {
        let sys = GramSystem::new(DMatrix::identity(2, 2), DVector::zeros(2), 1.0).unwrap();
        let fit = LassoFit { theta_hat: vec![1.0, 0.0], lambda: 0.5, objective: 0.0, kkt_residual: 0.0, sweeps: 1, objective_history: vec![] };
        let a = oracle_check(&fit, &[1.0, 0.0], &sys, 1, 1.0).unwrap();
        assert_eq!(a.lhs, 0.0);
        assert!(a.holds);
        let b = oracle_check(&fit, &[1.0, 0.0], &sys, 2, 1.0).unwrap();
        assert_eq!(b.rhs, 2.0 * a.rhs);
    }
}
