//! Closed-form exponents, constants, sample sizes and tuning rules.
//!
//! Every function here is pure. Inputs outside the validity regime of a bound
//! return [`Error::Regime`]; malformed inputs return [`Error::Argument`].

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::sde::ErgodicityParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacRequest {
    pub epsilon: f64,
    pub delta: f64,
}

impl PacRequest {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        ensure(epsilon > 0.0 && epsilon.is_finite(), || format!("epsilon must be positive, got {epsilon}"))?;
        ensure(delta > 0.0 && delta < 1.0, || format!("delta must lie in (0, 1), got {delta}"))?;
        Ok(PacRequest { epsilon, delta })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Default,
    Calibrated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constant {
    pub value: f64,
    pub provenance: Provenance,
}

impl Constant {
    pub fn default_value(value: f64) -> Self {
        Constant { value, provenance: Provenance::Default }
    }

    pub fn calibrated(value: f64) -> Self {
        Constant { value, provenance: Provenance::Calibrated }
    }
}

/// Constants whose existence is known but whose value is not. Everything
/// defaults to 1 with [`Provenance::Default`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConstants {
    pub w_frak: Constant,
    pub d_frak: Constant,
    pub c_frak: Constant,
    pub c_burnin: Constant,
    pub c_small: Constant,
    pub iota_dd: Constant,
    pub d_inf: Constant,
    pub e_inf: Constant,
}

impl Default for CalibrationConstants {
    fn default() -> Self {
        let one = Constant::default_value(1.0);
        CalibrationConstants {
            w_frak: one,
            d_frak: one,
            c_frak: one,
            c_burnin: one,
            c_small: one,
            iota_dd: one,
            d_inf: one,
            e_inf: one,
        }
    }
}

impl CalibrationConstants {
    /// Defaults with `iota'' = iota' / 2` taken from the model.
    pub fn for_model(erg: &ErgodicityParams) -> Self {
        CalibrationConstants { iota_dd: Constant::default_value(erg.default_iota_dd()), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in self.entries() {
            ensure(c.value > 0.0 && c.value.is_finite(), || format!("constant {name} must be positive and finite, got {}", c.value))?;
        }
        Ok(())
    }

    pub fn entries(&self) -> [(&'static str, Constant); 8] {
        [
            ("W", self.w_frak),
            ("D", self.d_frak),
            ("C_frak", self.c_frak),
            ("C", self.c_burnin),
            ("c_small", self.c_small),
            ("iota_dd", self.iota_dd),
            ("D_inf", self.d_inf),
            ("e_inf", self.e_inf),
        ]
    }
}

fn check_q(q: f64) -> Result<()> {
    ensure((-1.0..1.0).contains(&q), || format!("q must lie in [-1, 1), got {q}"))
}

fn q_plus(q: f64) -> f64 {
    q.max(0.0)
}

/// Rate exponent: `1 - q+` when `eta = 0`, otherwise
/// `1/2 + (eta + q' + q + 1) / (1 - q+)`.
pub fn rate_exponent(eta: f64, q: f64, q_prime: f64) -> f64 {
    if eta == 0.0 {
        1.0 - q_plus(q)
    } else {
        sigma_tilde(eta, q, q_prime)
    }
}

/// `1/2 + (eta + q' + q + 1) / (1 - q+)` for every `eta >= 0`, as used by the
/// discrete-sampling bounds.
pub fn sigma_tilde(eta: f64, q: f64, q_prime: f64) -> f64 {
    0.5 + (eta + q_prime + q + 1.0) / (1.0 - q_plus(q))
}

pub fn cattiaux_c(q: f64, iota_dd: f64) -> Result<f64> {
    ensure(iota_dd > 0.0, || format!("iota'' must be positive, got {iota_dd}"))?;
    let qp = q_plus(q);
    if !(qp < 1.0) {
        return Err(Error::Domain(format!("q+ = {qp} leaves no room for 1/(1 - q+)")));
    }
    let a = ((1.0 + qp) / (1.0 - qp)).powf(1.0 / (1.0 - qp));
    let b = ((1.0 - qp) * iota_dd / (1.0 + qp)).powf((1.0 + qp) / (2.0 * (1.0 - qp)));
    Ok(a * b / 2.0)
}

/// Continuous-time sample length `Psi(eps, delta)`.
pub fn sample_length_continuous(
    req: &PacRequest,
    eta: f64,
    q: f64,
    q_prime: f64,
    l_frak: f64,
    consts: &CalibrationConstants,
) -> Result<f64> {
    check_q(q)?;
    ensure(eta >= 0.0 && q_prime >= 0.0 && l_frak > 0.0, || "need eta >= 0, q' >= 0, L > 0".into())?;
    let qp = q_plus(q);
    let PacRequest { epsilon, delta } = *req;
    if eta == 0.0 {
        let limit = 2.0 * (-consts.c_small.value * (1.0 + qp) * (1.0 - qp).powf(-(1.0 - qp) / 2.0)).exp();
        if !(delta < limit) {
            return Err(Error::Regime(format!("bounded case needs delta < {limit}, got {delta}")));
        }
        let c = cattiaux_c(q, consts.iota_dd.value)?;
        let num = (2.0 / delta).ln().powf(1.0 / (1.0 - qp)) / c + 1.0;
        let den = (epsilon / (2.0 * l_frak)).min(1.0);
        Ok((num / den).powi(2))
    } else {
        if !(delta < (-2.0f64).exp()) {
            return Err(Error::Regime(format!("unbounded case needs delta < e^-2, got {delta}")));
        }
        let s = rate_exponent(eta, q, q_prime);
        Ok((E * l_frak * consts.w_frak.value * (1.0 / delta).ln().powf(s) / epsilon).powi(2))
    }
}

/// Moment constant `c_{q+}` bounding `E|X_0|^p` under the invariant law.
pub fn mu_moment_constant(q: f64, iota: f64, v_expectation: f64) -> Result<f64> {
    check_q(q)?;
    ensure(iota > 0.0, || format!("iota must be positive, got {iota}"))?;
    ensure(v_expectation >= 1.0, || format!("E[V] must be >= 1, got {v_expectation}"))?;
    let a = 1.0 - q_plus(q);
    Ok((E / 2.0 + a / 12.0).exp() * (a * iota * E).powf(-1.0 / a) * (2.0 * PI / a).sqrt() * v_expectation)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteExponentChoice {
    pub alpha: f64,
    pub gamma_tilde: f64,
    /// Unset in the exponentially ergodic case `q = -1`.
    pub r: Option<f64>,
    pub rho: f64,
    pub sigma_tilde: f64,
}

impl DiscreteExponentChoice {
    /// `gamma - (1+q) > r max(alpha, (1+q)/(r-1))` when `q > -1`; `gamma = alpha`
    /// otherwise.
    pub fn is_feasible(&self, q: f64) -> bool {
        match self.r {
            None => q == -1.0 && self.gamma_tilde == self.alpha,
            Some(r) => {
                r > 1.0 && self.gamma_tilde - (1.0 + q) > r * self.alpha.max((1.0 + q) / (r - 1.0))
            }
        }
    }
}

/// `max{(gamma + 2 alpha + 1 - q+)/2, eta2 + 1 - q+} / (1 - q+)`.
pub fn rho(alpha: f64, eta2: f64, gamma_tilde: f64, q: f64) -> f64 {
    let qp = q_plus(q);
    ((gamma_tilde + 2.0 * alpha + 1.0 - qp) / 2.0).max(eta2 + 1.0 - qp) / (1.0 - qp)
}

fn gamma_for(q: f64, alpha: f64, r: f64) -> f64 {
    (1.0 + q) + r * alpha.max((1.0 + q) / (r - 1.0)) * (1.0 + 1e-6)
}

/// Picks `(gamma, r)` minimising `rho` over `r = 1.05, 1.10, ..., 20`.
pub fn choose_discrete_exponents(q: f64, q_prime: f64, eta1: f64, eta2: f64, eta3: f64) -> Result<DiscreteExponentChoice> {
    check_q(q)?;
    for v in [q_prime, eta1, eta2, eta3] {
        ensure(v >= 0.0 && v.is_finite(), || "growth exponents must be finite and >= 0".into())?;
    }
    let alpha = (q_prime + eta2).max(eta3);
    let st = sigma_tilde(eta1, q, q_prime);
    if q == -1.0 {
        return Ok(DiscreteExponentChoice { alpha, gamma_tilde: alpha, r: None, rho: rho(alpha, eta2, alpha, q), sigma_tilde: st });
    }
    let mut best: Option<DiscreteExponentChoice> = None;
    for k in 0..=379u32 {
        let r = (105 + 5 * k) as f64 / 100.0;
        let g = gamma_for(q, alpha, r);
        let cand = DiscreteExponentChoice { alpha, gamma_tilde: g, r: Some(r), rho: rho(alpha, eta2, g, q), sigma_tilde: st };
        if best.is_none_or(|b| cand.rho < b.rho) {
            best = Some(cand);
        }
    }
    Ok(best.expect("grid is nonempty"))
}

/// Same as [`choose_discrete_exponents`] with `r` fixed.
pub fn choose_discrete_exponents_with_r(
    q: f64,
    q_prime: f64,
    eta1: f64,
    eta2: f64,
    eta3: f64,
    r: f64,
) -> Result<DiscreteExponentChoice> {
    check_q(q)?;
    ensure(q > -1.0, || "r is not used when q = -1".into())?;
    ensure(r > 1.0, || format!("r must exceed 1, got {r}"))?;
    let alpha = (q_prime + eta2).max(eta3);
    let g = gamma_for(q, alpha, r);
    Ok(DiscreteExponentChoice { alpha, gamma_tilde: g, r: Some(r), rho: rho(alpha, eta2, g, q), sigma_tilde: sigma_tilde(eta1, q, q_prime) })
}

/// Discrete sample size `Psi(Delta, eps, delta)` with automatically chosen
/// exponents.
#[allow(clippy::too_many_arguments)]
pub fn sample_size_discrete(
    req: &PacRequest,
    delta_step: f64,
    eta1: f64,
    q: f64,
    q_prime: f64,
    eta2: f64,
    eta3: f64,
    consts: &CalibrationConstants,
) -> Result<(f64, DiscreteExponentChoice)> {
    let choice = choose_discrete_exponents(q, q_prime, eta1, eta2, eta3)?;
    Ok((sample_size_discrete_for(req, delta_step, &choice, consts)?, choice))
}

pub fn sample_size_discrete_for(
    req: &PacRequest,
    delta_step: f64,
    choice: &DiscreteExponentChoice,
    consts: &CalibrationConstants,
) -> Result<f64> {
    let PacRequest { epsilon, delta } = *req;
    let d = consts.d_frak.value;
    ensure(delta_step > 0.0, || format!("sampling step must be positive, got {delta_step}"))?;
    if !(delta < (-2.0f64).exp()) {
        return Err(Error::Regime(format!("discrete sample size needs delta < e^-2, got {delta}")));
    }
    let cap = epsilon / (3.0 * E * d);
    if !(delta_step < cap) {
        return Err(Error::Regime(format!("sampling step {delta_step} must be below eps/(3eD) = {cap}")));
    }
    let l = (1.0 / delta).ln();
    let inner = (delta_step * l.powf(choice.rho)).max(l.powf(choice.sigma_tilde));
    Ok((3.0 * E * d * inner / epsilon).powi(2) / delta_step)
}

/// `D (sqrt(n) Delta^{3/2} + Delta p^rho + p^sigma)`.
pub fn discrete_moment_bound(
    n: f64,
    delta_step: f64,
    p: f64,
    consts: &CalibrationConstants,
    choice: &DiscreteExponentChoice,
) -> Result<f64> {
    ensure(n >= 1.0, || format!("n must be >= 1, got {n}"))?;
    ensure(delta_step > 0.0, || "sampling step must be positive".into())?;
    ensure(p >= 2.0, || format!("p must be >= 2, got {p}"))?;
    Ok(consts.d_frak.value
        * (n.sqrt() * delta_step.powf(1.5) + delta_step * p.powf(choice.rho) + p.powf(choice.sigma_tilde)))
}

pub fn kappa(q: f64, eta: f64) -> Result<f64> {
    check_q(q)?;
    ensure((0.0..=1.0).contains(&eta), || format!("eta must lie in [0, 1], got {eta}"))?;
    let qp = q_plus(q);
    Ok(2.0 * (1.0 - qp) / (6.0 * eta + 2.0 * q + 3.0 - qp))
}

/// Minimal observation horizon for the restricted-eigenvalue event.
#[allow(clippy::too_many_arguments)]
pub fn lasso_t0(eps0: f64, s: usize, c0: f64, c: f64, q: f64, eta: f64, d: usize, e_inf: f64) -> Result<f64> {
    ensure(eps0 > 0.0 && eps0 < 1.0, || format!("eps0 must lie in (0, 1), got {eps0}"))?;
    ensure(s >= 1 && d >= 1, || "s and d must be >= 1".into())?;
    ensure(e_inf > 0.0, || "e_inf must be positive".into())?;
    let k = kappa(q, eta)?;
    let s2 = 2.0 * s as f64;
    let log_count = s2 * 21f64.ln() + (d as f64).ln().min(s2 * (E * d as f64 / s2).ln());
    Ok((log_count - eps0.ln()).powf(2.0 / k) * 18f64.powi(2) * (c0 + 2.0).powi(2) * E * E * c * c / (e_inf * e_inf))
}

/// `2 sqrt((2 D_inf + e_inf)/T log(6N/eps0))`.
///
/// `eps0` is only required to be positive: the logarithm stays meaningful as
/// long as `6N > eps0`.
pub fn lasso_lambda_min(t: f64, n: usize, eps0: f64, d_inf: f64, e_inf: f64) -> Result<f64> {
    ensure(t > 0.0 && n >= 1 && eps0 > 0.0, || "need T > 0, N >= 1, eps0 > 0".into())?;
    ensure(d_inf > 0.0 && e_inf > 0.0, || "D_inf and e_inf must be positive".into())?;
    let ratio = 6.0 * n as f64 / eps0;
    if !(ratio > 1.0) {
        return Err(Error::Domain(format!("6N/eps0 = {ratio} must exceed 1")));
    }
    Ok(2.0 * ((2.0 * d_inf + e_inf) / t * ratio.ln()).sqrt())
}

/// Inputs of the Langevin PAC tuning rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UlaProblem {
    pub req: PacRequest,
    pub q: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub d: usize,
    pub l_lip: f64,
    pub grad_sup: f64,
    pub consts: CalibrationConstants,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UlaCaps {
    pub unit: f64,
    pub bias: f64,
    pub exponent: f64,
    pub discretisation: f64,
}

impl UlaCaps {
    pub fn min(&self) -> f64 {
        self.unit.min(self.bias).min(self.exponent).min(self.discretisation)
    }
}

/// Chain length and burn-in can exceed `u64`, so they are reported as floats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UlaTuning {
    pub delta_step: f64,
    pub n: f64,
    pub m: f64,
    pub caps: UlaCaps,
    pub choice: DiscreteExponentChoice,
}

impl UlaProblem {
    fn validate(&self) -> Result<()> {
        ensure(self.q > 0.0 && self.q < 1.0, || format!("q must lie in (0, 1), got {}", self.q))?;
        ensure(self.d >= 1, || "d must be >= 1".into())?;
        ensure(self.l_lip >= 0.0 && self.grad_sup >= 0.0, || "L and grad_sup must be >= 0".into())?;
        self.consts.validate()
    }

    pub fn choice(&self) -> Result<DiscreteExponentChoice> {
        choose_discrete_exponents(self.q, 0.0, self.eta1, self.eta2, self.eta3)
    }

    pub fn caps(&self, choice: &DiscreteExponentChoice) -> Result<UlaCaps> {
        let PacRequest { epsilon, delta } = self.req;
        let c = &self.consts;
        let expo = (1.0 + self.q) / (1.0 - self.q);
        let lc = (4.0 * c.c_burnin.value / delta).ln();
        if !(lc > 0.0) {
            return Err(Error::Regime(format!("log(4C/delta) = {lc} must be positive")));
        }
        let denom = 2.0
            * (1.0 + self.grad_sup)
            * self.d as f64
            * self.l_lip
            * self.l_lip
            * ((4.0 / delta).ln().powf(2.0 * choice.sigma_tilde)
                + epsilon * epsilon * (2.0 + lc.powf(expo) / c.iota_dd.value));
        Ok(UlaCaps {
            unit: 1.0,
            bias: epsilon / (3.0 * E * c.d_frak.value),
            exponent: (1.0 / delta).ln().powf(choice.sigma_tilde - choice.rho),
            discretisation: (delta * epsilon).powi(2) / denom,
        })
    }

    /// `max(1, ceil(Delta^{-1} log(4C/delta)^{(1+q)/(1-q)} / iota''))`.
    pub fn burnin_floor(&self, delta_step: f64) -> f64 {
        let lc = (4.0 * self.consts.c_burnin.value / self.req.delta).ln();
        (lc.powf((1.0 + self.q) / (1.0 - self.q)) / (delta_step * self.consts.iota_dd.value)).ceil().max(1.0)
    }

    /// Lists every tuning condition that `(delta_step, n, m)` violates.
    pub fn violations(&self, delta_step: f64, n: f64, m: f64) -> Result<Vec<String>> {
        let choice = self.choice()?;
        let caps = self.caps(&choice)?;
        let mut out = Vec::new();
        for (name, cap) in [("1", caps.unit), ("eps/(3eD)", caps.bias), ("log-exponent", caps.exponent)] {
            if !(delta_step < cap) {
                out.push(format!("step {delta_step} not below cap {name} = {cap}"));
            }
        }
        if !(delta_step <= caps.discretisation) {
            out.push(format!("step {delta_step} above discretisation cap {}", caps.discretisation));
        }
        let quarter = PacRequest { delta: self.req.delta / 4.0, ..self.req };
        match sample_size_discrete_for(&quarter, delta_step, &choice, &self.consts) {
            Ok(psi) if n < psi.ceil() => out.push(format!("n = {n} below required {}", psi.ceil())),
            Ok(_) => {}
            Err(e) => out.push(e.to_string()),
        }
        let mf = self.burnin_floor(delta_step);
        if m < mf {
            out.push(format!("m = {m} below required {mf}"));
        }
        Ok(out)
    }

    pub fn tune(&self) -> Result<UlaTuning> {
        self.validate()?;
        let choice = self.choice()?;
        let caps = self.caps(&choice)?;
        let delta_step = 0.9 * caps.min();
        if !(delta_step > 0.0 && delta_step.is_finite()) {
            return Err(Error::Regime(format!("no admissible sampling step: caps {caps:?}")));
        }
        let quarter = PacRequest { delta: self.req.delta / 4.0, ..self.req };
        let n = sample_size_discrete_for(&quarter, delta_step, &choice, &self.consts)?.ceil();
        let m = self.burnin_floor(delta_step);
        if !(n.is_finite() && m.is_finite()) {
            return Err(Error::Regime(format!("tuned chain length overflows: n = {n}, m = {m}")));
        }
        Ok(UlaTuning { delta_step, n, m, caps, choice })
    }
}

#[allow(clippy::too_many_arguments)]
pub fn ula_tuning(
    req: &PacRequest,
    q: f64,
    eta1: f64,
    eta2: f64,
    eta3: f64,
    d: usize,
    l_lip: f64,
    grad_sup: f64,
    consts: &CalibrationConstants,
) -> Result<UlaTuning> {
    UlaProblem { req: *req, q, eta1, eta2, eta3, d, l_lip, grad_sup, consts: *consts }.tune()
}

/// Total-variation bound between the chain after `n` steps and the target.
#[allow(clippy::too_many_arguments)]
pub fn ula_tv_bound(
    n: f64,
    delta_step: f64,
    nu_vq: f64,
    q: f64,
    d: usize,
    l_lip: f64,
    grad_sup: f64,
    consts: &CalibrationConstants,
) -> Result<f64> {
    ensure(nu_vq >= 1.0, || format!("nu(V_q) must be >= 1, got {nu_vq}"))?;
    ensure(q > -1.0 && q < 1.0, || format!("q must lie in (-1, 1), got {q}"))?;
    ensure(n >= 0.0 && delta_step > 0.0, || "need n >= 0 and a positive step".into())?;
    let mixing = consts.c_frak.value * nu_vq * (-(consts.iota_dd.value * n * delta_step).powf((1.0 - q) / (1.0 + q))).exp();
    let disc = ((1.0 + grad_sup * grad_sup) * d as f64 * l_lip * l_lip * n * delta_step * delta_step / 2.0).sqrt();
    Ok(mixing + disc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn rate_exponent_examples() {
        assert_eq!(rate_exponent(0.0, 0.0, 7.0), 1.0);
        assert_eq!(rate_exponent(0.0, 0.5, 7.0), 0.5);
        assert_eq!(rate_exponent(1.0, 0.0, 1.0), 3.5);
    }

    #[test]
    fn cattiaux_examples() {
        assert!(rel(cattiaux_c(0.0, 1.0).unwrap(), 0.5) < 1e-15);
        assert!(rel(cattiaux_c(-0.5, 1.0).unwrap(), 0.5) < 1e-15);
        assert!(rel(cattiaux_c(0.5, 1.0).unwrap(), 3f64.sqrt() / 2.0) < 1e-14);
        assert!(cattiaux_c(0.0, 0.0).is_err());
    }

    #[test]
    fn continuous_regimes() {
        let c = CalibrationConstants::default();
        let bad = PacRequest::new(0.1, 0.2).unwrap();
        assert!(matches!(sample_length_continuous(&bad, 1.0, 0.0, 1.0, 1.0, &c), Err(Error::Regime(_))));
        let bad = PacRequest::new(0.1, 0.9).unwrap();
        assert!(matches!(sample_length_continuous(&bad, 0.0, 0.0, 1.0, 1.0, &c), Err(Error::Regime(_))));
    }

    #[test]
    fn forced_r_examples() {
        let a = choose_discrete_exponents_with_r(0.0, 1.0, 1.0, 1.0, 0.0, 2.0).unwrap();
        assert_eq!(a.alpha, 2.0);
        assert!((a.gamma_tilde - 5.0).abs() < 1e-5);
        assert!((a.rho - 5.0).abs() < 1e-5);
        let b = choose_discrete_exponents_with_r(0.0, 0.0, 0.0, 0.0, 0.0, 2.0).unwrap();
        assert_eq!(b.alpha, 0.0);
        assert!((b.gamma_tilde - 3.0).abs() < 1e-5);
        assert!((b.rho - 2.0).abs() < 1e-5);
    }

    #[test]
    fn exponential_case_has_no_r() {
        let c = choose_discrete_exponents(-1.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(c.r, None);
        assert_eq!(c.gamma_tilde, c.alpha);
        assert!(c.is_feasible(-1.0));
    }

    #[test]
    fn grid_contains_r_two() {
        assert!((0..=379u32).any(|k| (105 + 5 * k) as f64 / 100.0 == 2.0));
    }

    #[test]
    fn discrete_step_cap() {
        let c = CalibrationConstants::default();
        let req = PacRequest::new(0.1, (-4.0f64).exp()).unwrap();
        let cap = 0.1 / (3.0 * E);
        assert!(matches!(sample_size_discrete(&req, cap, 1.0, 0.0, 1.0, 1.0, 0.0, &c), Err(Error::Regime(_))));
    }

    #[test]
    fn kappa_examples() {
        assert!(rel(kappa(0.0, 0.0).unwrap(), 2.0 / 3.0) < 1e-15);
        assert_eq!(kappa(-1.0, 0.0).unwrap(), 2.0);
        assert!(rel(kappa(0.5, 1.0).unwrap(), 1.0 / 9.5) < 1e-15);
    }

    #[test]
    fn lambda_min_domain() {
        assert!(rel(lasso_lambda_min(3.0, 1, 6.0 / E, 1.0, 1.0).unwrap(), 2.0) < 1e-15);
        assert!(matches!(lasso_lambda_min(3.0, 1, 6.0, 1.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn tv_bound_at_zero_steps() {
        let c = CalibrationConstants::default();
        assert_eq!(ula_tv_bound(0.0, 0.1, 3.0, 0.5, 1, 1.0, 1.0, &c).unwrap(), 3.0);
    }

    #[test]
    fn ula_tuning_rejects_large_delta() {
        let c = CalibrationConstants::default();
        let req = PacRequest::new(0.1, 0.9).unwrap();
        assert!(matches!(ula_tuning(&req, 0.5, 2.0, 1.0, 0.0, 1, 1.0, 1.0, &c), Err(Error::Regime(_))));
    }

    #[test]
    fn tuned_values_pass_their_own_checks() {
        let c = CalibrationConstants::default();
        let p = UlaProblem { req: PacRequest::new(0.1, 0.05).unwrap(), q: 0.5, eta1: 2.0, eta2: 1.0, eta3: 0.0, d: 1, l_lip: 1.0, grad_sup: 1.0, consts: c };
        let t = p.tune().unwrap();
        assert!(p.violations(t.delta_step, t.n, t.m).unwrap().is_empty());
        assert!(!p.violations(t.delta_step * 2.0, t.n, t.m).unwrap().is_empty());
        assert!(!p.violations(t.delta_step, t.n * 0.5, t.m).unwrap().is_empty());
    }
}
