use std::sync::Arc;

use ergodic_lab::exec::{self, Execution};
use ergodic_lab::rng;
use ergodic_lab::sde::{self, Diffusion, DiffusionModel, ErgodicityParams, StationaryMethod, VectorField};
use ergodic_lab::Error;
use proptest::prelude::*;

fn ou() -> DiffusionModel {
    DiffusionModel::ornstein_uhlenbeck(1, 1.0, 2f64.sqrt()).unwrap()
}

fn noiseless(dim: usize, drift: VectorField) -> DiffusionModel {
    let erg = ErgodicityParams::new(-1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0).unwrap();
    DiffusionModel::new("noiseless", dim, drift, Diffusion::scaled_identity(dim, 0.0), erg).unwrap()
}

fn linear_noiseless(a: Vec<f64>) -> DiffusionModel {
    let d = (a.len() as f64).sqrt().round() as usize;
    let erg = ErgodicityParams::new(-1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0).unwrap();
    DiffusionModel::linear("lin", a, vec![0.0; d * d], erg).unwrap()
}

#[test]
fn ou_mean_decays_like_exp_minus_t() {
    let model = ou();
    let ends: Vec<f64> = exec::map_indices(10_000, Execution::default(), |i| {
        let mut r = rng::stream(11, i);
        sde::drive(&model, &[1.0], 1e-3, 2000, 1, &mut r, |_, _| Ok(())).unwrap()[0]
    });
    let (m, se) = exec::mean_and_stderr(&ends);
    let target = (-2f64).exp();
    assert!((m - target).abs() < 3.0 * se, "mean {m} se {se}");
}

#[test]
fn exact_stationary_draws_are_standard_normal() {
    let model = ou();
    let draws: Vec<f64> = (0..10_000u64)
        .map(|i| {
            let mut r = rng::stream(5, i);
            sde::sample_stationary_with(&model, StationaryMethod::Exact, 1e-3, &mut r).unwrap()[0]
        })
        .collect();
    let (m, _) = exec::mean_and_stderr(&draws);
    let v = exec::sample_variance(&draws);
    assert!(m.abs() < 0.03, "{m}");
    assert!((v - 1.0).abs() < 0.05, "{v}");
}

#[test]
fn burnin_of_a_contraction_returns_near_zero() {
    let model = noiseless(1, Arc::new(|x, out| out[0] = -x[0]));
    let x = sde::sample_stationary(&model, StationaryMethod::Burnin { t_burn: 20.0 }, 3).unwrap();
    assert!(x[0].abs() < 1e-6);
    assert!(matches!(sde::sample_stationary(&model, StationaryMethod::Exact, 3), Err(Error::UnsupportedMethod(_))));
}

#[test]
fn stationary_draw_is_reproducible() {
    let a = sde::sample_stationary(&ou(), StationaryMethod::Exact, 42).unwrap();
    let b = sde::sample_stationary(&ou(), StationaryMethod::Exact, 42).unwrap();
    assert_eq!(a, b);
}

#[test]
fn trajectories_are_bit_reproducible() {
    let model = DiffusionModel::ornstein_uhlenbeck(3, 0.7, 1.3).unwrap();
    let a = sde::euler_maruyama(&model, &[1.0, -2.0, 0.5], 1e-2, 500, 9, 4).unwrap();
    let b = sde::euler_maruyama(&model, &[1.0, -2.0, 0.5], 1e-2, 500, 9, 4).unwrap();
    assert_eq!(a, b);
    let c = sde::euler_maruyama(&model, &[1.0, -2.0, 0.5], 1e-2, 500, 9, 5).unwrap();
    assert_ne!(a.raw(), c.raw());
}

#[test]
fn time_grid_is_implicit() {
    let t = sde::euler_maruyama(&ou(), &[0.0], 0.1, 10, 1, 0).unwrap();
    assert_eq!(t.len(), 11);
    assert_eq!(t.time(7), 7.0 * 0.1);
    assert_eq!(t.horizon(), 10.0 * 0.1);
}

#[test]
fn replicate_streams_are_uncorrelated() {
    let n = 100_000;
    let mut a = rng::stream(2024, 3);
    let mut b = rng::stream(2024, 4);
    let (mut sab, mut sa, mut sb, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        let x = rng::normal(&mut a);
        let y = rng::normal(&mut b);
        sab += x * y;
        sa += x;
        sb += y;
        saa += x * x;
        sbb += y * y;
    }
    let nf = n as f64;
    let cov = sab / nf - sa * sb / (nf * nf);
    let corr = cov / ((saa / nf - (sa / nf).powi(2)) * (sbb / nf - (sb / nf).powi(2))).sqrt();
    assert!(corr.abs() < 0.02, "{corr}");
}

#[test]
fn frozen_path_and_single_step() {
    let frozen = noiseless(1, Arc::new(|_, out| out[0] = 0.0));
    let t = sde::euler_maruyama(&frozen, &[3.0], 0.5, 40, 0, 0).unwrap();
    assert!(t.states().all(|x| x[0] == 3.0));
    let decay = noiseless(1, Arc::new(|x, out| out[0] = -x[0]));
    let t = sde::euler_maruyama(&decay, &[1.0], 0.1, 1, 0, 0).unwrap();
    assert!((t.state(1)[0] - 0.9).abs() < 1e-15);
}

#[test]
fn explosive_drift_hits_the_divergence_guard() {
    let model = noiseless(1, Arc::new(|x, out| out[0] = x[0] * x[0]));
    match sde::euler_maruyama(&model, &[1.0], 0.5, 1000, 0, 0) {
        Err(Error::Divergence { step }) => assert!(step > 0 && step < 1000),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn drift_condition_examples() {
    let inward = noiseless(2, Arc::new(|x, out| {
        out[0] = -x[0];
        out[1] = -x[1];
    }));
    let mut inward = inward;
    inward.ergodicity = ErgodicityParams::new(-1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0).unwrap();
    let r = sde::check_drift_condition(&inward, &[1.0, 2.0, 5.0], 32).unwrap();
    assert!(r.holds);
    assert!(r.worst_margin.abs() < 1e-12);

    let mut outward = noiseless(2, Arc::new(|x, out| {
        out[0] = x[0];
        out[1] = x[1];
    }));
    outward.ergodicity = ErgodicityParams::new(0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0).unwrap();
    let r = sde::check_drift_condition(&outward, &[1.0], 8).unwrap();
    assert!(!r.holds);
    let w = r.witness.unwrap();
    assert!((sde::norm(&w) - 1.0).abs() < 1e-12);

    let mut saturating = noiseless(3, Arc::new(|x, out| {
        let n = sde::norm(x);
        for (o, v) in out.iter_mut().zip(x) {
            *o = -v / (1.0 + n);
        }
    }));
    saturating.ergodicity = ErgodicityParams::new(0.0, 1.0, 1.0, 0.5, 1.0, 1.0, 1.0).unwrap();
    assert!(sde::check_drift_condition(&saturating, &[2.0, 10.0], 32).unwrap().holds);
}

#[test]
fn ou_is_elliptic_and_satisfies_its_condition() {
    let model = DiffusionModel::ornstein_uhlenbeck(2, 1.5, 0.8).unwrap();
    assert!(model.check_ellipticity(&[0.5, 3.0], 16).unwrap().holds);
    assert!(sde::check_drift_condition(&model, &[0.5, 3.0, 30.0], 16).unwrap().holds);
}

fn mat_pow_apply(a: &[f64], d: usize, step: f64, n: usize, x0: &[f64]) -> Vec<f64> {
    // Repeated multiplication by (I + step A) written out by hand.
    let mut x = x0.to_vec();
    for _ in 0..n {
        let mut y = x.clone();
        for i in 0..d {
            for j in 0..d {
                y[i] += step * a[i * d + j] * x[j];
            }
        }
        x = y;
    }
    x
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn euler_is_exact_on_linear_noiseless_systems(
        d in 1usize..=5,
        entries in proptest::collection::vec(-1.0f64..1.0, 25),
        x0 in proptest::collection::vec(-2.0f64..2.0, 5),
        n in 1usize..2000,
    ) {
        let a: Vec<f64> = entries[..d * d].to_vec();
        let model = linear_noiseless(a.clone());
        let step = 1e-3;
        let t = sde::euler_maruyama(&model, &x0[..d], step, n, 0, 0).unwrap();
        let want = mat_pow_apply(&a, d, step, n, &x0[..d]);
        let got = t.state(n);
        let scale = sde::norm(&want).max(1e-300);
        for i in 0..d {
            prop_assert!((got[i] - want[i]).abs() <= 1e-10 * scale, "{:?} vs {:?}", got, want);
        }
    }

    #[test]
    fn drift_check_agrees_with_analytic_sign(k in 0.1f64..3.0, r in 0.1f64..3.0, q in -1.0f64..0.9) {
        // For b(x) = -k x the radial margin at radius rho is -k rho + r rho^(-q).
        let radii = [0.5, 1.0, 2.0, 4.0];
        let mut model = noiseless(2, Arc::new(move |x, out| {
            out[0] = -k * x[0];
            out[1] = -k * x[1];
        }));
        model.ergodicity = ErgodicityParams::new(q, 1.0, 0.0, r, 1.0, 1.0, 1.0).unwrap();
        let worst = radii.iter().map(|rho| -k * rho + r * rho.powf(-q)).fold(f64::NEG_INFINITY, f64::max);
        let rep = sde::check_drift_condition(&model, &radii, 8).unwrap();
        prop_assume!(worst.abs() > 1e-9);
        prop_assert_eq!(rep.holds, worst < 0.0);
        prop_assert!((rep.worst_margin - worst).abs() < 1e-9 * (1.0 + worst.abs()));
    }
}
