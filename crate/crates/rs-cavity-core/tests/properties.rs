use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rs_cavity_core::estimator::{compute_overlaps, corrected_nuisance, mse_decomposition};
use rs_cavity_core::kernels::{logit_proximal, numeric_proximal, weibull_logdensity, weibull_proximal, NuisanceParams};
use rs_cavity_core::population::{alpha_squared, build_population};
use rs_cavity_core::quadrature::{make_rule, RuleKind};
use rs_cavity_core::special::{lambert_w0, lambert_w0_log, solve_tanh_fixed_point};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn logit_prox_stationary_and_matches_bisection(x in -10.0f64..10.0, mu2 in 0.01f64..20.0, up in any::<bool>()) {
        let t = if up { 1.0 } else { -1.0 };
        let xi = logit_proximal(x, mu2, t).unwrap();
        let resid = (xi - x) / mu2 - (t - xi.tanh());
        prop_assert!(resid.abs() <= 1e-10, "residual {resid}");
        let reference = numeric_proximal(x, mu2, |s| t - s.tanh());
        prop_assert!((xi - reference).abs() <= 1e-8);
    }

    #[test]
    fn logit_prox_is_monotone(x in -10.0f64..10.0, dx in 1e-3f64..5.0, mu2 in 0.01f64..20.0) {
        let a = logit_proximal(x, mu2, 1.0).unwrap();
        let b = logit_proximal(x + dx, mu2, 1.0).unwrap();
        prop_assert!(b > a);
    }

    #[test]
    fn weibull_prox_stationary_and_matches_bisection(x in -8.0f64..4.0, mu2 in 0.01f64..10.0, lh in -6.0f64..4.0) {
        let h = lh.exp();
        let xi = weibull_proximal(x, mu2, h).unwrap();
        let resid = (xi - x) / mu2 - (1.0 - h * xi.exp());
        prop_assert!(resid.abs() <= 1e-10 * (1.0 + h * xi.exp()), "residual {resid}");
        let reference = numeric_proximal(x, mu2, |s| 1.0 - h * s.exp());
        prop_assert!((xi - reference).abs() <= 1e-8);
    }

    #[test]
    fn lambert_w_inverts(lx in -30.0f64..20.0) {
        let x = 10f64.powf(lx / 3.0);
        let w = lambert_w0(x).unwrap();
        prop_assert!((w * w.exp() - x).abs() <= 1e-12 * x.max(1e-300) || ((w + w.ln()) - x.ln()).abs() <= 1e-12);
        prop_assert!((lambert_w0_log(x.ln()) - w).abs() <= 1e-12 * w.max(1e-300));
    }

    #[test]
    fn tanh_fixed_point_residual(a in -50.0f64..50.0, b in 0.0f64..50.0) {
        let x = solve_tanh_fixed_point(a, b).unwrap();
        prop_assert!((x + b * x.tanh() - a).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn alpha_squared_scaling_law(seed in any::<u64>(), p in 1usize..25, lc in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = build_population(p, (0.1, 10.0), 1.0, &mut rng).unwrap();
        let c = 10f64.powf(lc);
        let scaled = alpha_squared(&(&spec.a0 * c)).unwrap();
        prop_assert!((scaled - spec.alpha2 / c).abs() <= 1e-12 * spec.alpha2 / c);
    }

    #[test]
    fn population_hits_target_signal(seed in any::<u64>(), p in 1usize..30, s in 0.2f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = build_population(p, (0.1, 10.0), s, &mut rng).unwrap();
        let s2 = spec.beta0.dot(&(&spec.a0 * &spec.beta0));
        prop_assert!((s2.sqrt() - s).abs() <= 1e-12 * s);
    }

    #[test]
    fn mse_decomposition_identity(seed in any::<u64>(), m in 1usize..40, p in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| DVector::<f64>::from_fn(p, |_, _| rand::Rng::random_range(rng, -3.0..3.0));
        let beta0 = draw(&mut rng);
        let hats: Vec<_> = (0..m).map(|_| draw(&mut rng)).collect();
        let d = mse_decomposition(&hats, &beta0).unwrap();
        prop_assert!((d.mse - d.variance - d.bias2).abs() <= 64.0 * f64::EPSILON * d.mse.max(1e-300));
    }

    #[test]
    fn overlaps_recover_construction(seed in any::<u64>(), p in 2usize..20, k in -2.0f64..2.0, v in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = build_population(p, (0.1, 10.0), 1.0, &mut rng).unwrap();
        let mut u = DVector::<f64>::from_fn(p, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let b0 = &spec.beta0;
        u -= b0 * (u.dot(b0) / b0.norm_squared());
        let beta_hat = b0 * k + &u * v;
        let ov = compute_overlaps(&beta_hat, &spec).unwrap();
        prop_assert!((ov.k_n - k).abs() <= 1e-12 * (1.0 + k.abs()));
        let expect_v = v * u.norm() / spec.alpha2.sqrt();
        prop_assert!((ov.v_n - expect_v).abs() <= 1e-12 * (1.0 + expect_v));
        prop_assert!(ov.v_n >= 0.0);
    }

    #[test]
    fn nuisance_correction_inverts(phi0 in -2.0f64..2.0, sigma0 in 0.2f64..3.0, h in -0.5f64..0.5, g in 0.3f64..1.5) {
        let fit = NuisanceParams { phi: phi0 + h * sigma0, sigma: g * sigma0 };
        let c = corrected_nuisance(fit, h, g).unwrap();
        prop_assert!((c.phi - phi0).abs() <= 1e-12 * (1.0 + phi0.abs()));
        prop_assert!((c.sigma - sigma0).abs() <= 1e-12 * sigma0);
    }

    #[test]
    fn hermite_rule_integrates_polynomials(order in 2usize..60, c in prop::collection::vec(-2.0f64..2.0, 4)) {
        // Exact for degree < 2 * order; reference moments 1, 0, 1, 0 for degrees 0..3.
        let r = make_rule(RuleKind::GaussHermiteNormal, order).unwrap();
        let got = r.expect(|z| c[0] + c[1] * z + c[2] * z * z + c[3] * z * z * z);
        prop_assert!((got - (c[0] + c[2])).abs() <= 1e-12 * (1.0 + c[0].abs() + c[2].abs()));
    }
}

/// The Weibull density integrates to one in `t` for any predictor and nuisance.
#[test]
fn weibull_density_normalized() {
    for &(y, phi, sigma) in &[(0.0, 0.0, 1.0), (1.3, -0.4, 0.7), (-2.0, 1.0, 2.5)] {
        let nuis = NuisanceParams { phi, sigma };
        // Integrate over u = log t with the trapezoid rule.
        let (lo, hi, m) = (-60.0, 20.0, 200_000);
        let h = (hi - lo) / m as f64;
        let mut total = 0.0;
        for i in 0..=m {
            let u: f64 = lo + i as f64 * h;
            let f = (weibull_logdensity(u.exp(), y, nuis).unwrap() + u).exp();
            total += if i == 0 || i == m { 0.5 * f } else { f };
        }
        assert!((total * h - 1.0).abs() < 1e-9, "{total}");
    }
}

#[test]
fn reference_moments() {
    let n = make_rule(RuleKind::GaussHermiteNormal, 40).unwrap();
    for (k, m) in [(2, 1.0), (4, 3.0), (6, 15.0)] {
        assert!((n.expect(|z| z.powi(k)) - m).abs() <= 1e-10);
    }
    let e = make_rule(RuleKind::GaussLaguerreExp1, 40).unwrap();
    for (k, m) in [(1, 1.0), (2, 2.0)] {
        assert!((e.expect(|z| z.powi(k)) - m).abs() <= 1e-10);
    }
}
