use mono3d_core::loss_analysis::{
    critical_sigma, linear_fit, loss_grad_wrt_noise, sgd_convergence_sim, var_closed_form, var_monte_carlo,
    LossKind, NoiseLossSpec, SgdSimConfig,
};
use proptest::prelude::*;

fn spec(kind: LossKind, sigma: f64, ell: f64) -> NoiseLossSpec {
    NoiseLossSpec::new(kind, sigma, ell).unwrap()
}

proptest! {
    #[test]
    fn gradients_are_odd(eta in -20.0..20.0f64, ell in 0.1..15.0f64) {
        for kind in LossKind::ALL {
            let s = spec(kind, 1.0, ell);
            prop_assert_eq!(loss_grad_wrt_noise(&s, -eta), -loss_grad_wrt_noise(&s, eta));
        }
    }

    #[test]
    fn dice_variance_bounded_and_decreasing(sigma in 0.01..5.0f64, ell in 0.1..15.0f64, d in 0.01..1.0f64) {
        let v = var_closed_form(&spec(LossKind::Dice, sigma, ell));
        prop_assert!(v > 0.0 && v <= 1.0 / (ell * ell));
        prop_assert!(var_closed_form(&spec(LossKind::Dice, sigma + d, ell)) <= v);
        prop_assert!(var_closed_form(&spec(LossKind::Dice, sigma, ell + d)) < v);
    }

    #[test]
    fn critical_sigma_separates_regimes(ell in 0.2..15.0f64, f in 1.01..3.0f64) {
        let c = critical_sigma(ell).unwrap();
        let above = f * c;
        let below = c / f;
        let dice_above = var_closed_form(&spec(LossKind::Dice, above, ell));
        prop_assert!(dice_above < (above * above).min(1.0));
        let dice_below = var_closed_form(&spec(LossKind::Dice, below, ell));
        prop_assert!(dice_below >= (below * below).min(1.0));
        if ell >= 1.0 {
            prop_assert!(dice_below > below * below);
        }
    }
}

#[test]
fn empirical_gradient_mean_vanishes() {
    for kind in LossKind::ALL {
        let s = spec(kind, 1.0, 4.0);
        let est = var_monte_carlo(&s, 100_000, 5).unwrap();
        assert!(est.variance > 0.0);
    }
    // oddness plus symmetric noise gives a zero mean; check it on samples
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for kind in LossKind::ALL {
        let s = spec(kind, 1.0, 4.0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| loss_grad_wrt_noise(&s, rng.sample::<f64, _>(rand_distr::StandardNormal)))
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(mean.abs() < 4.0 * sd / (n as f64).sqrt(), "{kind}: {mean}");
    }
}

#[test]
fn monte_carlo_agrees_with_closed_form() {
    for kind in LossKind::ALL {
        for sigma in [0.1, 0.5, 1.0, 2.0] {
            for ell in [1.0, 4.0, 12.0] {
                let s = spec(kind, sigma, ell);
                let mc = var_monte_carlo(&s, 1_000_000, 17).unwrap();
                let exact = var_closed_form(&s);
                assert!(
                    (mc.variance - exact).abs() <= 3.0 * mc.se,
                    "{kind} σ={sigma} ℓ={ell}: {} vs {exact} (se {})",
                    mc.variance,
                    mc.se
                );
            }
        }
    }
}

#[test]
fn simulated_deviation_is_linear_in_gradient_variance() {
    let cfg = SgdSimConfig::default();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for kind in LossKind::ALL {
        for sigma in [0.1, 0.5, 1.0, 2.0] {
            let s = spec(kind, sigma, 4.0);
            let r = sgd_convergence_sim(&s, &cfg).unwrap();
            x.push(var_closed_form(&s));
            y.push(r.mean_deviation);
        }
    }
    let (c1, c2, r2) = linear_fit(&x, &y);
    assert!(r2 > 0.99, "R² = {r2}");
    assert!((c1 - cfg.c1()).abs() < 0.05 * cfg.c1(), "c1 {c1} vs {}", cfg.c1());
    assert!((c2 - cfg.c2()).abs() < 0.2 * cfg.c2(), "c2 {c2} vs {}", cfg.c2());
}

#[test]
fn simulation_is_deterministic() {
    let cfg = SgdSimConfig { trials: 500, steps: 100, ..Default::default() };
    let s = spec(LossKind::Dice, 1.0, 4.0);
    assert_eq!(sgd_convergence_sim(&s, &cfg).unwrap(), sgd_convergence_sim(&s, &cfg).unwrap());
}
