mod common;

use common::bvn_quadrature;
use exset::bvn::{norm_cdf, phi2, rho_parts, std_phi2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn phi2_matches_quadrature_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let s1 = rng.random_range(0.3..2.0f64);
        let s2 = rng.random_range(0.3..2.0f64);
        let r = rng.random_range(-0.99..0.99f64);
        let c = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let sigma = [[s1 * s1, r * s1 * s2], [r * s1 * s2, s2 * s2]];
        let got = phi2(c, sigma).unwrap();
        let want = bvn_quadrature(c[0] / s1, c[1] / s2, r);
        worst = worst.max((got - want).abs());
    }
    assert!(worst < 1e-8, "max deviation {worst:e}");
}

#[test]
fn arcsine_law_at_origin() {
    for i in 0..=200 {
        let r = -1.0 + i as f64 / 100.0;
        let want = 0.25 + r.asin() / (2.0 * std::f64::consts::PI);
        assert!((std_phi2(0.0, 0.0, r) - want).abs() < 1e-10, "r = {r}");
    }
}

#[test]
fn rho_parts_sums_two_orthants() {
    let c = [0.4, -0.2];
    let s = [[1.0, 0.3], [0.3, 0.5]];
    let want = phi2(c, s).unwrap() + phi2([-c[0], -c[1]], s).unwrap();
    assert!((rho_parts(c, s).unwrap() - want).abs() < 1e-15);
}

proptest! {
    #[test]
    fn bounded_by_marginals(h in -6.0..6.0f64, k in -6.0..6.0f64, r in -1.0..1.0f64) {
        let p = std_phi2(h, k, r);
        let (a, b) = (norm_cdf(h), norm_cdf(k));
        // Fréchet bounds
        prop_assert!(p >= (a + b - 1.0).max(0.0) - 1e-12);
        prop_assert!(p <= a.min(b) + 1e-12);
    }

    #[test]
    fn symmetric_in_arguments(h in -5.0..5.0f64, k in -5.0..5.0f64, r in -0.999..0.999f64) {
        prop_assert!((std_phi2(h, k, r) - std_phi2(k, h, r)).abs() < 1e-14);
    }

    #[test]
    fn monotone_in_correlation(h in -3.0..3.0f64, k in -3.0..3.0f64, r in -0.98..0.98f64) {
        prop_assert!(std_phi2(h, k, r + 0.01) >= std_phi2(h, k, r) - 1e-14);
    }
}
