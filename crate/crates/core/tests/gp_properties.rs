mod common;

use std::sync::Arc;

use common::{random_gp, response, separated, DirectKriging};
use exset::designs::{maximin_lhs, Design};
use exset::gp::{
    concentrated_loglik, fit_mle, kriging_weights, posterior, residual_variance, update_posterior, GpState,
    KrigingMode, Observations, PosteriorGp,
};
use exset::testfunctions::Benchmark;
use exset::{KernelFamily, KernelSpec, MeanSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn probe(rng: &mut impl Rng, dim: usize) -> Vec<Vec<f64>> {
    if dim == 2 {
        (0..100).map(|k| vec![(k / 10) as f64 / 9.0, (k % 10) as f64 / 9.0]).collect()
    } else {
        (0..100).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
    }
}

fn model(rng: &mut impl Rng, x: &[Vec<f64>], known: bool) -> (KernelSpec, Option<f64>, Arc<PosteriorGp>) {
    let dim = x[0].len();
    let family = if rng.random::<bool>() { KernelFamily::Matern32 } else { KernelFamily::Matern52 };
    let ls: Vec<f64> = (0..dim).map(|_| rng.random_range(0.2..0.5)).collect();
    let kernel = KernelSpec::new(family, rng.random_range(0.5..2.0), ls).unwrap();
    let known_mean = known.then_some(0.3);
    let mean = known_mean.map(MeanSpec::known).unwrap_or_else(MeanSpec::unknown);
    let obs = Observations::from_fn(Design::from_rows(x).unwrap(), |p| Ok(response(p))).unwrap();
    (kernel.clone(), known_mean, Arc::new(posterior(obs, kernel, mean).unwrap()))
}

#[test]
fn sequential_updates_match_direct_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..20 {
        let dim = 1 + case % 3;
        let n = rng.random_range(5..10);
        let x = separated(&mut rng, dim, n, 0.08, &[]);
        let (kernel, known, gp) = model(&mut rng, &x, case % 2 == 0);
        let e = separated(&mut rng, dim, 5, 0.08, &x);
        let tol = 1e-8 * kernel.variance();

        let mut observed = GpState::new(gp.clone());
        let mut pseudo = GpState::new(gp.clone());
        for p in &e {
            observed = update_posterior(&observed, p, Some(response(p))).unwrap();
            pseudo = update_posterior(&pseudo, p, None).unwrap();
        }
        let mut all = x.clone();
        all.extend(e.iter().cloned());
        let y: Vec<f64> = all.iter().map(|p| response(p)).collect();
        let direct = DirectKriging::new(kernel.clone(), all, &y, known);

        let grid = probe(&mut rng, dim);
        for a in &grid {
            assert!((observed.mean(a).unwrap() - direct.mean(a)).abs() <= tol, "case {case} mean");
            for b in grid.iter().step_by(7) {
                let want = direct.cov(a, b);
                assert!((observed.cov(a, b).unwrap() - want).abs() <= tol, "case {case} cov");
                assert!((pseudo.cov(a, b).unwrap() - want).abs() <= tol, "case {case} pseudo cov");
            }
            // pseudo points leave the mean untouched
            assert!((pseudo.mean(a).unwrap() - gp.mean(a).unwrap()).abs() <= tol);
        }
    }
}

#[test]
fn posterior_matches_direct_kriging() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..10 {
        let dim = 1 + case % 3;
        let x = separated(&mut rng, dim, 8, 0.08, &[]);
        let (kernel, known, gp) = model(&mut rng, &x, case % 2 == 1);
        let y: Vec<f64> = x.iter().map(|p| response(p)).collect();
        let direct = DirectKriging::new(kernel.clone(), x, &y, known);
        for a in probe(&mut rng, dim).iter().take(30) {
            assert!((gp.mean(a).unwrap() - direct.mean(a)).abs() <= 1e-9);
            assert!((gp.var(a).unwrap() - direct.cov(a, a)).abs() <= 1e-9 * kernel.variance());
        }
    }
}

#[test]
fn update_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let gp = random_gp(&mut rng, 2, 8, true);
        let e = separated(&mut rng, 2, 2, 0.1, &[]);
        let s = GpState::new(gp.clone());
        let ab = update_posterior(&update_posterior(&s, &e[0], Some(0.4)).unwrap(), &e[1], Some(-0.2)).unwrap();
        let ba = update_posterior(&update_posterior(&s, &e[1], Some(-0.2)).unwrap(), &e[0], Some(0.4)).unwrap();
        for _ in 0..20 {
            let a = [rng.random::<f64>(), rng.random::<f64>()];
            let b = [rng.random::<f64>(), rng.random::<f64>()];
            assert!((ab.mean(&a).unwrap() - ba.mean(&a).unwrap()).abs() < 1e-10);
            assert!((ab.cov(&a, &b).unwrap() - ba.cov(&a, &b).unwrap()).abs() < 1e-10);
        }
    }
}

#[test]
fn far_field_returns_to_prior() {
    let x = Design::explicit(2, vec![0.0, 0.0, 0.02, 0.05, 0.05, 0.01]).unwrap();
    let obs = Observations::from_fn(x, |p| Ok(5.0 + p[0])).unwrap();
    let k = KernelSpec::new(KernelFamily::Matern52, 1.7, vec![0.01, 0.01]).unwrap();
    let gp = posterior(obs, k, MeanSpec::known(-1.0)).unwrap();
    let far = [1.0, 1.0];
    assert!((gp.mean(&far).unwrap() + 1.0).abs() < 1e-12);
    assert!((gp.var(&far).unwrap() - 1.7).abs() < 1e-12);
}

#[test]
fn single_point_simple_kriging() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let known = rng.random::<bool>();
        let gp = random_gp(&mut rng, 2, 6, known);
        let e = [rng.random::<f64>(), rng.random::<f64>()];
        let pred = kriging_weights(&gp, &Design::explicit(2, e.to_vec()).unwrap(), KrigingMode::SimpleKriging).unwrap();
        let x = [rng.random::<f64>(), rng.random::<f64>()];
        let (kex, kee, kxx) = (gp.cov(&e, &x).unwrap(), gp.var(&e).unwrap(), gp.var(&x).unwrap());
        let b = pred.weights(&x).unwrap();
        assert!((b[0] - kex / kee).abs() < 1e-9 * (1.0 + b[0].abs()));
        let s2 = residual_variance(&gp, &pred, &x).unwrap();
        assert!((s2 - (kxx - kex * kex / kee).max(0.0)).abs() < 1e-10);
        let a = pred.trend(&x).unwrap();
        assert!((a - (gp.mean(&x).unwrap() - kex / kee * gp.mean(&e).unwrap())).abs() < 1e-9);
    }
}

#[test]
fn residual_variance_is_joint_conditioning_and_shrinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..10 {
        let gp = random_gp(&mut rng, 2, 8, true);
        let e = separated(&mut rng, 2, 6, 0.08, &[]);
        let probes: Vec<[f64; 2]> = (0..25).map(|_| [rng.random(), rng.random()]).collect();
        let mut state = GpState::new(gp.clone());
        let mut previous = vec![f64::INFINITY; probes.len()];
        for (m, p) in e.iter().enumerate() {
            state.push(p, None).unwrap();
            let em = Design::from_rows(&e[..=m]).unwrap();
            let sk = kriging_weights(&gp, &em, KrigingMode::SimpleKriging).unwrap();
            for (k, x) in probes.iter().enumerate() {
                let s2 = residual_variance(&gp, &sk, x).unwrap();
                assert!((s2 - state.cov(x, x).unwrap().max(0.0)).abs() < 1e-10);
                assert!(s2 <= previous[k] + 1e-12);
                // Var[Z~] + s^2 recovers the posterior variance under simple kriging
                let total = sk.predictor_variance(x).unwrap() + s2;
                assert!((total - gp.var(x).unwrap()).abs() < 1e-9);
                previous[k] = s2;
            }
        }
    }
}

#[test]
fn ordinary_kriging_weights_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let gp = random_gp(&mut rng, 2, 8, true);
    let em = Design::from_rows(&separated(&mut rng, 2, 5, 0.1, &[])).unwrap();
    let ok = kriging_weights(&gp, &em, KrigingMode::OrdinaryKriging).unwrap();
    for _ in 0..20 {
        let x = [rng.random::<f64>(), rng.random::<f64>()];
        assert!((ok.weights(&x).unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert_eq!(ok.trend(&x).unwrap(), 0.0);
    }
}

#[test]
fn mle_beats_true_parameters() {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let truth = [0.25, 0.4];
    let k = KernelSpec::new(KernelFamily::Matern52, 2.0, truth.to_vec()).unwrap();
    let x = maximin_lhs(2, 30, 3, 5).unwrap();
    let rows: Vec<Vec<f64>> = x.rows().map(|r| r.to_vec()).collect();
    let c: Vec<Vec<f64>> = rows.iter().map(|a| rows.iter().map(|b| k.cov(a, b)).collect()).collect();
    let l = common::cholesky(&c).unwrap();
    let u: Vec<f64> = (0..30).map(|_| StandardNormal.sample(&mut rng)).collect();
    let y: Vec<f64> = (0..30).map(|i| 1.0 + (0..=i).map(|j| l[i][j] * u[j]).sum::<f64>()).collect();
    let obs = Observations::new(x, y).unwrap();
    let fit = fit_mle(&obs, KernelFamily::Matern52, (0.01, 2.0), 5, 9).unwrap();
    let (at_truth, _, _) = concentrated_loglik(&obs, KernelFamily::Matern52, &truth, MeanSpec::unknown()).unwrap();
    assert!(fit.loglik >= at_truth - 1e-6, "{} < {}", fit.loglik, at_truth);
}

#[test]
fn branin_leave_one_out_error_is_below_process_scale() {
    let bench = Benchmark::branin();
    let x = maximin_lhs(2, 20, 1, 10).unwrap();
    let obs = Observations::from_fn(x.clone(), |p| bench.eval(p)).unwrap();
    let fit = fit_mle(&obs, KernelFamily::Matern32, (0.01, 2.0), 5, 2).unwrap();
    let mut err = 0.0;
    for i in 0..x.len() {
        let keep: Vec<Vec<f64>> = (0..x.len()).filter(|&j| j != i).map(|j| x.point(j).to_vec()).collect();
        let sub = Observations::from_fn(Design::from_rows(&keep).unwrap(), |p| bench.eval(p)).unwrap();
        let gp = posterior(sub, fit.kernel.clone(), MeanSpec::unknown()).unwrap();
        err += (gp.mean(x.point(i)).unwrap() - obs.y()[i]).abs();
    }
    let mae = err / x.len() as f64;
    assert!(mae < fit.kernel.variance().sqrt(), "MAE {mae}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn posterior_interpolates(seed in any::<u64>(), dim in 1usize..4, n in 2usize..12, known in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = separated(&mut rng, dim, n, 0.05, &[]);
        let (kernel, _, gp) = model(&mut rng, &x, known);
        let s2 = kernel.variance();
        for p in &x {
            prop_assert!((gp.mean(p).unwrap() - response(p)).abs() <= 1e-6 * (1.0 + response(p).abs()));
            prop_assert!(gp.var(p).unwrap() <= 1e-6 * s2);
        }
        for _ in 0..20 {
            let a: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
            prop_assert!(gp.var(&a).unwrap() >= -1e-12);
            prop_assert!((gp.cov(&a, &b).unwrap() - gp.cov(&b, &a).unwrap()).abs() <= 1e-12 * s2);
        }
    }

    #[test]
    fn conditioning_never_increases_variance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gp = random_gp(&mut rng, 2, 6, true);
        let e = [rng.random::<f64>(), rng.random::<f64>()];
        if gp.var(&e).unwrap() > 1e-6 {
            let s = update_posterior(&GpState::new(gp.clone()), &e, None).unwrap();
            for _ in 0..20 {
                let a = [rng.random::<f64>(), rng.random::<f64>()];
                prop_assert!(s.cov(&a, &a).unwrap() <= gp.var(&a).unwrap() + 1e-12);
            }
        }
    }
}
