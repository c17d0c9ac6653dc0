mod common;

use balancekit::glm::{lambda_path, GlmProblem};
use common::{brute_force_l1, l1_objective, random_instance};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn penalized_fit_matches_brute_force_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..30u64 {
        let n = rng.random_range(8..=30);
        let m = rng.random_range(1..=3);
        let (x, y) = random_instance(1000 + case, n, m);
        let lmax = lambda_path(x.view(), &y, 2, 0.5).unwrap()[0];
        let lambda = lmax * rng.random_range(0.02..0.9);
        let fit = GlmProblem::new(x.view(), &y)
            .fit_logistic_l1(lambda)
            .unwrap();
        assert!(fit.converged, "case {case}");
        let ours = l1_objective(&x, &y, &fit.coefficients, lambda);
        let (best, _) = brute_force_l1(&x, &y, lambda);
        assert!(
            (ours - best).abs() <= 1e-8,
            "case {case}: n={n} m={m} ours {ours} brute {best}"
        );
    }
}

#[test]
fn two_column_example_at_fixed_penalty() {
    let (x, y) = random_instance(7, 20, 2);
    let fit = GlmProblem::new(x.view(), &y).fit_logistic_l1(0.05).unwrap();
    let ours = l1_objective(&x, &y, &fit.coefficients, 0.05);
    let (best, coef) = brute_force_l1(&x, &y, 0.05);
    assert!((ours - best).abs() <= 1e-8, "{ours} vs {best}");
    for (a, b) in fit.coefficients.iter().zip(&coef) {
        assert!((a - b).abs() < 1e-5, "{:?} vs {coef:?}", fit.coefficients);
    }
}

#[test]
fn wide_designs_reach_the_same_minimum() {
    // 3 informative columns repeated past the dense-solver width; duplicates
    // leave the attainable objective unchanged.
    let (x, y) = random_instance(21, 30, 3);
    let copies = 140;
    let wide = ndarray::concatenate(Axis(1), &vec![x.view(); copies]).unwrap();
    assert!(wide.ncols() > 400);
    let lmax = lambda_path(x.view(), &y, 2, 0.5).unwrap()[0];
    let lambda = 0.2 * lmax;
    let fit = GlmProblem::new(wide.view(), &y)
        .fit_logistic_l1(lambda)
        .unwrap();
    assert!(fit.converged);
    let ours = l1_objective(&wide, &y, &fit.coefficients, lambda);
    let (best, _) = brute_force_l1(&x, &y, lambda);
    assert!((ours - best).abs() <= 1e-8, "{ours} vs {best}");

    // subgradient conditions on the wide fit, checked directly
    let mu = fit.predict(wide.view(), None);
    let n = y.len() as f64;
    for (j, col) in wide.columns().into_iter().enumerate() {
        let g: f64 = col
            .iter()
            .zip(&y)
            .zip(&mu)
            .map(|((x, y), m)| x * (y - m))
            .sum::<f64>()
            / n;
        let b = fit.coefficients[j + 1];
        if b == 0.0 {
            assert!(g.abs() <= lambda + 1e-7);
        } else {
            assert!((g - lambda * b.signum()).abs() <= 1e-7);
        }
    }
}

#[test]
fn warm_and_cold_paths_agree_on_a_larger_design() {
    let (x, y) = random_instance(5, 30, 3);
    let x: Array2<f64> =
        ndarray::concatenate(Axis(1), &[x.view(), x.mapv(|v| v * v).view()]).unwrap();
    let path = lambda_path(x.view(), &y, 8, 0.01).unwrap();
    let problem = GlmProblem::new(x.view(), &y);
    let mut warm: Option<Vec<f64>> = None;
    for &l in &path {
        let w = problem.fit_logistic_l1_from(l, warm.as_deref()).unwrap();
        let c = problem.fit_logistic_l1(l).unwrap();
        let ow = l1_objective(&x, &y, &w.coefficients, l);
        let oc = l1_objective(&x, &y, &c.coefficients, l);
        assert!((ow - oc).abs() < 1e-10);
        warm = Some(w.coefficients);
    }
}
