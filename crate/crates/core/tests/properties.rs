use balancekit::balance::{score_residual, score_test};
use balancekit::effects::Estimator;
use balancekit::nuisance::{fit_propensity, OutcomeConfig, OutcomeKind, PropensityConfig};
use balancekit::pipeline::{run_analysis, AnalysisConfig, OracleNuisances};
use balancekit::{Dataset, Error};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_data(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut z: Vec<u8> = (0..n)
        .map(|i| {
            let eta: f64 = (0..p).map(|j| x[[i, j]] * beta[j]).sum();
            u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()))
        })
        .collect();
    z[0] = 0;
    z[1] = 1;
    let r: Vec<f64> = (0..n)
        .map(|i| x.row(i).sum() + f64::from(z[i]) + rng.random::<f64>())
        .collect();
    Dataset::from_columns(x, z, r).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_residual_is_linear_in_the_direction(
        seed in any::<u64>(),
        n in 5usize..40,
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let data = random_data(seed, n, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let h: Vec<f64> = f.iter().zip(&g).map(|(f, g)| a * f + b * g).collect();
        let lhs = score_residual(&data, &scores, &h);
        let rhs = a * score_residual(&data, &scores, &f) + b * score_residual(&data, &scores, &g);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + a.abs() + b.abs()) * 3.0);
    }

    #[test]
    fn solved_score_equations_give_null_statistics(
        seed in any::<u64>(),
        n in 30usize..200,
        p in 1usize..4,
    ) {
        let data = random_data(seed, n, p);
        let model = match fit_propensity(&data, &PropensityConfig { truncation: 0.0, ..PropensityConfig::parametric() }, 0) {
            Ok(m) => m,
            Err(Error::Separation { .. }) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        let mut directions = vec![vec![1.0; n]];
        for j in 0..p {
            directions.push(data.covariate(j).to_vec());
        }
        for f in &directions {
            prop_assert!(score_residual(&data, model.scores(), f).abs() <= 1e-8);
            let t = score_test(&data, model.scores(), f).unwrap();
            prop_assert!(t.statistic.abs() <= 1e-6, "T = {}", t.statistic);
            prop_assert!(t.p_value >= 0.999999);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn estimates_are_equivariant_under_affine_response_maps(
        seed in any::<u64>(),
        scale in 0.1f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let data = random_data(seed, 120, 2);
        let moved = data
            .with_response(data.response().iter().map(|r| scale * r + shift).collect())
            .unwrap();
        let cfg = AnalysisConfig::new(
            PropensityConfig::parametric(),
            OutcomeConfig::new(OutcomeKind::LogisticOnScaled),
            vec![Estimator::Sub, Estimator::Ipw, Estimator::Aipw, Estimator::Tmle, Estimator::Tipw],
        );
        let a = run_analysis(&data, &cfg, 1, &OracleNuisances::default()).unwrap();
        let b = run_analysis(&moved, &cfg, 1, &OracleNuisances::default()).unwrap();
        let e = a.propensity.as_ref().unwrap().scores();
        let z = data.treatment_f64();
        let ht_mass = (0..data.n()).map(|i| z[i] / e[i]).sum::<f64>() / data.n() as f64;
        for (x, y) in a.estimates.iter().zip(&b.estimates) {
            // weighting estimators see the response's zero: Horvitz-Thompson
            // carries the shift with weight P_n[Z/e], and targeted IPW fluctuates
            // along Qbar/e, which moves with it
            let expect = match x.estimator {
                Estimator::Ipw => scale * x.point + shift * ht_mass,
                Estimator::Tipw => continue,
                _ => scale * x.point + shift,
            };
            prop_assert!((y.point - expect).abs() <= 1e-8 * (1.0 + expect.abs()), "{:?}: {} vs {}", x.estimator, y.point, expect);
            if x.estimator != Estimator::Ipw {
                prop_assert!((y.se - scale * x.se).abs() <= 1e-8 * (1.0 + y.se));
            }
        }

        let scaled = data.with_response(data.response().iter().map(|r| scale * r).collect()).unwrap();
        let c = run_analysis(&scaled, &cfg, 1, &OracleNuisances::default()).unwrap();
        for (x, y) in a.estimates.iter().zip(&c.estimates) {
            prop_assert!((y.point - scale * x.point).abs() <= 1e-8 * (1.0 + y.point.abs()), "{:?}", x.estimator);
            prop_assert!((y.se - scale * x.se).abs() <= 1e-8 * (1.0 + y.se), "{:?}", x.estimator);
        }
    }
}
