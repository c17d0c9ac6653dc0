//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails. The Monte Carlo criteria take
//! several minutes on a single core.

mod common;

use std::time::{Duration, Instant};

use balancekit::balance::score_test;
use balancekit::basis::{BasisSpec, KnotStrategy};
use balancekit::effects::{Estimand, Estimator};
use balancekit::glm::{lambda_path, GlmProblem};
use balancekit::nuisance::{
    fit_propensity, OutcomeConfig, OutcomeKind, PropensityConfig, PropensityKind, Selection,
};
use balancekit::pipeline::{
    run_analysis, AnalysisConfig, BalanceConfig, DirectionConfig, OracleNuisances,
};
use balancekit::sim::{
    run_monte_carlo, run_monte_carlo_with, sample_stream, Dgp, DgpRef, MonteCarloConfig,
    MonteCarloResult, NamedAnalysis,
};
use balancekit::{Dataset, Error};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn study(
    dgp: &str,
    n: usize,
    reps: usize,
    seed: u64,
    analyses: Vec<(&str, AnalysisConfig)>,
) -> MonteCarloResult {
    let config = MonteCarloConfig {
        dgp: DgpRef::Named(dgp.into()),
        n,
        reps,
        seed,
        analyses: analyses
            .into_iter()
            .map(|(name, analysis)| NamedAnalysis {
                name: name.into(),
                analysis,
            })
            .collect(),
    };
    run_monte_carlo(&config).expect("study runs")
}

fn oracle_propensity() -> PropensityConfig {
    PropensityConfig {
        truncation: 0.0,
        ..PropensityConfig::new(PropensityKind::Oracle)
    }
}

fn constant_outcome() -> OutcomeConfig {
    let mut q = OutcomeConfig::new(OutcomeKind::Linear).arm_specific(false);
    q.covariates = Some(Vec::new());
    q.include_treatment = false;
    q
}

fn d4() -> Dataset {
    Dataset::from_columns(
        array![[0.0], [0.0], [1.0], [1.0]],
        vec![1, 0, 1, 0],
        vec![3.0, 1.0, 5.0, 3.0],
    )
    .unwrap()
}

fn oracle_coincidence() -> Outcome {
    let start = Instant::now();
    let cfg = AnalysisConfig {
        propensity: PropensityConfig {
            truncation: 0.0,
            ..PropensityConfig::parametric()
        },
        ..AnalysisConfig::new(
            PropensityConfig::parametric(),
            OutcomeConfig::new(OutcomeKind::Linear).arm_specific(true),
            vec![
                Estimator::Sub,
                Estimator::Ipw,
                Estimator::Aipw,
                Estimator::Tmle,
                Estimator::Tipw,
            ],
        )
    };
    let analysis = run_analysis(&d4(), &cfg, 0, &OracleNuisances::default()).unwrap();
    let elapsed = start.elapsed();
    let worst = analysis
        .estimates
        .iter()
        .map(|e| (e.point - 4.0).abs())
        .fold(0.0, f64::max);
    check(
        analysis.estimates.len() == 5 && worst <= 1e-10 && elapsed < Duration::from_secs(1),
        format!("max |point - 4| = {worst:.1e} over 5 estimators in {elapsed:.2?}"),
    )
}

fn eif_mean_zero() -> Outcome {
    let start = Instant::now();
    let mut runs = 0;
    let mut converged = 0;
    let mut worst = 0.0_f64;
    for seed in 0..100 {
        let s = sample_stream(&Dgp::bench3(), 200, 1000 + seed, 0).unwrap();
        for estimand in [Estimand::Treated, Estimand::Ate] {
            let cfg = AnalysisConfig {
                estimand,
                ..AnalysisConfig::new(
                    PropensityConfig::parametric(),
                    OutcomeConfig::new(OutcomeKind::LogisticOnScaled),
                    vec![Estimator::Aipw, Estimator::Tmle],
                )
            };
            let a = run_analysis(&s.data, &cfg, seed, &OracleNuisances::default()).unwrap();
            for e in &a.estimates {
                runs += 1;
                if e.diagnostics.converged {
                    converged += 1;
                    worst = worst.max(e.diagnostics.eif_mean.abs());
                }
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        converged > 0 && worst <= 1e-8 && elapsed < Duration::from_secs(30),
        format!("{converged}/{runs} converged runs, max |P_n D*| = {worst:.1e}, {elapsed:.1?}"),
    )
}

fn score_test_calibration() -> Outcome {
    // e0 is constant on bench1, so the intercept-only logistic model is correct
    let cfg = AnalysisConfig {
        propensity: PropensityConfig::intercept_only(),
        outcome: None,
        estimators: Vec::new(),
        estimand: Estimand::Treated,
        scale_response: true,
        balance: Some(BalanceConfig {
            alpha: 0.05,
            directions: DirectionConfig::covariates_only(),
        }),
    };
    let r = study("bench1", 500, 2000, 31, vec![("null", cfg)]);
    let b = r.balance_for("null").unwrap();
    let rates: Vec<String> = b
        .direction_rejection_rates
        .iter()
        .map(|(k, v)| format!("{k} {v:.4}"))
        .collect();
    let ok = !b.direction_rejection_rates.is_empty()
        && b.direction_rejection_rates
            .values()
            .all(|&v| (0.03..=0.07).contains(&v));
    check(
        ok,
        format!(
            "rejection rate at alpha 0.05 over {} reps: {}",
            r.successes,
            rates.join(", ")
        ),
    )
}

fn lemma_one_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut designs = 0;
    let mut worst_t = 0.0_f64;
    let mut worst_p = 1.0_f64;
    let mut ok = true;
    while designs < 200 {
        let n = rng.random_range(20..300);
        let p = rng.random_range(1..5);
        let x: Array2<f64> = Array2::from_shape_fn((n, p), |_| rng.random_range(-2.0..2.0));
        let z: Vec<u8> = (0..n)
            .map(|i| u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-(0.7 * x[[i, 0]] - 0.2)).exp())))
            .collect();
        let data = match Dataset::from_columns(x, z, vec![0.0; n]) {
            Ok(d) => d,
            Err(_) => continue,
        };
        let model = match fit_propensity(
            &data,
            &PropensityConfig {
                truncation: 0.0,
                ..PropensityConfig::parametric()
            },
            0,
        ) {
            Ok(m) => m,
            Err(Error::Separation { .. }) | Err(Error::SingleArm(_)) => continue,
            Err(e) => return check(false, format!("fit failed: {e}")),
        };
        designs += 1;
        let mut dirs = vec![vec![1.0; n]];
        dirs.extend((0..p).map(|j| data.covariate(j).to_vec()));
        for f in &dirs {
            let z = data.treatment_f64();
            let s: Vec<f64> = (0..n).map(|i| f[i] * (z[i] - model.scores()[i])).collect();
            let residual = s.iter().sum::<f64>() / n as f64;
            if residual.abs() > 1e-8 {
                continue;
            }
            let t = score_test(&data, model.scores(), f).unwrap();
            worst_t = worst_t.max(t.statistic.abs());
            worst_p = worst_p.min(t.p_value);
            ok &= t.statistic.abs() <= 1e-6 && t.p_value >= 0.999999;
        }
    }
    check(
        ok,
        format!("{designs} designs: max |T| = {worst_t:.1e}, min p = {worst_p:.9}"),
    )
}

fn sieve(selection: Selection, knots: Option<usize>) -> (PropensityConfig, OutcomeConfig) {
    let basis = knots.map(|k| BasisSpec {
        max_interaction_degree: 1,
        knots: KnotStrategy::Quantile(k),
    });
    let mut e = PropensityConfig::hal(selection);
    e.basis = basis;
    let mut q = OutcomeConfig::new(OutcomeKind::HalSieve);
    q.basis = basis;
    (e, q)
}

fn efficiency_study() -> MonteCarloResult {
    let (e, q) = sieve(Selection::Cv, None);
    let sieve = AnalysisConfig::new(e, q, vec![Estimator::Aipw, Estimator::Tmle]);
    let known = AnalysisConfig {
        outcome: None,
        ..AnalysisConfig::new(
            oracle_propensity(),
            constant_outcome(),
            vec![Estimator::Ipw],
        )
    };
    study(
        "bench1",
        1000,
        500,
        5,
        vec![("sieve", sieve), ("known_e0", known)],
    )
}

fn efficiency_bound(r: &MonteCarloResult) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for label in ["sieve/aipw", "sieve/tmle"] {
        let s = r.estimator(label).unwrap();
        let nv = s.n_variance.unwrap();
        let rel = (nv / s.bound - 1.0).abs();
        ok &= rel <= 0.15 && (0.925..=0.975).contains(&s.coverage);
        parts.push(format!(
            "{label} n*var {nv:.3} (bound {:.3}, {:+.1}%), coverage {:.3}",
            s.bound,
            100.0 * (nv / s.bound - 1.0),
            s.coverage
        ));
    }
    check(ok, parts.join("; "))
}

fn ipw_inefficiency(r: &MonteCarloResult) -> Outcome {
    let ipw = r.estimator("known_e0/ipw").unwrap().variance.unwrap();
    let aipw = r.estimator("sieve/aipw").unwrap().variance.unwrap();
    check(
        ipw > aipw,
        format!(
            "n*var ipw (known e0) {:.3} vs aipw {:.3}",
            ipw * r.n as f64,
            aipw * r.n as f64
        ),
    )
}

fn double_robustness() -> Outcome {
    let a = AnalysisConfig::new(
        oracle_propensity(),
        constant_outcome(),
        vec![Estimator::Aipw],
    );
    let b = AnalysisConfig::new(
        PropensityConfig {
            truncation: 0.0,
            ..PropensityConfig::intercept_only()
        },
        OutcomeConfig::new(OutcomeKind::Oracle),
        vec![Estimator::Aipw],
    );
    let wrong = AnalysisConfig::new(
        PropensityConfig {
            truncation: 0.0,
            ..PropensityConfig::intercept_only()
        },
        constant_outcome(),
        vec![Estimator::Aipw],
    );
    let r = study(
        "bench3",
        1000,
        500,
        7,
        vec![("const_q", a), ("const_e", b), ("both_wrong", wrong)],
    );
    let mut ok = true;
    let mut parts = Vec::new();
    for label in ["const_q/aipw", "const_e/aipw"] {
        let s = r.estimator(label).unwrap();
        let se = s.bias_mc_se.unwrap();
        ok &= s.bias.abs() <= 2.0 * se;
        parts.push(format!(
            "{label} bias {:+.4} ({:.2} MC se)",
            s.bias,
            s.bias.abs() / se
        ));
    }
    let s = r.estimator("both_wrong/aipw").unwrap();
    parts.push(format!(
        "both wrong: bias {:+.4} ({:.1} MC se)",
        s.bias,
        s.bias.abs() / s.bias_mc_se.unwrap()
    ));
    check(ok, parts.join("; "))
}

fn undersmoothing_efficiency() -> Outcome {
    let (e, q) = sieve(Selection::Cv, Some(40));
    let cv = AnalysisConfig::new(e.clone(), q.clone(), vec![Estimator::Ipw]);
    let us = AnalysisConfig {
        propensity: PropensityConfig {
            selection: Selection::Undersmoothed,
            ..e
        },
        ..cv.clone()
    };
    let r = study(
        "bench1c",
        1000,
        300,
        8,
        vec![("cv", cv), ("undersmoothed", us)],
    );
    let c = r.estimator("cv/ipw").unwrap();
    let u = r.estimator("undersmoothed/ipw").unwrap();
    let (dc, du) = (c.mean_abs_dcar.unwrap(), u.mean_abs_dcar.unwrap());
    let (vc, vu) = (c.n_variance.unwrap(), u.n_variance.unwrap());
    let bound = c.bound;
    check(
        du < dc && (vu - bound).abs() < (vc - bound).abs(),
        format!(
            "mean |dcar| undersmoothed {du:.4} vs cv {dc:.4}; n*var undersmoothed {vu:.3} vs cv {vc:.3} (bound {bound:.3}); bias undersmoothed {:+.4} vs cv {:+.4}",
            u.bias, c.bias
        ),
    )
}

fn penalized_fit_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0_f64;
    let instances = 40;
    for case in 0..instances {
        let n = rng.random_range(6..=30);
        let m = rng.random_range(1..=3);
        let (x, y) = common::random_instance(500 + case, n, m);
        let lmax = lambda_path(x.view(), &y, 2, 0.5).unwrap()[0];
        let lambda = lmax * rng.random_range(0.01..1.2);
        let fit = GlmProblem::new(x.view(), &y)
            .fit_logistic_l1(lambda)
            .unwrap();
        let ours = common::l1_objective(&x, &y, &fit.coefficients, lambda);
        let (best, _) = common::brute_force_l1(&x, &y, lambda);
        worst = worst.max((ours - best).abs());
    }
    check(
        worst <= 1e-8,
        format!("{instances} instances, max objective gap {worst:.1e}"),
    )
}

fn determinism() -> Outcome {
    let s = sample_stream(&Dgp::bench3(), 300, 12, 0).unwrap();
    let (e, q) = sieve(Selection::Undersmoothed, Some(10));
    let mut estimate_cfg = AnalysisConfig::new(e, q, Estimator::ALL.to_vec());
    estimate_cfg.balance = Some(BalanceConfig::default());
    let balance_cfg = AnalysisConfig {
        estimators: Vec::new(),
        ..estimate_cfg.clone()
    };
    let render = |cfg: &AnalysisConfig| {
        let a = run_analysis(&s.data, cfg, 3, &OracleNuisances::default()).unwrap();
        serde_json::to_string(&(&a.estimates, &a.balance)).unwrap()
    };
    let estimate_same = render(&estimate_cfg) == render(&estimate_cfg);
    let balance_same = render(&balance_cfg) == render(&balance_cfg);

    let (e, q) = sieve(Selection::Cv, Some(10));
    let mc = MonteCarloConfig {
        dgp: DgpRef::Named("bench3".into()),
        n: 200,
        reps: 8,
        seed: 99,
        analyses: vec![NamedAnalysis {
            name: "sieve".into(),
            analysis: AnalysisConfig::new(e, q, vec![Estimator::Aipw, Estimator::Tipw]),
        }],
    };
    let runs: Vec<String> = [Some(1), Some(1), Some(4)]
        .into_iter()
        .map(|t| {
            let r = run_monte_carlo_with(&mc, t).unwrap();
            serde_json::to_string(&r).unwrap() + &balancekit::sim::replications_csv(&r).unwrap()
        })
        .collect();
    let simulate_same = runs.iter().all(|r| r == &runs[0]);
    check(
        estimate_same && balance_same && simulate_same,
        format!("estimate {estimate_same}, balance {balance_same}, simulate across 1/1/4 workers {simulate_same}"),
    )
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |id: usize, name: &'static str, outcome: Outcome| {
        println!(
            "criterion {id:>2} {}: {name}: {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
        results.push((id, name, outcome));
    };
    report(1, "oracle coincidence on D4", oracle_coincidence());
    report(2, "EIF mean zero", eif_mean_zero());
    report(3, "score-test calibration", score_test_calibration());
    report(
        4,
        "solved score equations give null statistics",
        lemma_one_exactness(),
    );
    let eff = efficiency_study();
    report(5, "efficiency bound attainment", efficiency_bound(&eff));
    report(6, "IPW inefficiency", ipw_inefficiency(&eff));
    report(7, "double robustness", double_robustness());
    report(
        8,
        "undersmoothing improves balance and efficiency",
        undersmoothing_efficiency(),
    );
    report(9, "penalized fit correctness", penalized_fit_correctness());
    report(10, "determinism", determinism());
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} of 10 passed in {:.0?}",
        10 - failed.len(),
        started.elapsed()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
