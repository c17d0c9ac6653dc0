//! Synthetic data-generating processes and a Monte Carlo harness.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::effects::Estimand;
use crate::error::{Error, Result};
use crate::pipeline::{run_analysis_cached, AnalysisConfig, NuisanceCache, OracleNuisances};
use crate::stats;

pub const ORACLE_DRAWS: usize = 1_000_000;
pub const ORACLE_SEED: u64 = 20_240_601;
/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateFamily {
    Uniform { low: f64, high: f64 },
    Binary { p: f64 },
    Gaussian { mean: f64, sd: f64 },
}

impl CovariateFamily {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            CovariateFamily::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            CovariateFamily::Binary { p } => f64::from(u8::from(rng.random::<f64>() < p)),
            CovariateFamily::Gaussian { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            CovariateFamily::Uniform { low, high } => (low + high) / 2.0,
            CovariateFamily::Binary { p } => p,
            CovariateFamily::Gaussian { mean, .. } => mean,
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            CovariateFamily::Uniform { low, high } => (high - low) / 12f64.sqrt(),
            CovariateFamily::Binary { p } => (p * (1.0 - p)).sqrt(),
            CovariateFamily::Gaussian { sd, .. } => sd,
        }
    }
}

/// One additive term of a linear predictor; covariates are referenced by
/// zero-based index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Term {
    Linear { coef: f64, var: usize },
    Square { coef: f64, var: usize },
    Product { coef: f64, vars: Vec<usize> },
    Sin { coef: f64, var: usize, freq: f64 },
    Step { coef: f64, var: usize, at: f64 },
}

impl Term {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Term::Linear { coef, var } => coef * x[*var],
            Term::Square { coef, var } => coef * x[*var] * x[*var],
            Term::Product { coef, vars } => coef * vars.iter().map(|&v| x[v]).product::<f64>(),
            Term::Sin { coef, var, freq } => coef * (freq * x[*var]).sin(),
            Term::Step { coef, var, at } => {
                if x[*var] >= *at {
                    *coef
                } else {
                    0.0
                }
            }
        }
    }

    fn vars(&self) -> Vec<usize> {
        match self {
            Term::Linear { var, .. }
            | Term::Square { var, .. }
            | Term::Sin { var, .. }
            | Term::Step { var, .. } => {
                vec![*var]
            }
            Term::Product { vars, .. } => vars.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Predictor {
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub terms: Vec<Term>,
}

impl Predictor {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.terms.iter().map(|t| t.eval(x)).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logit,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropensitySpec {
    pub link: Link,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub terms: Vec<Term>,
}

impl PropensitySpec {
    fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.intercept + self.terms.iter().map(|t| t.eval(x)).sum::<f64>()
    }
}

/// `Qbar0(z, x) = base(x) + z * effect(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeSpec {
    pub base: Predictor,
    #[serde(default)]
    pub effect: Predictor,
    /// Standard deviation of the Gaussian noise.
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dgp {
    pub name: String,
    pub covariates: Vec<CovariateFamily>,
    pub propensity: PropensitySpec,
    pub outcome: OutcomeSpec,
    /// Declared positivity bound: `delta0 < e0(x) < 1 - delta0`.
    pub delta0: f64,
    /// Closed-form `E R(1)`, when known.
    #[serde(default)]
    pub tau0: Option<f64>,
    /// Closed-form efficiency bound for `E R(1)`, when known.
    #[serde(default)]
    pub bound: Option<f64>,
}

impl Dgp {
    pub fn from_json(text: &str) -> Result<Self> {
        let dgp: Dgp =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("dgp: {e}")))?;
        dgp.check()?;
        Ok(dgp)
    }

    fn check(&self) -> Result<()> {
        let p = self.p();
        if p == 0 {
            return Err(Error::Config("dgp needs at least one covariate".into()));
        }
        let all_terms = self
            .propensity
            .terms
            .iter()
            .chain(&self.outcome.base.terms)
            .chain(&self.outcome.effect.terms);
        for t in all_terms {
            if let Some(v) = t.vars().into_iter().find(|&v| v >= p) {
                return Err(Error::Config(format!(
                    "dgp term refers to covariate {v} but p = {p}"
                )));
            }
        }
        if !(self.delta0 > 0.0 && self.delta0 < 0.5) {
            return Err(Error::Config("dgp delta0 must lie in (0, 0.5)".into()));
        }
        if !(self.outcome.noise_sd >= 0.0) {
            return Err(Error::Config("dgp noise_sd must be non-negative".into()));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.covariates.len()
    }

    /// The canonical benchmark: `X ~ Bernoulli(0.5)`, `e0 = 0.5`, `R = Z X + N(0, 1)`.
    pub fn bench1() -> Self {
        Self::from_json(include_str!("../dgps/bench1.json")).expect("bundled dgp")
    }

    /// Continuous `X ~ U(0, 1)` with a nonlinear propensity.
    pub fn bench1c() -> Self {
        Self::from_json(include_str!("../dgps/bench1c.json")).expect("bundled dgp")
    }

    /// Three covariates with interactions in both nuisances.
    pub fn bench3() -> Self {
        Self::from_json(include_str!("../dgps/bench3.json")).expect("bundled dgp")
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "bench1" => Ok(Self::bench1()),
            "bench1c" => Ok(Self::bench1c()),
            "bench3" => Ok(Self::bench3()),
            other => Err(Error::Config(format!("unknown dgp `{other}`"))),
        }
    }

    pub fn e0(&self, x: &[f64]) -> f64 {
        let v = self.propensity.linear_predictor(x);
        match self.propensity.link {
            Link::Logit => stats::expit(v),
            Link::Identity => v,
        }
    }

    pub fn q0(&self, z: u8, x: &[f64]) -> f64 {
        self.outcome.base.eval(x) + f64::from(z) * self.outcome.effect.eval(x)
    }

    fn draw_x(&self, rng: &mut ChaCha8Rng, row: &mut [f64]) {
        for (v, fam) in row.iter_mut().zip(&self.covariates) {
            *v = fam.draw(rng);
        }
    }
}

/// A sample together with the true nuisance values at its rows.
#[derive(Debug, Clone)]
pub struct Sample {
    pub data: Dataset,
    pub e0: Vec<f64>,
    pub q1: Vec<f64>,
    pub q0: Vec<f64>,
}

impl Sample {
    pub fn oracle(&self) -> OracleNuisances {
        OracleNuisances {
            propensity: Some(self.e0.clone()),
            outcome: Some((self.q1.clone(), self.q0.clone())),
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws `n` observations; replication `r` of a study uses stream `r` of `seed`.
pub fn sample_stream(dgp: &Dgp, n: usize, seed: u64, stream_id: u64) -> Result<Sample> {
    if n < 2 {
        return Err(Error::param("n", "need at least 2 observations"));
    }
    let mut rng = stream(seed, stream_id);
    let p = dgp.p();
    let noise = Normal::new(0.0, dgp.outcome.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut x = Array2::zeros((n, p));
    let mut z = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    let mut e0 = Vec::with_capacity(n);
    let mut q1 = Vec::with_capacity(n);
    let mut q0 = Vec::with_capacity(n);
    let mut row = vec![0.0; p];
    for i in 0..n {
        dgp.draw_x(&mut rng, &mut row);
        let e = dgp.e0(&row);
        let zi = u8::from(rng.random::<f64>() < e);
        let eps: f64 = noise.sample(&mut rng);
        r.push(dgp.q0(zi, &row) + eps);
        z.push(zi);
        e0.push(e);
        q1.push(dgp.q0(1, &row));
        q0.push(dgp.q0(0, &row));
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
    }
    Ok(Sample {
        data: Dataset::from_columns(x, z, r)?,
        e0,
        q1,
        q0,
    })
}

pub fn sample(dgp: &Dgp, n: usize, seed: u64) -> Result<Dataset> {
    sample_stream(dgp, n, seed, 0).map(|s| s.data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimandTruth {
    pub tau0: f64,
    /// Variance of the efficient influence function.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Truth {
    pub treated: EstimandTruth,
    pub control: EstimandTruth,
    pub ate: EstimandTruth,
    /// Variance of `Z R / e0(X)`, the IPW influence function for `E R(1)` with known `e0`.
    pub ipw_known_e0_variance: f64,
    /// True when `treated` comes from closed-form values declared by the dgp.
    pub treated_analytic: bool,
    pub oracle_draws: usize,
    pub oracle_seed: u64,
    pub e0_min: f64,
    pub e0_max: f64,
}

impl Truth {
    pub fn for_estimand(&self, estimand: Estimand) -> EstimandTruth {
        match estimand {
            Estimand::Treated => self.treated,
            Estimand::Control => self.control,
            Estimand::Ate => self.ate,
        }
    }
}

struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn new() -> Self {
        Self {
            count: 0.0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    /// Population variance.
    fn variance(&self) -> f64 {
        self.m2 / self.count
    }
}

/// True parameter values and efficiency bounds by Monte Carlo over `draws`
/// covariate draws, using closed forms in `x` for the conditional moments.
pub fn truth_with(dgp: &Dgp, draws: usize, seed: u64) -> Result<Truth> {
    let mut rng = stream(seed, u64::MAX);
    let s2 = dgp.outcome.noise_sd.powi(2);
    let mut row = vec![0.0; dgp.p()];
    let (mut m1, mut m0, mut mate) = (Moments::new(), Moments::new(), Moments::new());
    let (mut v1, mut v0, mut vate, mut ipw2) = (
        Moments::new(),
        Moments::new(),
        Moments::new(),
        Moments::new(),
    );
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..draws {
        dgp.draw_x(&mut rng, &mut row);
        let e = dgp.e0(&row);
        lo = lo.min(e);
        hi = hi.max(e);
        let (q1, q0) = (dgp.q0(1, &row), dgp.q0(0, &row));
        m1.push(q1);
        m0.push(q0);
        mate.push(q1 - q0);
        v1.push(s2 / e);
        v0.push(s2 / (1.0 - e));
        vate.push(s2 / e + s2 / (1.0 - e));
        ipw2.push((q1 * q1 + s2) / e);
    }
    if !(lo > dgp.delta0 && hi < 1.0 - dgp.delta0) {
        return Err(Error::Config(format!(
            "dgp `{}` violates its positivity bound: e0 ranges over [{lo}, {hi}] with delta0 = {}",
            dgp.name, dgp.delta0
        )));
    }
    let mut treated = EstimandTruth {
        tau0: m1.mean,
        bound: v1.mean + m1.variance(),
    };
    let analytic = dgp.tau0.is_some() || dgp.bound.is_some();
    if let Some(t) = dgp.tau0 {
        treated.tau0 = t;
    }
    if let Some(b) = dgp.bound {
        treated.bound = b;
    }
    Ok(Truth {
        treated,
        control: EstimandTruth {
            tau0: m0.mean,
            bound: v0.mean + m0.variance(),
        },
        ate: EstimandTruth {
            tau0: mate.mean,
            bound: vate.mean + mate.variance(),
        },
        ipw_known_e0_variance: ipw2.mean - treated.tau0 * treated.tau0,
        treated_analytic: analytic,
        oracle_draws: draws,
        oracle_seed: seed,
        e0_min: lo,
        e0_max: hi,
    })
}

/// [`truth_with`] at the default oracle size and seed.
pub fn truth_and_bound(dgp: &Dgp) -> Result<Truth> {
    truth_with(dgp, ORACLE_DRAWS, ORACLE_SEED)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedAnalysis {
    pub name: String,
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DgpRef {
    Named(String),
    Inline(Box<Dgp>),
}

impl DgpRef {
    pub fn resolve(&self) -> Result<Dgp> {
        match self {
            DgpRef::Named(name) => Dgp::named(name),
            DgpRef::Inline(dgp) => {
                dgp.check()?;
                Ok((**dgp).clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub dgp: DgpRef,
    pub n: usize,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    pub analyses: Vec<NamedAnalysis>,
}

/// Outcome of one estimator in one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepEstimate {
    pub label: String,
    pub point: f64,
    pub se: f64,
    pub covered: bool,
    pub eif_mean: f64,
    pub dcar_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepBalance {
    pub analysis: String,
    pub rejected: bool,
    pub rejected_directions: Vec<String>,
    pub tested_directions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replication {
    pub rep: usize,
    pub estimates: Vec<RepEstimate>,
    pub balance: Vec<RepBalance>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub label: String,
    pub estimand: Estimand,
    pub tau0: f64,
    pub bound: f64,
    pub mean_point: f64,
    pub bias: f64,
    /// Monte Carlo variance (divisor `reps - 1`); `None` with fewer than two replications.
    pub variance: Option<f64>,
    pub n_variance: Option<f64>,
    /// Monte Carlo standard error of `bias`.
    pub bias_mc_se: Option<f64>,
    pub mean_se: f64,
    pub coverage: f64,
    pub mean_abs_eif_mean: f64,
    pub mean_abs_dcar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceSummary {
    pub analysis: String,
    /// Share of replications where the family was rejected.
    pub family_rejection_rate: f64,
    /// Per-direction rejection share at the corrected level.
    pub direction_rejection_rates: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloResult {
    pub dgp: String,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub successes: usize,
    pub failures: usize,
    /// First failure message per distinct error, in replication order.
    pub failure_messages: Vec<String>,
    pub truth: Truth,
    pub estimators: Vec<EstimatorSummary>,
    pub balance: Vec<BalanceSummary>,
    #[serde(skip)]
    pub replications: Vec<Replication>,
}

impl MonteCarloResult {
    pub fn estimator(&self, label: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.label == label)
    }

    pub fn balance_for(&self, analysis: &str) -> Option<&BalanceSummary> {
        self.balance.iter().find(|b| b.analysis == analysis)
    }

    /// Point estimates for `label` across successful replications.
    pub fn points(&self, label: &str) -> Vec<f64> {
        self.replications
            .iter()
            .filter_map(|r| {
                r.estimates
                    .iter()
                    .find(|e| e.label == label)
                    .map(|e| e.point)
            })
            .collect()
    }
}

fn run_replication(
    dgp: &Dgp,
    config: &MonteCarloConfig,
    truth: &Truth,
    rep: usize,
    seed: u64,
) -> Result<Replication> {
    let sample = sample_stream(dgp, config.n, seed, rep as u64)?;
    let oracle = sample.oracle();
    let mut estimates = Vec::new();
    let mut balance = Vec::new();
    let mut cache = NuisanceCache::new();
    for a in &config.analyses {
        let analysis = run_analysis_cached(
            &sample.data,
            &a.analysis,
            seed.wrapping_add(rep as u64),
            &oracle,
            &mut cache,
        )?;
        let tau0 = truth.for_estimand(a.analysis.estimand).tau0;
        for est in &analysis.estimates {
            estimates.push(RepEstimate {
                label: format!("{}/{}", a.name, est.estimator.name()),
                point: est.point,
                se: est.se,
                covered: est.ci_95.0 <= tau0 && tau0 <= est.ci_95.1,
                eif_mean: est.diagnostics.eif_mean,
                dcar_residual: est.diagnostics.dcar_residual,
            });
        }
        if let Some(report) = &analysis.balance {
            balance.push(RepBalance {
                analysis: a.name.clone(),
                rejected: !report.is_balanced(),
                rejected_directions: report.rejected_directions.clone(),
                tested_directions: report.directions.iter().map(|d| d.name.clone()).collect(),
            });
        }
    }
    Ok(Replication {
        rep,
        estimates,
        balance,
    })
}

/// Worker count from `BALANCEKIT_THREADS`, if set.
pub fn configured_threads() -> Option<usize> {
    std::env::var("BALANCEKIT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
}

/// Runs the study with `threads` workers (or the `BALANCEKIT_THREADS` cap).
/// Results do not depend on the worker count.
pub fn run_monte_carlo_with(
    config: &MonteCarloConfig,
    threads: Option<usize>,
) -> Result<MonteCarloResult> {
    let dgp = config.dgp.resolve()?;
    if config.reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    if config.analyses.is_empty() {
        return Err(Error::Config("at least one analysis is required".into()));
    }
    let mut names: Vec<&str> = config.analyses.iter().map(|a| a.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("analysis names must be unique".into()));
    }
    let truth = truth_and_bound(&dgp)?;
    let seed = config.seed;

    let work = || -> Vec<Result<Replication>> {
        (0..config.reps)
            .into_par_iter()
            .map(|rep| run_replication(&dgp, config, &truth, rep, seed))
            .collect()
    };
    let outcomes = match threads.or_else(configured_threads) {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut replications = Vec::new();
    let mut failure_messages: Vec<String> = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => replications.push(r),
            Err(e) => {
                let msg = e.to_string();
                if !failure_messages.contains(&msg) {
                    failure_messages.push(msg);
                }
            }
        }
    }
    let failures = config.reps - replications.len();
    if failures as f64 > MAX_FAILURE_RATE * config.reps as f64 {
        return Err(Error::TooManyFailures {
            failed: failures,
            reps: config.reps,
        });
    }

    let estimators = summarize_estimators(config, &truth, &replications);
    let balance = summarize_balance(config, &replications);
    Ok(MonteCarloResult {
        dgp: dgp.name.clone(),
        n: config.n,
        reps: config.reps,
        seed,
        successes: replications.len(),
        failures,
        failure_messages,
        truth,
        estimators,
        balance,
        replications,
    })
}

pub fn run_monte_carlo(config: &MonteCarloConfig) -> Result<MonteCarloResult> {
    run_monte_carlo_with(config, None)
}

fn summarize_estimators(
    config: &MonteCarloConfig,
    truth: &Truth,
    reps: &[Replication],
) -> Vec<EstimatorSummary> {
    let mut out = Vec::new();
    for a in &config.analyses {
        let t = truth.for_estimand(a.analysis.estimand);
        for est in &a.analysis.estimators {
            let label = format!("{}/{}", a.name, est.name());
            let rows: Vec<&RepEstimate> = reps
                .iter()
                .filter_map(|r| r.estimates.iter().find(|e| e.label == label))
                .collect();
            let k = rows.len();
            if k == 0 {
                continue;
            }
            let points: Vec<f64> = rows.iter().map(|r| r.point).collect();
            let mean_point = stats::mean(&points);
            let variance = (k >= 2).then(|| stats::variance(&points));
            let dcar: Vec<f64> = rows
                .iter()
                .filter_map(|r| r.dcar_residual.map(f64::abs))
                .collect();
            out.push(EstimatorSummary {
                label,
                estimand: a.analysis.estimand,
                tau0: t.tau0,
                bound: t.bound,
                mean_point,
                bias: mean_point - t.tau0,
                variance,
                n_variance: variance.map(|v| v * config.n as f64),
                bias_mc_se: variance.map(|v| (v / k as f64).sqrt()),
                mean_se: stats::mean(&rows.iter().map(|r| r.se).collect::<Vec<_>>()),
                coverage: rows.iter().filter(|r| r.covered).count() as f64 / k as f64,
                mean_abs_eif_mean: stats::mean(
                    &rows.iter().map(|r| r.eif_mean.abs()).collect::<Vec<_>>(),
                ),
                mean_abs_dcar: (dcar.len() == k).then(|| stats::mean(&dcar)),
            });
        }
    }
    out
}

fn summarize_balance(config: &MonteCarloConfig, reps: &[Replication]) -> Vec<BalanceSummary> {
    let mut out = Vec::new();
    for a in &config.analyses {
        let rows: Vec<&RepBalance> = reps
            .iter()
            .filter_map(|r| r.balance.iter().find(|b| b.analysis == a.name))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let k = rows.len() as f64;
        let mut tested: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for row in &rows {
            for name in &row.tested_directions {
                let entry = tested.entry(name.clone()).or_default();
                entry.0 += 1;
                if row.rejected_directions.contains(name) {
                    entry.1 += 1;
                }
            }
        }
        out.push(BalanceSummary {
            analysis: a.name.clone(),
            family_rejection_rate: rows.iter().filter(|r| r.rejected).count() as f64 / k,
            direction_rejection_rates: tested
                .into_iter()
                .map(|(name, (t, r))| (name, r as f64 / t as f64))
                .collect(),
        });
    }
    out
}

/// Per-replication point estimates as CSV: one row per successful replication.
pub fn replications_csv(result: &MonteCarloResult) -> Result<String> {
    let labels: Vec<&str> = result.estimators.iter().map(|e| e.label.as_str()).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["rep".to_string()];
    for l in &labels {
        header.push(format!("{l}:point"));
        header.push(format!("{l}:se"));
        header.push(format!("{l}:dcar_residual"));
    }
    w.write_record(&header)
        .map_err(|e| Error::Csv(e.to_string()))?;
    for r in &result.replications {
        let mut row = vec![r.rep.to_string()];
        for l in &labels {
            match r.estimates.iter().find(|e| e.label == *l) {
                Some(e) => {
                    row.push(e.point.to_string());
                    row.push(e.se.to_string());
                    row.push(e.dcar_residual.map(|d| d.to_string()).unwrap_or_default());
                }
                None => row.extend([String::new(), String::new(), String::new()]),
            }
        }
        w.write_record(&row)
            .map_err(|e| Error::Csv(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidData(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
