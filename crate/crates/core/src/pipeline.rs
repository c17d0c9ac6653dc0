//! One full analysis: nuisance fits, optional undersmoothing, estimators and
//! the balance sweep. Shared by the command-line tool and the simulator.

use serde::{Deserialize, Serialize};

use crate::balance::{balance_sweep, BalanceReport, DirectionSet};
use crate::basis::{BasisExpansion, BasisSpec, KnotStrategy};
use crate::dataset::Dataset;
use crate::effects::{estimate, EffectEstimate, Estimand, Estimator};
use crate::error::{Error, Result};
use crate::nuisance::{
    fit_outcome, fit_propensity, truncate, undersmooth_select, OutcomeConfig, OutcomeKind,
    OutcomeModel, PropensityConfig, PropensityKind, PropensityModel, Selection,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserDirection {
    pub name: String,
    /// The direction is the product of these covariates.
    pub product: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionConfig {
    #[serde(default = "yes")]
    pub covariates: bool,
    /// Degree-one indicator columns `1(x_j >= t)` at every observed `t`.
    #[serde(default = "yes")]
    pub basis: bool,
    /// Columns of the fitted propensity sieve (hal_sieve only).
    #[serde(default)]
    pub sieve_basis: bool,
    #[serde(default = "yes")]
    pub eif_weight: bool,
    /// Centre covariate and basis directions at their sample means.
    #[serde(default = "yes")]
    pub centre: bool,
    #[serde(default)]
    pub user: Vec<UserDirection>,
}

fn yes() -> bool {
    true
}

impl Default for DirectionConfig {
    fn default() -> Self {
        Self {
            covariates: true,
            basis: true,
            sieve_basis: false,
            eif_weight: true,
            centre: true,
            user: Vec::new(),
        }
    }
}

impl DirectionConfig {
    /// Centred raw covariates only.
    pub fn covariates_only() -> Self {
        Self {
            basis: false,
            eif_weight: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub directions: DirectionConfig,
}

fn default_alpha() -> f64 {
    0.05
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            directions: DirectionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub propensity: PropensityConfig,
    /// Outcome model; when given it is fitted even if no estimator needs it,
    /// so diagnostics such as the D_CAR residual are reported.
    #[serde(default)]
    pub outcome: Option<OutcomeConfig>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_estimand")]
    pub estimand: Estimand,
    /// Map the response onto [0, 1] before fitting; estimates are reported
    /// on the original scale either way.
    #[serde(default = "yes")]
    pub scale_response: bool,
    #[serde(default)]
    pub balance: Option<BalanceConfig>,
}

fn default_outcome() -> OutcomeConfig {
    OutcomeConfig::new(OutcomeKind::LogisticOnScaled)
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Aipw, Estimator::Tmle]
}

fn default_estimand() -> Estimand {
    Estimand::Treated
}

impl AnalysisConfig {
    pub fn new(
        propensity: PropensityConfig,
        outcome: OutcomeConfig,
        estimators: Vec<Estimator>,
    ) -> Self {
        Self {
            propensity,
            outcome: Some(outcome),
            estimators,
            estimand: Estimand::Treated,
            scale_response: true,
            balance: None,
        }
    }

    fn outcome_config(&self) -> OutcomeConfig {
        self.outcome.clone().unwrap_or_else(default_outcome)
    }

    fn needs_outcome(&self) -> bool {
        self.outcome.is_some()
            || self.estimators.iter().any(|e| e.needs_outcome())
            || self.propensity.selection == Selection::Undersmoothed
                && self.propensity.kind == PropensityKind::HalSieve
            || self
                .balance
                .as_ref()
                .is_some_and(|b| b.directions.eif_weight)
    }

    fn needs_propensity(&self) -> bool {
        self.estimators.iter().any(|e| e.needs_propensity()) || self.balance.is_some()
    }
}

/// True nuisance values supplied by a simulation, on the original response scale.
#[derive(Debug, Clone, Default)]
pub struct OracleNuisances {
    pub propensity: Option<Vec<f64>>,
    pub outcome: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    /// The dataset on the working scale.
    pub data: Dataset,
    pub propensity: Option<PropensityModel>,
    pub outcome: Option<OutcomeModel>,
    pub estimates: Vec<EffectEstimate>,
    pub balance: Option<BalanceReport>,
}

fn product_direction(data: &Dataset, names: &[String]) -> Result<Vec<f64>> {
    let idx = names
        .iter()
        .map(|n| data.covariate_index(n))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..data.n())
        .map(|i| idx.iter().map(|&j| data.covariates()[[i, j]]).product())
        .collect())
}

/// Directions described by `config` for the given nuisances; the efficient
/// score weight is included only when both nuisances are available.
pub fn build_directions(
    data: &Dataset,
    config: &DirectionConfig,
    propensity: Option<&PropensityModel>,
    outcome: Option<&OutcomeModel>,
) -> Result<DirectionSet> {
    let mut set = DirectionSet::new();
    if config.covariates {
        set.add_covariates(data, config.centre)?;
    }
    if config.basis {
        let spec = BasisSpec {
            max_interaction_degree: 1,
            knots: KnotStrategy::AllObserved,
        };
        set.add_basis(
            &BasisExpansion::build(data, spec)?,
            data.covariate_names(),
            config.centre,
        )?;
    }
    if config.sieve_basis {
        if let Some(basis) = propensity.and_then(|e| e.basis.as_ref()) {
            set.add_basis(basis, data.covariate_names(), config.centre)?;
        }
    }
    for user in &config.user {
        set.add_user(user.name.clone(), product_direction(data, &user.product)?)?;
    }
    if config.eif_weight {
        if let (Some(e), Some(q)) = (propensity, outcome) {
            let location = data.response_location();
            let q1: Vec<f64> = q.q1().iter().map(|v| v + location).collect();
            set.add_eif_weight(&q1, e.scores())?;
        }
    }
    Ok(set)
}

fn oracle_outcome(data: &Dataset, q: &(Vec<f64>, Vec<f64>)) -> Result<OutcomeModel> {
    let (lo, hi) = data.response_bounds().unwrap_or((0.0, 1.0));
    let to_working = |v: &Vec<f64>| v.iter().map(|x| (x - lo) / (hi - lo)).collect::<Vec<f64>>();
    OutcomeModel::from_predictions(to_working(&q.0), to_working(&q.1))
}

/// Nuisance fits shared between analyses of the same dataset and seed.
#[derive(Debug, Default)]
pub struct NuisanceCache {
    outcomes: Vec<(bool, OutcomeConfig, OutcomeModel)>,
    propensities: Vec<(PropensityConfig, PropensityModel)>,
}

impl NuisanceCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn outcome(
        &mut self,
        data: &Dataset,
        config: &OutcomeConfig,
        seed: u64,
    ) -> Result<OutcomeModel> {
        let scaled = data.response_bounds().is_some();
        if let Some((_, _, m)) = self
            .outcomes
            .iter()
            .find(|(s, c, _)| *s == scaled && c == config)
        {
            return Ok(m.clone());
        }
        let m = fit_outcome(data, config, seed)?;
        self.outcomes.push((scaled, config.clone(), m.clone()));
        Ok(m)
    }

    /// The fit before undersmoothing and truncation, which do not change the path.
    fn propensity(
        &mut self,
        data: &Dataset,
        config: &PropensityConfig,
        seed: u64,
    ) -> Result<PropensityModel> {
        let mut key = config.clone();
        if key.selection == Selection::Undersmoothed {
            key.selection = Selection::Cv;
        }
        key.truncation = 0.0;
        key.undersmooth_multiplier = 1.0;
        if let Some((_, m)) = self.propensities.iter().find(|(c, _)| *c == key) {
            return Ok(m.clone());
        }
        let m = fit_propensity(data, &key, seed)?;
        self.propensities.push((key, m.clone()));
        Ok(m)
    }
}

pub fn run_analysis(
    data: &Dataset,
    config: &AnalysisConfig,
    seed: u64,
    oracle: &OracleNuisances,
) -> Result<Analysis> {
    run_analysis_cached(data, config, seed, oracle, &mut NuisanceCache::new())
}

/// [`run_analysis`] reusing nuisance fits from `cache`. The cache must only
/// be shared between calls with the same `data` and `seed`.
pub fn run_analysis_cached(
    data: &Dataset,
    config: &AnalysisConfig,
    seed: u64,
    oracle: &OracleNuisances,
    cache: &mut NuisanceCache,
) -> Result<Analysis> {
    if config.estimators.is_empty() && config.balance.is_none() {
        return Err(Error::Config(
            "nothing to do: no estimators and no balance sweep requested".into(),
        ));
    }
    let data = if config.scale_response {
        data.scale_response()?
    } else {
        data.clone()
    };

    let outcome = if config.needs_outcome() {
        let outcome_config = config.outcome_config();
        Some(match outcome_config.kind {
            OutcomeKind::Oracle => oracle_outcome(
                &data,
                oracle
                    .outcome
                    .as_ref()
                    .ok_or(Error::MissingNuisance("oracle outcome"))?,
            )?,
            _ => cache.outcome(&data, &outcome_config, seed)?,
        })
    } else {
        None
    };

    let propensity = if config.needs_propensity() {
        let mut model = match config.propensity.kind {
            PropensityKind::Oracle => PropensityModel::oracle(
                oracle
                    .propensity
                    .clone()
                    .ok_or(Error::MissingNuisance("oracle propensity"))?,
                config.propensity.truncation,
            )?,
            _ => truncate(
                &cache.propensity(&data, &config.propensity, seed)?,
                config.propensity.truncation,
            )?,
        };
        if config.propensity.kind == PropensityKind::HalSieve
            && config.propensity.selection == Selection::Undersmoothed
        {
            let directions = match &config.balance {
                Some(b) => {
                    let mut d = b.directions.clone();
                    // the efficient-score weight is handled by the D_CAR criterion itself
                    d.eif_weight = false;
                    build_directions(&data, &d, Some(&model), None)?
                }
                None => DirectionSet::new(),
            };
            let q = outcome.as_ref().expect("undersmoothing fits the outcome");
            model = undersmooth_select(
                &data,
                &model,
                &directions.directions,
                q,
                config.propensity.undersmooth_multiplier,
            )?;
            model = truncate(&model, config.propensity.truncation)?;
        }
        Some(model)
    } else {
        None
    };

    let estimates = config
        .estimators
        .iter()
        .map(|&est| {
            estimate(
                &data,
                est,
                config.estimand,
                propensity.as_ref(),
                outcome.as_ref(),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let balance = match &config.balance {
        Some(b) => {
            let e = propensity
                .as_ref()
                .expect("balance needs a propensity model");
            let dirs = build_directions(&data, &b.directions, Some(e), outcome.as_ref())?;
            Some(balance_sweep(&data, e.scores(), &dirs, b.alpha)?)
        }
        None => None,
    };

    Ok(Analysis {
        data,
        propensity,
        outcome,
        estimates,
        balance,
    })
}
