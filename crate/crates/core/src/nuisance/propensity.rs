use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::cv::{argmin, cv_deviance, fit_path, stratified_folds};
use super::outcome::OutcomeModel;
use super::DEFAULT_DELTA;
use crate::balance::Direction;
use crate::basis::{BasisExpansion, BasisSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::{lambda_path, GlmFit, GlmProblem};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityKind {
    ParametricLogistic,
    HalSieve,
    /// Externally supplied scores (e.g. the true propensity in simulations).
    Oracle,
}

/// How the sieve penalty is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Cv,
    Undersmoothed,
    Fixed,
}

/// How the penalty of a fitted model was actually chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    Unpenalized,
    Cv,
    Undersmoothed,
    Fixed,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropensityConfig {
    pub kind: PropensityKind,
    /// Covariates entering the parametric model as main terms (all when absent).
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    /// Sieve basis; defaults to degree `min(p, 2)` with all observed knots.
    #[serde(default)]
    pub basis: Option<BasisSpec>,
    #[serde(default = "default_selection")]
    pub selection: Selection,
    /// Penalty for `selection = fixed`.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_n_lambda")]
    pub n_lambda: usize,
    #[serde(default = "default_lambda_ratio")]
    pub lambda_ratio: f64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_delta")]
    pub truncation: f64,
    /// Constant in the undersmoothing threshold `c * sigma / (sqrt(n) log n)`.
    #[serde(default = "default_multiplier")]
    pub undersmooth_multiplier: f64,
}

fn default_selection() -> Selection {
    Selection::Cv
}
pub(crate) fn default_n_lambda() -> usize {
    40
}
pub(crate) fn default_lambda_ratio() -> f64 {
    1e-3
}
pub(crate) fn default_folds() -> usize {
    5
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_multiplier() -> f64 {
    1.0
}

impl PropensityConfig {
    pub fn new(kind: PropensityKind) -> Self {
        Self {
            kind,
            covariates: None,
            basis: None,
            selection: default_selection(),
            lambda: None,
            n_lambda: default_n_lambda(),
            lambda_ratio: default_lambda_ratio(),
            folds: default_folds(),
            truncation: DEFAULT_DELTA,
            undersmooth_multiplier: 1.0,
        }
    }

    pub fn parametric() -> Self {
        Self::new(PropensityKind::ParametricLogistic)
    }

    pub fn intercept_only() -> Self {
        Self {
            covariates: Some(Vec::new()),
            ..Self::parametric()
        }
    }

    pub fn hal(selection: Selection) -> Self {
        Self {
            selection,
            ..Self::new(PropensityKind::HalSieve)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UndersmoothDiagnostics {
    pub lambda_cv: f64,
    pub lambda_selected: f64,
    pub dcar_at_cv: f64,
    pub dcar_at_selected: f64,
    pub threshold_at_selected: f64,
    /// False when no lambda on the path met every criterion; the
    /// least-violating fit at or below the CV choice is then used.
    pub satisfied: bool,
    pub steps: usize,
    /// Directions still above their threshold at the selected lambda.
    pub violating_directions: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PropensityModel {
    pub kind: PropensityKind,
    /// `None` for oracle scores.
    pub fit: Option<GlmFit>,
    pub basis: Option<BasisExpansion>,
    /// Design the fit was computed on (without intercept column).
    design: Option<Array2<f64>>,
    pub lambda_selected: f64,
    pub selection: SelectionKind,
    pub path: Vec<f64>,
    pub path_fits: Vec<GlmFit>,
    pub cv_deviance: Vec<f64>,
    /// Untruncated fitted scores.
    pub raw_scores: Vec<f64>,
    /// Scores after truncation to `[delta, 1 - delta]`.
    pub fitted_scores: Vec<f64>,
    pub truncation_delta: f64,
    pub n_clamped: usize,
    pub undersmoothing: Option<UndersmoothDiagnostics>,
}

impl PropensityModel {
    /// Wraps externally supplied scores, truncated at `delta`.
    pub fn oracle(scores: Vec<f64>, delta: f64) -> Result<Self> {
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::param(
                "scores",
                "propensity scores must lie in [0, 1]",
            ));
        }
        let model = Self {
            kind: PropensityKind::Oracle,
            fit: None,
            basis: None,
            design: None,
            lambda_selected: 0.0,
            selection: SelectionKind::Oracle,
            path: Vec::new(),
            path_fits: Vec::new(),
            cv_deviance: Vec::new(),
            fitted_scores: scores.clone(),
            raw_scores: scores,
            truncation_delta: 0.0,
            n_clamped: 0,
            undersmoothing: None,
        };
        truncate(&model, delta)
    }

    pub fn scores(&self) -> &[f64] {
        &self.fitted_scores
    }

    pub fn design(&self) -> Option<&Array2<f64>> {
        self.design.as_ref()
    }

    /// Untruncated scores of the stored path fit at index `k`.
    pub fn path_scores(&self, k: usize) -> Option<Vec<f64>> {
        let design = self.design.as_ref()?;
        self.path_fits
            .get(k)
            .map(|f| f.predict(design.view(), None))
    }
}

fn selected_columns(data: &Dataset, covariates: &Option<Vec<String>>) -> Result<Array2<f64>> {
    match covariates {
        None => Ok(data.covariates().to_owned()),
        Some(names) => {
            let idx = names
                .iter()
                .map(|n| data.covariate_index(n))
                .collect::<Result<Vec<_>>>()?;
            Ok(data.covariates().select(Axis(1), &idx))
        }
    }
}

pub(crate) fn check_arms(data: &Dataset) -> Result<()> {
    let treated = data.n_treated();
    if treated == 0 {
        Err(Error::SingleArm(0))
    } else if treated == data.n() {
        Err(Error::SingleArm(1))
    } else {
        Ok(())
    }
}

pub fn fit_propensity(
    data: &Dataset,
    config: &PropensityConfig,
    seed: u64,
) -> Result<PropensityModel> {
    check_arms(data)?;
    let z = data.treatment_f64();
    let mut model = match config.kind {
        PropensityKind::Oracle => {
            return Err(Error::Config(
                "oracle propensity scores are only available in simulations".into(),
            ))
        }
        PropensityKind::ParametricLogistic => {
            let design = selected_columns(data, &config.covariates)?;
            let fit = GlmProblem::new(design.view(), &z).fit_logistic()?;
            let raw = fit.predict(design.view(), None);
            PropensityModel {
                kind: config.kind,
                fit: Some(fit.clone()),
                basis: None,
                design: Some(design),
                lambda_selected: 0.0,
                selection: SelectionKind::Unpenalized,
                path: vec![0.0],
                path_fits: vec![fit],
                cv_deviance: Vec::new(),
                fitted_scores: raw.clone(),
                raw_scores: raw,
                truncation_delta: 0.0,
                n_clamped: 0,
                undersmoothing: None,
            }
        }
        PropensityKind::HalSieve => {
            let spec = config
                .basis
                .unwrap_or_else(|| BasisSpec::default_for(data.p()));
            let basis = BasisExpansion::build(data, spec)?;
            let design = basis.design().to_owned();
            let (path, selection) = match config.selection {
                Selection::Fixed => {
                    let lambda = config.lambda.ok_or_else(|| {
                        Error::Config("selection `fixed` requires `lambda`".into())
                    })?;
                    (vec![lambda], SelectionKind::Fixed)
                }
                Selection::Cv | Selection::Undersmoothed => (
                    lambda_path(design.view(), &z, config.n_lambda, config.lambda_ratio)?,
                    SelectionKind::Cv,
                ),
            };
            let problem = GlmProblem::new(design.view(), &z);
            let path_fits = fit_path(&problem, &path)?;
            let (idx, cv) = if selection == SelectionKind::Cv {
                if config.folds < 2 {
                    return Err(Error::param("folds", "need at least 2 folds"));
                }
                let folds = stratified_folds(data.treatment(), config.folds, seed);
                let cv = cv_deviance(design.view(), &z, &path, &folds, config.folds)?;
                (argmin(&cv), cv)
            } else {
                (0, Vec::new())
            };
            let fit = path_fits[idx].clone();
            let raw = fit.predict(design.view(), None);
            PropensityModel {
                kind: config.kind,
                fit: Some(fit),
                basis: Some(basis),
                design: Some(design),
                lambda_selected: path[idx],
                selection,
                path,
                path_fits,
                cv_deviance: cv,
                fitted_scores: raw.clone(),
                raw_scores: raw,
                truncation_delta: 0.0,
                n_clamped: 0,
                undersmoothing: None,
            }
        }
    };
    model = truncate(&model, config.truncation)?;
    Ok(model)
}

/// Clamps the raw scores to `[delta, 1 - delta]`, recording how many moved.
pub fn truncate(model: &PropensityModel, delta: f64) -> Result<PropensityModel> {
    if !(0.0..0.5).contains(&delta) {
        return Err(Error::param(
            "delta",
            format!("must lie in [0, 0.5), got {delta}"),
        ));
    }
    let mut out = model.clone();
    out.fitted_scores = model
        .raw_scores
        .iter()
        .map(|&e| e.clamp(delta, 1.0 - delta))
        .collect();
    out.n_clamped = model
        .raw_scores
        .iter()
        .filter(|&&e| e < delta || e > 1.0 - delta)
        .count();
    out.truncation_delta = delta;
    Ok(out)
}

struct Criterion {
    dcar: f64,
    threshold: f64,
    violating: Vec<String>,
    /// Largest residual-to-threshold ratio over D_CAR and the directions.
    worst: f64,
}

fn ratio(residual: f64, threshold: f64) -> f64 {
    if residual == 0.0 {
        0.0
    } else {
        residual.abs() / threshold
    }
}

fn evaluate_criterion(
    data: &Dataset,
    scores: &[f64],
    q1: &[f64],
    directions: &[Direction],
    multiplier: f64,
) -> Criterion {
    let n = data.n() as f64;
    let z = data.treatment_f64();
    let r = data.response();
    let location = data.response_location();
    let scale = multiplier / (n.sqrt() * n.ln());

    let dcar_terms: Vec<f64> = (0..data.n())
        .map(|i| q1[i] / scores[i] * (z[i] - scores[i]))
        .collect();
    let dcar = stats::mean(&dcar_terms);
    let aipw_terms: Vec<f64> = (0..data.n())
        .map(|i| z[i] / scores[i] * (r[i] + location - q1[i]) + q1[i])
        .collect();
    // the plug-in EIF differs from the AIPW terms only by the constant tau
    let sigma = stats::sd(&aipw_terms);
    let threshold = scale * sigma;

    let mut worst = ratio(dcar, threshold);
    let mut violating = Vec::new();
    for d in directions {
        let s: Vec<f64> = (0..data.n())
            .map(|i| d.values[i] * (z[i] - scores[i]))
            .collect();
        let sd = stats::sd(&s);
        if sd > 0.0 {
            let rho = ratio(stats::mean(&s), scale * sd);
            worst = worst.max(rho);
            if rho > 1.0 {
                violating.push(d.name.clone());
            }
        }
    }
    Criterion {
        dcar,
        threshold,
        violating,
        worst,
    }
}

/// Walks the stored lambda path downward from the CV choice until the fit
/// solves the efficient-score equation `P_n [Qbar(1,X)/e (Z - e)]` and every
/// requested direction's score equation to within `c * sigma / (sqrt(n) log n)`.
///
/// If no lambda qualifies, the least-violating fit from the CV choice down
/// (smallest worst residual-to-threshold ratio) is kept and flagged; the far
/// end of the path can be nearly separated and solve D_CAR worse than the CV
/// fit did.
///
/// Criteria are evaluated on untruncated scores; the model's truncation level
/// is re-applied to the selected fit.
pub fn undersmooth_select(
    data: &Dataset,
    model: &PropensityModel,
    directions: &[Direction],
    outcome: &OutcomeModel,
    multiplier: f64,
) -> Result<PropensityModel> {
    if model.kind != PropensityKind::HalSieve {
        return Err(Error::Config(
            "undersmoothing requires a hal_sieve propensity model".into(),
        ));
    }
    let start = model
        .path
        .iter()
        .position(|&l| l == model.lambda_selected)
        .ok_or(Error::EmptyPath)?;
    if outcome.q1().len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            got: outcome.q1().len(),
        });
    }
    // D_CAR at the response's original location, as the estimators report it
    let location = data.response_location();
    let q1: Vec<f64> = outcome.q1().iter().map(|q| q + location).collect();
    let q1 = q1.as_slice();

    let initial = evaluate_criterion(data, &model.raw_scores, q1, directions, multiplier);
    let met = |c: &Criterion| c.dcar.abs() <= c.threshold && c.violating.is_empty();

    let dcar_at_cv = initial.dcar;
    let mut satisfied = met(&initial);
    let mut chosen = (start, model.raw_scores.clone(), initial);
    if !satisfied {
        if start + 1 >= model.path.len() {
            return Err(Error::EmptyPath);
        }
        for k in (start + 1)..model.path.len() {
            let scores = model.path_scores(k).expect("hal model stores its design");
            let c = evaluate_criterion(data, &scores, q1, directions, multiplier);
            let ok = met(&c);
            if ok || c.worst < chosen.2.worst {
                chosen = (k, scores, c);
            }
            if ok {
                satisfied = true;
                break;
            }
        }
    }

    let (k, scores, c) = chosen;
    let (dcar, threshold, violating) = (c.dcar, c.threshold, c.violating);
    let mut out = model.clone();
    out.fit = Some(model.path_fits[k].clone());
    out.lambda_selected = model.path[k];
    out.selection = SelectionKind::Undersmoothed;
    out.raw_scores = scores;
    out.undersmoothing = Some(UndersmoothDiagnostics {
        lambda_cv: model.lambda_selected,
        lambda_selected: model.path[k],
        dcar_at_cv,
        dcar_at_selected: dcar,
        threshold_at_selected: threshold,
        satisfied,
        steps: k - start,
        violating_directions: violating,
    });
    truncate(&out, model.truncation_delta)
}
