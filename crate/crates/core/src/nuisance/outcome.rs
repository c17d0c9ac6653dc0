use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::cv::{argmin, cv_deviance, fit_path, stratified_folds};
use super::propensity::{check_arms, default_folds, default_lambda_ratio, default_n_lambda};
use crate::basis::{BasisExpansion, BasisSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::{lambda_path, GlmFit, GlmProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Linear,
    LogisticOnScaled,
    HalSieve,
    /// Externally supplied predictions.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeConfig {
    pub kind: OutcomeKind,
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    /// Separate fits per arm; defaults to true for `hal_sieve` and false otherwise.
    #[serde(default)]
    pub arm_specific: Option<bool>,
    /// Pooled fits only: add Z as a covariate.
    #[serde(default = "default_true")]
    pub include_treatment: bool,
    #[serde(default)]
    pub basis: Option<BasisSpec>,
    /// Fixed penalty for the sieve; cross-validated when absent.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_n_lambda")]
    pub n_lambda: usize,
    #[serde(default = "default_lambda_ratio")]
    pub lambda_ratio: f64,
    #[serde(default = "default_folds")]
    pub folds: usize,
}

fn default_true() -> bool {
    true
}

impl OutcomeConfig {
    pub fn new(kind: OutcomeKind) -> Self {
        Self {
            kind,
            covariates: None,
            arm_specific: None,
            include_treatment: true,
            basis: None,
            lambda: None,
            n_lambda: default_n_lambda(),
            lambda_ratio: default_lambda_ratio(),
            folds: default_folds(),
        }
    }

    pub fn arm_specific(mut self, yes: bool) -> Self {
        self.arm_specific = Some(yes);
        self
    }

    fn is_arm_specific(&self) -> bool {
        self.arm_specific
            .unwrap_or(self.kind == OutcomeKind::HalSieve)
    }
}

#[derive(Debug, Clone)]
pub struct OutcomeModel {
    pub kind: OutcomeKind,
    pub arm_specific: bool,
    /// One fit when pooled; `[control, treated]` when arm-specific.
    pub fits: Vec<GlmFit>,
    /// Selected penalty per fit (0 for unpenalized kinds).
    pub lambdas: Vec<f64>,
    q1: Vec<f64>,
    q0: Vec<f64>,
}

impl OutcomeModel {
    pub fn from_predictions(q1: Vec<f64>, q0: Vec<f64>) -> Result<Self> {
        if q1.len() != q0.len() {
            return Err(Error::DimensionMismatch {
                expected: q1.len(),
                got: q0.len(),
            });
        }
        if q1.iter().chain(&q0).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("outcome predictions".into()));
        }
        Ok(Self {
            kind: OutcomeKind::Oracle,
            arm_specific: false,
            fits: Vec::new(),
            lambdas: Vec::new(),
            q1,
            q0,
        })
    }

    /// Predictions `Qbar(1, X_i)`.
    pub fn q1(&self) -> &[f64] {
        &self.q1
    }

    /// Predictions `Qbar(0, X_i)`.
    pub fn q0(&self) -> &[f64] {
        &self.q0
    }

    pub fn arm(&self, a: u8) -> &[f64] {
        if a == 1 {
            &self.q1
        } else {
            &self.q0
        }
    }

    /// Predictions at the observed treatment, `Qbar(Z_i, X_i)`.
    pub fn observed(&self, treatment: &[u8]) -> Vec<f64> {
        treatment
            .iter()
            .enumerate()
            .map(|(i, &z)| if z == 1 { self.q1[i] } else { self.q0[i] })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.q1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q1.is_empty()
    }
}

fn covariate_block(data: &Dataset, names: &Option<Vec<String>>) -> Result<Array2<f64>> {
    match names {
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

fn with_treatment_column(x: ArrayView2<'_, f64>, value: Option<f64>, z: &[f64]) -> Array2<f64> {
    let p = x.ncols();
    Array2::from_shape_fn((x.nrows(), p + 1), |(i, j)| {
        if j < p {
            x[[i, j]]
        } else {
            value.unwrap_or(z[i])
        }
    })
}

/// L1 logistic sieve on `design` with CV (or fixed) penalty.
fn fit_sieve<'a>(
    design: ArrayView2<'a, f64>,
    y: &'a [f64],
    strata: &[u8],
    config: &OutcomeConfig,
    seed: u64,
) -> Result<(GlmFit, f64)> {
    let problem = GlmProblem::new(design, y);
    if let Some(lambda) = config.lambda {
        return Ok((problem.fit_logistic_l1(lambda)?, lambda));
    }
    if config.folds < 2 {
        return Err(Error::param("folds", "need at least 2 folds"));
    }
    let path = lambda_path(design, y, config.n_lambda, config.lambda_ratio)?;
    let folds = stratified_folds(strata, config.folds, seed);
    let cv = cv_deviance(design, y, &path, &folds, config.folds)?;
    let best = argmin(&cv);
    let fits = fit_path(&problem, &path[..=best])?;
    Ok((fits[best].clone(), path[best]))
}

fn fit_one<'a>(
    kind: OutcomeKind,
    design: ArrayView2<'a, f64>,
    y: &'a [f64],
    strata: &[u8],
    config: &OutcomeConfig,
    seed: u64,
) -> Result<(GlmFit, f64)> {
    match kind {
        OutcomeKind::Linear => Ok((GlmProblem::new(design, y).fit_linear()?, 0.0)),
        OutcomeKind::LogisticOnScaled => Ok((GlmProblem::new(design, y).fit_logistic()?, 0.0)),
        OutcomeKind::HalSieve => fit_sieve(design, y, strata, config, seed),
        OutcomeKind::Oracle => unreachable!("oracle outcome models are not fitted"),
    }
}

pub fn fit_outcome(data: &Dataset, config: &OutcomeConfig, seed: u64) -> Result<OutcomeModel> {
    if config.kind == OutcomeKind::Oracle {
        return Err(Error::Config(
            "oracle outcome predictions are only available in simulations".into(),
        ));
    }
    if config.kind != OutcomeKind::Linear
        && data.response().iter().any(|r| !(0.0..=1.0).contains(r))
    {
        return Err(Error::Config(
            "logistic and sieve outcome models need the response scaled to [0, 1]".into(),
        ));
    }
    let arm_specific = config.is_arm_specific();
    let x = covariate_block(data, &config.covariates)?;
    let z = data.treatment_f64();
    let y = data.response();
    let n = data.n();

    if arm_specific {
        let mut fits = Vec::with_capacity(2);
        let mut lambdas = Vec::with_capacity(2);
        let mut preds: Vec<Vec<f64>> = Vec::with_capacity(2);
        // knots come from all rows so both arms share one basis
        let basis = match config.kind {
            OutcomeKind::HalSieve => Some(BasisExpansion::build_from(
                x.view(),
                config
                    .basis
                    .unwrap_or_else(|| BasisSpec::default_for(x.ncols())),
            )?),
            _ => None,
        };
        let full = match &basis {
            Some(b) => b.design().to_owned(),
            None => x.clone(),
        };
        for arm in [0u8, 1u8] {
            let rows: Vec<usize> = (0..n).filter(|&i| data.treatment()[i] == arm).collect();
            if rows.is_empty() {
                return Err(Error::SingleArm(1 - arm));
            }
            let design = full.select(Axis(0), &rows);
            let ya: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
            let strata = vec![0u8; rows.len()];
            let (fit, lambda) = fit_one(
                config.kind,
                design.view(),
                &ya,
                &strata,
                config,
                seed.wrapping_add(arm as u64),
            )?;
            preds.push(fit.predict(full.view(), None));
            fits.push(fit);
            lambdas.push(lambda);
        }
        let q1 = preds.pop().expect("two arms");
        let q0 = preds.pop().expect("two arms");
        return Ok(OutcomeModel {
            kind: config.kind,
            arm_specific,
            fits,
            lambdas,
            q1,
            q0,
        });
    }

    if config.include_treatment {
        check_arms(data)?;
    }
    let (design, set1, set0) = if config.include_treatment {
        (
            with_treatment_column(x.view(), None, &z),
            with_treatment_column(x.view(), Some(1.0), &z),
            with_treatment_column(x.view(), Some(0.0), &z),
        )
    } else {
        (x.clone(), x.clone(), x.clone())
    };
    let (design, set1, set0) = match config.kind {
        OutcomeKind::HalSieve => {
            let spec = config
                .basis
                .unwrap_or_else(|| BasisSpec::default_for(design.ncols()));
            let basis = BasisExpansion::build_from(design.view(), spec)?;
            (
                basis.design().to_owned(),
                basis.evaluate(set1.view())?,
                basis.evaluate(set0.view())?,
            )
        }
        _ => (design, set1, set0),
    };
    let (fit, lambda) = fit_one(
        config.kind,
        design.view(),
        y,
        data.treatment(),
        config,
        seed,
    )?;
    let q1 = fit.predict(set1.view(), None);
    let q0 = fit.predict(set0.view(), None);
    Ok(OutcomeModel {
        kind: config.kind,
        arm_specific,
        fits: vec![fit],
        lambdas: vec![lambda],
        q1,
        q0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn d4() -> Dataset {
        Dataset::from_columns(
            array![[0.0], [0.0], [1.0], [1.0]],
            vec![1, 0, 1, 0],
            vec![3.0, 1.0, 5.0, 3.0],
        )
        .unwrap()
    }

    #[test]
    fn saturated_fit_recovers_cell_means() {
        let m = fit_outcome(
            &d4(),
            &OutcomeConfig::new(OutcomeKind::Linear).arm_specific(true),
            0,
        )
        .unwrap();
        let expect_q1 = [3.0, 3.0, 5.0, 5.0];
        let expect_q0 = [1.0, 1.0, 3.0, 3.0];
        for i in 0..4 {
            assert!((m.q1()[i] - expect_q1[i]).abs() < 1e-10);
            assert!((m.q0()[i] - expect_q0[i]).abs() < 1e-10);
        }
        assert_eq!(
            m.observed(d4().treatment()),
            vec![m.q1()[0], m.q0()[1], m.q1()[2], m.q0()[3]]
        );
    }

    #[test]
    fn intercept_only_linear_is_the_mean() {
        let mut cfg = OutcomeConfig::new(OutcomeKind::Linear);
        cfg.covariates = Some(Vec::new());
        cfg.include_treatment = false;
        let m = fit_outcome(&d4(), &cfg, 0).unwrap();
        for i in 0..4 {
            assert!((m.q1()[i] - 3.0).abs() < 1e-12);
            assert!((m.q0()[i] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn logistic_on_scaled_stays_in_unit_interval() {
        let data = d4().scale_response().unwrap();
        let m = fit_outcome(&data, &OutcomeConfig::new(OutcomeKind::LogisticOnScaled), 0).unwrap();
        assert!(m.q1().iter().chain(m.q0()).all(|v| (0.0..=1.0).contains(v)));
        let hal = fit_outcome(
            &data,
            &OutcomeConfig::new(OutcomeKind::HalSieve).arm_specific(false),
            0,
        );
        // four rows cannot support five folds of a path; a fixed penalty can
        assert!(hal.is_err() || hal.unwrap().q1().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn logistic_requires_scaled_response() {
        assert!(matches!(
            fit_outcome(&d4(), &OutcomeConfig::new(OutcomeKind::LogisticOnScaled), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn arm_specific_needs_both_arms() {
        let data = Dataset::from_columns(array![[0.0], [1.0]], vec![1, 1], vec![1.0, 2.0]).unwrap();
        let cfg = OutcomeConfig::new(OutcomeKind::Linear).arm_specific(true);
        assert!(matches!(
            fit_outcome(&data, &cfg, 0),
            Err(Error::SingleArm(_))
        ));
    }

    #[test]
    fn hal_outcome_with_fixed_penalty() {
        let x: Vec<f64> = (0..60).map(|i| ((i / 2) % 6) as f64).collect();
        let z: Vec<u8> = (0..60).map(|i| u8::from(i % 2 == 0)).collect();
        let r: Vec<f64> = (0..60)
            .map(|i| 0.1 + 0.1 * x[i] + 0.2 * z[i] as f64)
            .collect();
        let data =
            Dataset::from_columns(Array2::from_shape_vec((60, 1), x).unwrap(), z, r).unwrap();
        let mut cfg = OutcomeConfig::new(OutcomeKind::HalSieve);
        cfg.lambda = Some(1e-6);
        let m = fit_outcome(&data, &cfg, 0).unwrap();
        assert!(m.arm_specific);
        for i in 0..60 {
            let truth = 0.1 + 0.1 * ((i / 2) % 6) as f64;
            assert!((m.q0()[i] - truth).abs() < 1e-3);
            assert!((m.q1()[i] - truth - 0.2).abs() < 1e-3);
        }
    }
}
