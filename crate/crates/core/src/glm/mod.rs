//! Logistic and linear model fitting with offsets, observation weights and an
//! optional L1 penalty.
//!
//! All scores are empirical means: for column `f` the logistic score is
//! `(1/n) sum_i w_i f(x_i) (y_i - mu_i)`. The unpenalized fitters drive the
//! max-norm of this vector below `tol_score`; the penalized fitter drives the
//! subgradient (KKT) violation below the same tolerance.
//!
//! Logistic fits accept any response in `[0, 1]` (quasi-binomial), which the
//! fluctuation steps and scaled-response outcome models rely on.

mod irls;
mod lasso;
mod linalg;

use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::expit;

pub use lasso::lambda_path;

/// Coefficient magnitude on the logit scale treated as perfect separation.
pub const SEPARATION_THRESHOLD: f64 = 30.0;
/// Probability clip used inside IRLS working weights.
pub(crate) const PROB_CLIP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Logistic,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmOptions {
    pub tol_score: f64,
    /// IRLS / proximal-Newton iteration cap.
    pub max_iter: usize,
    /// Coordinate-descent sweep cap across a penalized fit.
    pub max_sweeps: usize,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            tol_score: 1e-8,
            max_iter: 100,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlmFit {
    /// Intercept first, then one coefficient per design column. The intercept
    /// is stored as 0 when the fit had none.
    pub coefficients: Vec<f64>,
    pub family: Family,
    pub penalty: f64,
    pub intercept: bool,
    pub offset_used: bool,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    /// The normal equations were singular and a 1e-10 ridge was added.
    pub ridge_used: bool,
}

impl GlmFit {
    pub fn linear_predictor(
        &self,
        design: ArrayView2<'_, f64>,
        offset: Option<&[f64]>,
    ) -> Vec<f64> {
        design
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let mut eta = self.coefficients[0];
                for (x, b) in row.iter().zip(&self.coefficients[1..]) {
                    eta += x * b;
                }
                eta + offset.map_or(0.0, |o| o[i])
            })
            .collect()
    }

    /// Fitted means: probabilities for logistic fits, linear predictor otherwise.
    pub fn predict(&self, design: ArrayView2<'_, f64>, offset: Option<&[f64]>) -> Vec<f64> {
        let eta = self.linear_predictor(design, offset);
        match self.family {
            Family::Logistic => eta.into_iter().map(expit).collect(),
            Family::Linear => eta,
        }
    }
}

/// A fitting problem: design (without intercept column), response, and the
/// optional offset, weights and intercept switch.
#[derive(Debug, Clone)]
pub struct GlmProblem<'a> {
    design: ArrayView2<'a, f64>,
    y: &'a [f64],
    offset: Option<&'a [f64]>,
    weights: Option<&'a [f64]>,
    intercept: bool,
    options: GlmOptions,
}

impl<'a> GlmProblem<'a> {
    pub fn new(design: ArrayView2<'a, f64>, y: &'a [f64]) -> Self {
        Self {
            design,
            y,
            offset: None,
            weights: None,
            intercept: true,
            options: GlmOptions::default(),
        }
    }

    pub fn offset(mut self, offset: &'a [f64]) -> Self {
        self.offset = Some(offset);
        self
    }

    pub fn weights(mut self, weights: &'a [f64]) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn without_intercept(mut self) -> Self {
        self.intercept = false;
        self
    }

    pub fn options(mut self, options: GlmOptions) -> Self {
        self.options = options;
        self
    }

    /// Unpenalized logistic regression by Newton-IRLS with step halving.
    pub fn fit_logistic(&self) -> Result<GlmFit> {
        let cols = self.prepare(Family::Logistic)?;
        irls::fit_logistic(self, &cols)
    }

    /// Minimizes `(1/n) * NLL + lambda * sum_j |beta_j|` (intercept unpenalized).
    pub fn fit_logistic_l1(&self, lambda: f64) -> Result<GlmFit> {
        self.fit_logistic_l1_from(lambda, None)
    }

    /// Penalized fit warm-started from `init` (full coefficient vector, intercept first).
    pub fn fit_logistic_l1_from(&self, lambda: f64, init: Option<&[f64]>) -> Result<GlmFit> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::param(
                "lambda",
                format!("must be finite and nonnegative, got {lambda}"),
            ));
        }
        let cols = self.prepare(Family::Logistic)?;
        if let Some(init) = init {
            if init.len() != cols.len() + 1 {
                return Err(Error::DimensionMismatch {
                    expected: cols.len() + 1,
                    got: init.len(),
                });
            }
        }
        lasso::fit(self, &cols, lambda, init)
    }

    /// Weighted least squares.
    pub fn fit_linear(&self) -> Result<GlmFit> {
        let cols = self.prepare(Family::Linear)?;
        irls::fit_linear(self, &cols)
    }

    pub(crate) fn n(&self) -> usize {
        self.y.len()
    }

    pub(crate) fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    pub(crate) fn offset_at(&self, i: usize) -> f64 {
        self.offset.map_or(0.0, |o| o[i])
    }

    /// Validates inputs and returns the design in column-major form.
    fn prepare(&self, family: Family) -> Result<Vec<Vec<f64>>> {
        let n = self.y.len();
        if self.design.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.design.nrows(),
            });
        }
        if n == 0 {
            return Err(Error::InvalidData("empty response".into()));
        }
        if self.design.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix".into()));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response".into()));
        }
        if family == Family::Logistic && self.y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::param("y", "logistic response must lie in [0, 1]"));
        }
        if let Some(o) = self.offset {
            if o.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: o.len(),
                });
            }
            if o.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("offset".into()));
            }
        }
        if let Some(w) = self.weights {
            if w.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: w.len(),
                });
            }
            if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::param("weights", "must be finite and nonnegative"));
            }
            if w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::param("weights", "must have a positive sum"));
            }
        }
        Ok(self
            .design
            .columns()
            .into_iter()
            .map(|c| c.to_vec())
            .collect())
    }
}

/// Per-observation negative log-likelihood of a (quasi-)Bernoulli response at
/// linear predictor `eta`: `softplus(eta) - y * eta`.
pub(crate) fn bernoulli_nll(eta: f64, y: f64) -> f64 {
    let softplus = if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    };
    softplus - y * eta
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn intercept_only_balanced() {
        let x = Array2::zeros((4, 0));
        let y = [1.0, 0.0, 1.0, 0.0];
        let fit = GlmProblem::new(x.view(), &y).fit_logistic().unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients[0].abs() < 1e-12);
        assert!(fit
            .predict(x.view(), None)
            .iter()
            .all(|&p| (p - 0.5).abs() < 1e-12));
    }

    #[test]
    fn intercept_only_three_quarters() {
        let x = Array2::zeros((4, 0));
        let y = [1.0, 1.0, 1.0, 0.0];
        let fit = GlmProblem::new(x.view(), &y).fit_logistic().unwrap();
        assert!((fit.coefficients[0] - 1.098_612_288_668_109_7).abs() < 1e-9);
    }

    #[test]
    fn separation_is_detected() {
        let x = array![[0.0], [1.0]];
        let y = [0.0, 1.0];
        let err = GlmProblem::new(x.view(), &y).fit_logistic().unwrap_err();
        assert!(matches!(err, Error::Separation { .. }));
    }

    #[test]
    fn unpenalized_score_is_zero() {
        let x = array![
            [0.1, 1.0],
            [0.5, -1.0],
            [0.9, 0.3],
            [0.3, 0.2],
            [0.7, -0.4],
            [0.2, 0.8]
        ];
        let y = [1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let fit = GlmProblem::new(x.view(), &y).fit_logistic().unwrap();
        assert!(fit.converged);
        let mu = fit.predict(x.view(), None);
        for j in 0..2 {
            let score: f64 = (0..6).map(|i| x[[i, j]] * (y[i] - mu[i])).sum::<f64>() / 6.0;
            assert!(score.abs() <= 1e-8);
        }
    }

    #[test]
    fn offset_equals_shifted_objective() {
        // Offset o with design D: the score at the fit must vanish for the shifted predictor.
        let x = array![[0.0], [1.0], [2.0], [3.0], [1.5]];
        let y = [0.0, 1.0, 0.0, 1.0, 1.0];
        let o = [0.3, -0.2, 0.5, 0.1, -0.4];
        let fit = GlmProblem::new(x.view(), &y)
            .offset(&o)
            .fit_logistic()
            .unwrap();
        assert!(fit.offset_used);
        let eta: Vec<f64> = (0..5)
            .map(|i| fit.coefficients[0] + fit.coefficients[1] * x[[i, 0]] + o[i])
            .collect();
        let s0: f64 = (0..5).map(|i| y[i] - expit(eta[i])).sum();
        let s1: f64 = (0..5).map(|i| x[[i, 0]] * (y[i] - expit(eta[i]))).sum();
        assert!(s0.abs() < 1e-7 && s1.abs() < 1e-7);
        // moving the offset into the intercept gives the same likelihood surface
        let shifted = [0.7; 5];
        let a = GlmProblem::new(x.view(), &y)
            .offset(&shifted)
            .fit_logistic()
            .unwrap();
        let b = GlmProblem::new(x.view(), &y).fit_logistic().unwrap();
        assert!((a.coefficients[0] + 0.7 - b.coefficients[0]).abs() < 1e-8);
        assert!((a.coefficients[1] - b.coefficients[1]).abs() < 1e-8);
    }

    #[test]
    fn linear_intercept_only_is_mean() {
        let x = Array2::zeros((3, 0));
        let fit = GlmProblem::new(x.view(), &[1.0, 3.0, 5.0])
            .fit_linear()
            .unwrap();
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn linear_saturated_interpolates() {
        let x = array![
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, 0.0]
        ];
        let y = [2.0, -1.0, 7.5, 0.25];
        let fit = GlmProblem::new(x.view(), &y).fit_linear().unwrap();
        for (p, t) in fit.predict(x.view(), None).iter().zip(&y) {
            assert!((p - t).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_duplicate_column_takes_ridge() {
        let x = array![[0.1, 0.1], [0.4, 0.4], [0.5, 0.5], [0.9, 0.9], [0.3, 0.3]];
        let x1 = array![[0.1], [0.4], [0.5], [0.9], [0.3]];
        let y = [1.0, 2.0, 2.2, 3.9, 1.1];
        let dup = GlmProblem::new(x.view(), &y).fit_linear().unwrap();
        let single = GlmProblem::new(x1.view(), &y).fit_linear().unwrap();
        assert!(dup.ridge_used);
        assert!(!single.ridge_used);
        for (a, b) in dup
            .predict(x.view(), None)
            .iter()
            .zip(single.predict(x1.view(), None))
        {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn weights_match_replication() {
        let x = array![[0.0], [1.0], [2.0], [0.5]];
        let y = [0.0, 1.0, 0.0, 1.0];
        let w = [1.0, 2.0, 1.0, 3.0];
        let weighted = GlmProblem::new(x.view(), &y)
            .weights(&w)
            .fit_logistic()
            .unwrap();
        let xr = array![[0.0], [1.0], [1.0], [2.0], [0.5], [0.5], [0.5]];
        let yr = [0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0];
        let replicated = GlmProblem::new(xr.view(), &yr).fit_logistic().unwrap();
        for (a, b) in weighted.coefficients.iter().zip(&replicated.coefficients) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = array![[f64::NAN], [1.0]];
        assert!(GlmProblem::new(x.view(), &[0.0, 1.0])
            .fit_logistic_l1(0.1)
            .is_err());
        let x = array![[0.0], [1.0]];
        assert!(GlmProblem::new(x.view(), &[0.0, 1.0])
            .fit_logistic_l1(-0.1)
            .is_err());
        assert!(GlmProblem::new(x.view(), &[0.0, 2.0])
            .fit_logistic()
            .is_err());
    }
}
