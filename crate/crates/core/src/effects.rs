//! Estimators of the counterfactual mean `E R(a)` and the average treatment
//! effect, with influence-function-based inference.
//!
//! Every estimator is written for a generic arm `a` with indicator
//! `A = 1(Z = a)` and arm probability `p = e` (or `1 - e`). The efficient
//! influence function is `A/p (R - Qbar(a,X)) + Qbar(a,X) - tau`.
//!
//! On a scaled response the arms work with `R / range` (the working value
//! plus [`Dataset::response_location`]), so inverse weighting and the `D_CAR`
//! term see the original zero. Estimators built from residuals `R - Qbar` are
//! unaffected.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::{GlmOptions, GlmProblem};
use crate::nuisance::{OutcomeModel, PropensityModel};
use crate::stats;

/// Bounds applied to outcome predictions before taking logits.
pub const Q_CLIP: f64 = 1e-6;
/// Target for the empirical mean of the influence function after targeting.
pub const EIF_TOL: f64 = 1e-8;
pub const TIPW_MAX_ITER: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    /// `E R(1)`.
    Treated,
    /// `E R(0)`.
    Control,
    Ate,
}

impl Estimand {
    fn arm(self) -> Option<u8> {
        match self {
            Estimand::Treated => Some(1),
            Estimand::Control => Some(0),
            Estimand::Ate => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Sub,
    Ipw,
    /// IPW with weights normalized to sum to one.
    IpwHajek,
    Aipw,
    Tmle,
    Tipw,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::Sub,
        Estimator::Ipw,
        Estimator::IpwHajek,
        Estimator::Aipw,
        Estimator::Tmle,
        Estimator::Tipw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Sub => "sub",
            Estimator::Ipw => "ipw",
            Estimator::IpwHajek => "ipw_hajek",
            Estimator::Aipw => "aipw",
            Estimator::Tmle => "tmle",
            Estimator::Tipw => "tipw",
        }
    }

    pub fn needs_propensity(self) -> bool {
        self != Estimator::Sub
    }

    pub fn needs_outcome(self) -> bool {
        !matches!(self, Estimator::Ipw | Estimator::IpwHajek)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Fluctuation parameters, one per targeting step (and per arm for the ATE).
    pub epsilon: Vec<f64>,
    /// `P_n [Qbar(a,X)/p(X)](A - p(X))` at the scores the estimator used.
    pub dcar_residual: Option<f64>,
    /// Propensity rows clamped by truncation.
    pub n_clamped: usize,
    /// Sum of inverse-probability weights `sum A/p`.
    pub weight_sum: Option<f64>,
    /// Outcome predictions moved by the logit clip.
    pub n_q_clipped: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Empirical mean of the influence values on the working scale.
    pub eif_mean: f64,
    /// False for estimators whose reported variance is not asymptotically valid.
    pub inference_valid: bool,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    fn merge(mut self, other: Diagnostics) -> Self {
        self.epsilon.extend(other.epsilon);
        self.dcar_residual = match (self.dcar_residual, other.dcar_residual) {
            (Some(a), Some(b)) => Some(a.abs().max(b.abs())),
            (a, b) => a.or(b),
        };
        self.weight_sum = match (self.weight_sum, other.weight_sum) {
            (Some(a), Some(b)) => Some(a + b),
            (a, b) => a.or(b),
        };
        self.n_q_clipped += other.n_q_clipped;
        self.iterations += other.iterations;
        self.converged &= other.converged;
        self.inference_valid &= other.inference_valid;
        self.warnings.extend(other.warnings);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub estimand: Estimand,
    pub estimator: Estimator,
    /// On the original response scale.
    pub point: f64,
    /// Estimated influence values on the original response scale.
    #[serde(skip)]
    pub if_values: Vec<f64>,
    pub se: f64,
    pub ci_95: (f64, f64),
    pub diagnostics: Diagnostics,
}

impl EffectEstimate {
    /// Wald interval at `level` from the influence values.
    pub fn interval(&self, level: f64) -> Result<(f64, f64)> {
        infer(self, level).map(|(_, ci)| ci)
    }
}

/// Standard error `sd(if)/sqrt(n)` and the Wald interval at `level`.
pub fn infer(estimate: &EffectEstimate, level: f64) -> Result<(f64, (f64, f64))> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::param(
            "level",
            format!("must lie in (0, 1), got {level}"),
        ));
    }
    let sd = stats::sd(&estimate.if_values);
    if !(sd > 0.0) {
        return Err(Error::InvalidData(
            "influence values are constant; no interval".into(),
        ));
    }
    let se = sd / (estimate.if_values.len() as f64).sqrt();
    let z = stats::normal_quantile(0.5 + level / 2.0);
    Ok((se, (estimate.point - z * se, estimate.point + z * se)))
}

/// Working-scale result for one arm; influence values are at the original
/// location (equivalently on the working scale, as they are centred).
struct ArmResult {
    tau: f64,
    if_values: Vec<f64>,
    diagnostics: Diagnostics,
}

struct Arm {
    a: Vec<f64>,
    p: Vec<f64>,
    /// Response at the original location.
    r: Vec<f64>,
    location: f64,
}

impl Arm {
    fn locate(&self, q: &[f64]) -> Vec<f64> {
        q.iter().map(|v| v + self.location).collect()
    }
}

fn arm_view(data: &Dataset, arm: u8, scores: Option<&[f64]>) -> Result<Arm> {
    let a: Vec<f64> = data
        .treatment()
        .iter()
        .map(|&z| f64::from(u8::from(z == arm)))
        .collect();
    let p = match scores {
        Some(e) => {
            if e.len() != data.n() {
                return Err(Error::DimensionMismatch {
                    expected: data.n(),
                    got: e.len(),
                });
            }
            let p: Vec<f64> = e
                .iter()
                .map(|&e| if arm == 1 { e } else { 1.0 - e })
                .collect();
            if a.iter().zip(&p).any(|(&a, &p)| a > 0.0 && !(p > 0.0)) {
                return Err(Error::InvalidData(format!(
                    "zero probability of arm {arm} on a row observed in that arm"
                )));
            }
            p
        }
        None => Vec::new(),
    };
    let location = data.response_location();
    Ok(Arm {
        a,
        p,
        r: data.response().iter().map(|r| r + location).collect(),
        location,
    })
}

fn eif(arm: &Arm, q: &[f64], tau: f64) -> Vec<f64> {
    (0..arm.a.len())
        .map(|i| {
            let resid = if arm.a[i] > 0.0 {
                arm.a[i] / arm.p[i] * (arm.r[i] - q[i])
            } else {
                0.0
            };
            resid + q[i] - tau
        })
        .collect()
}

fn dcar(arm: &Arm, p: &[f64], q: &[f64]) -> f64 {
    stats::mean(
        &(0..arm.a.len())
            .map(|i| q[i] / p[i] * (arm.a[i] - p[i]))
            .collect::<Vec<_>>(),
    )
}

fn check_outcome(data: &Dataset, q: &OutcomeModel) -> Result<()> {
    if q.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            got: q.len(),
        });
    }
    Ok(())
}

fn sub_arm(
    data: &Dataset,
    arm: u8,
    q: &OutcomeModel,
    e: Option<&PropensityModel>,
) -> Result<ArmResult> {
    check_outcome(data, q)?;
    let v = arm_view(data, arm, e.map(|e| e.scores()))?;
    let qa = v.locate(q.arm(arm));
    let tau = stats::mean(&qa);
    let (if_values, dcar_res) = match e {
        Some(_) => (eif(&v, &qa, tau), Some(dcar(&v, &v.p, &qa))),
        None => (qa.iter().map(|q| q - tau).collect(), None),
    };
    Ok(ArmResult {
        tau: tau - v.location,
        diagnostics: Diagnostics {
            eif_mean: stats::mean(&if_values),
            dcar_residual: dcar_res,
            converged: true,
            inference_valid: false,
            warnings: vec![
                "substitution estimator: reported standard error is not asymptotically valid"
                    .into(),
            ],
            ..Default::default()
        },
        if_values,
    })
}

fn ipw_arm(
    data: &Dataset,
    arm: u8,
    e: &PropensityModel,
    q: Option<&OutcomeModel>,
    hajek: bool,
) -> Result<ArmResult> {
    let v = arm_view(data, arm, Some(e.scores()))?;
    let n = data.n() as f64;
    let w: Vec<f64> = (0..v.a.len())
        .map(|i| if v.a[i] > 0.0 { v.a[i] / v.p[i] } else { 0.0 })
        .collect();
    let weight_sum = stats::sum(w.iter().copied());
    let weighted = stats::sum((0..w.len()).map(|i| w[i] * v.r[i]));
    let (tau, if_values) = if hajek {
        let tau = weighted / weight_sum;
        let scale = n / weight_sum;
        (
            tau,
            (0..w.len())
                .map(|i| scale * w[i] * (v.r[i] - tau))
                .collect(),
        )
    } else {
        let tau = weighted / n;
        (
            tau,
            (0..w.len())
                .map(|i| w[i] * v.r[i] - tau)
                .collect::<Vec<_>>(),
        )
    };
    Ok(ArmResult {
        tau: tau - v.location,
        diagnostics: Diagnostics {
            eif_mean: stats::mean(&if_values),
            weight_sum: Some(weight_sum),
            dcar_residual: q
                .filter(|q| q.len() == data.n())
                .map(|q| dcar(&v, &v.p, &v.locate(q.arm(arm)))),
            n_clamped: e.n_clamped,
            converged: true,
            inference_valid: true,
            ..Default::default()
        },
        if_values,
    })
}

fn aipw_arm(data: &Dataset, arm: u8, e: &PropensityModel, q: &OutcomeModel) -> Result<ArmResult> {
    check_outcome(data, q)?;
    let v = arm_view(data, arm, Some(e.scores()))?;
    let qa = v.locate(q.arm(arm));
    let terms = eif(&v, &qa, 0.0);
    let tau = stats::mean(&terms);
    let if_values: Vec<f64> = terms.iter().map(|t| t - tau).collect();
    Ok(ArmResult {
        tau: tau - v.location,
        diagnostics: Diagnostics {
            eif_mean: stats::mean(&if_values),
            dcar_residual: Some(dcar(&v, &v.p, &qa)),
            n_clamped: e.n_clamped,
            converged: true,
            inference_valid: true,
            ..Default::default()
        },
        if_values,
    })
}

fn check_scaled(data: &Dataset, what: &str) -> Result<()> {
    if data.response().iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::Config(format!(
            "{what} needs the response scaled to [0, 1]"
        )));
    }
    Ok(())
}

fn tmle_arm(data: &Dataset, arm: u8, e: &PropensityModel, q: &OutcomeModel) -> Result<ArmResult> {
    check_outcome(data, q)?;
    check_scaled(data, "tmle")?;
    let v = arm_view(data, arm, Some(e.scores()))?;
    let qa = q.arm(arm);
    let n = data.n();
    let tol = EIF_TOL / (10.0 * data.response_range().max(1.0));

    let initial_score = stats::mean(
        &(0..n)
            .map(|i| v.a[i] / v.p[i] * (data.response()[i] - qa[i]))
            .collect::<Vec<_>>(),
    );
    let mut diagnostics = Diagnostics {
        n_clamped: e.n_clamped,
        converged: true,
        inference_valid: true,
        ..Default::default()
    };
    let q_star: Vec<f64> = if initial_score.abs() <= tol {
        diagnostics.epsilon.push(0.0);
        qa.to_vec()
    } else {
        let clipped: Vec<f64> = qa.iter().map(|&x| x.clamp(Q_CLIP, 1.0 - Q_CLIP)).collect();
        diagnostics.n_q_clipped = qa.iter().zip(&clipped).filter(|(a, b)| a != b).count();
        let rows: Vec<usize> = (0..n).filter(|&i| v.a[i] > 0.0).collect();
        let h = ndarray::Array2::from_shape_fn((rows.len(), 1), |(k, _)| 1.0 / v.p[rows[k]]);
        let offset: Vec<f64> = rows.iter().map(|&i| stats::logit(clipped[i])).collect();
        let y: Vec<f64> = rows.iter().map(|&i| data.response()[i]).collect();
        // the fit is normalized by the arm size; the EIF mean is over all rows
        let options = GlmOptions {
            tol_score: tol * n as f64 / rows.len() as f64,
            ..GlmOptions::default()
        };
        let fit = GlmProblem::new(h.view(), &y)
            .offset(&offset)
            .without_intercept()
            .options(options)
            .fit_logistic()?;
        if !fit.converged {
            return Err(Error::NotConverged {
                what: "tmle fluctuation",
                iterations: fit.iterations,
                gradient: fit.final_gradient_norm,
            });
        }
        let eps = fit.coefficients[1];
        diagnostics.epsilon.push(eps);
        diagnostics.iterations = fit.iterations;
        (0..n)
            .map(|i| stats::expit(stats::logit(clipped[i]) + eps / v.p[i]))
            .collect()
    };
    let q_star = v.locate(&q_star);
    let tau = stats::mean(&q_star);
    let if_values = eif(&v, &q_star, tau);
    diagnostics.eif_mean = stats::mean(&if_values);
    diagnostics.dcar_residual = Some(dcar(&v, &v.p, &q_star));
    Ok(ArmResult {
        tau: tau - v.location,
        if_values,
        diagnostics,
    })
}

fn tipw_arm(data: &Dataset, arm: u8, e: &PropensityModel, q: &OutcomeModel) -> Result<ArmResult> {
    check_outcome(data, q)?;
    let v = arm_view(data, arm, Some(e.scores()))?;
    let qa = v.locate(q.arm(arm));
    let n = data.n();
    let mut p = v.p.clone();
    let mut diagnostics = Diagnostics {
        n_clamped: e.n_clamped,
        inference_valid: true,
        ..Default::default()
    };
    let mut residual = dcar(&v, &p, &qa);
    let mut iterations = 0;
    while residual.abs() > EIF_TOL && iterations < TIPW_MAX_ITER {
        let h = ndarray::Array2::from_shape_fn((n, 1), |(i, _)| qa[i] / p[i]);
        let offset: Vec<f64> = p.iter().map(|&x| stats::logit(x)).collect();
        let options = GlmOptions {
            tol_score: EIF_TOL / 10.0,
            ..GlmOptions::default()
        };
        let fit = GlmProblem::new(h.view(), &v.a)
            .offset(&offset)
            .without_intercept()
            .options(options)
            .fit_logistic()?;
        let eps = fit.coefficients[1];
        diagnostics.epsilon.push(eps);
        p = (0..n)
            .map(|i| stats::expit(offset[i] + eps * h[[i, 0]]))
            .collect();
        if let Some(i) = (0..n).find(|&i| v.a[i] > 0.0 && !(p[i] > 0.0)) {
            return Err(Error::InvalidData(format!(
                "targeted propensity underflowed to zero on row {}",
                i + 1
            )));
        }
        residual = dcar(&v, &p, &qa);
        iterations += 1;
    }
    if diagnostics.epsilon.is_empty() {
        diagnostics.epsilon.push(0.0);
    }
    diagnostics.iterations = iterations;
    diagnostics.converged = residual.abs() <= EIF_TOL;
    if !diagnostics.converged {
        diagnostics.warnings.push(format!(
            "targeted IPW stopped after {iterations} updates with |D_CAR| = {:.3e}",
            residual.abs()
        ));
    }
    diagnostics.dcar_residual = Some(residual);
    let w: Vec<f64> = (0..n)
        .map(|i| if v.a[i] > 0.0 { v.a[i] / p[i] } else { 0.0 })
        .collect();
    diagnostics.weight_sum = Some(stats::sum(w.iter().copied()));
    let tau = stats::sum((0..n).map(|i| w[i] * v.r[i])) / n as f64;
    // once D_CAR is solved the IPW point equals its augmented form, whose
    // centred terms estimate the efficient influence function
    let if_values: Vec<f64> = (0..n)
        .map(|i| w[i] * (v.r[i] - qa[i]) + qa[i] - tau)
        .collect();
    diagnostics.eif_mean = stats::mean(&if_values);
    Ok(ArmResult {
        tau: tau - v.location,
        if_values,
        diagnostics,
    })
}

fn run_arm(
    data: &Dataset,
    estimator: Estimator,
    arm: u8,
    e: Option<&PropensityModel>,
    q: Option<&OutcomeModel>,
) -> Result<ArmResult> {
    let need_e = || e.ok_or(Error::MissingNuisance("propensity"));
    let need_q = || q.ok_or(Error::MissingNuisance("outcome"));
    match estimator {
        Estimator::Sub => sub_arm(data, arm, need_q()?, e),
        Estimator::Ipw => ipw_arm(data, arm, need_e()?, q, false),
        Estimator::IpwHajek => ipw_arm(data, arm, need_e()?, q, true),
        Estimator::Aipw => aipw_arm(data, arm, need_e()?, need_q()?),
        Estimator::Tmle => tmle_arm(data, arm, need_e()?, need_q()?),
        Estimator::Tipw => tipw_arm(data, arm, need_e()?, need_q()?),
    }
}

fn finish(
    data: &Dataset,
    estimand: Estimand,
    estimator: Estimator,
    point: f64,
    if_values: Vec<f64>,
    diagnostics: Diagnostics,
) -> EffectEstimate {
    let range = data.response_range();
    let if_values: Vec<f64> = if_values.into_iter().map(|v| v * range).collect();
    let se = stats::sd(&if_values) / (if_values.len() as f64).sqrt();
    let z = stats::normal_quantile(0.975);
    EffectEstimate {
        estimand,
        estimator,
        point,
        se,
        ci_95: (point - z * se, point + z * se),
        if_values,
        diagnostics,
    }
}

/// Runs `estimator` for `estimand`, taking whichever nuisances it needs.
///
/// The point estimate and influence values are reported on the original
/// response scale when `data` carries scaling bounds.
pub fn estimate(
    data: &Dataset,
    estimator: Estimator,
    estimand: Estimand,
    e: Option<&PropensityModel>,
    q: Option<&OutcomeModel>,
) -> Result<EffectEstimate> {
    match estimand.arm() {
        Some(arm) => {
            let r = run_arm(data, estimator, arm, e, q)?;
            Ok(finish(
                data,
                estimand,
                estimator,
                data.to_original_scale(r.tau),
                r.if_values,
                r.diagnostics,
            ))
        }
        None => {
            let r1 = run_arm(data, estimator, 1, e, q)?;
            let r0 = run_arm(data, estimator, 0, e, q)?;
            let point = data.to_original_scale(r1.tau) - data.to_original_scale(r0.tau);
            let if_values: Vec<f64> = r1
                .if_values
                .iter()
                .zip(&r0.if_values)
                .map(|(a, b)| a - b)
                .collect();
            let mut diagnostics = r1.diagnostics.merge(r0.diagnostics);
            diagnostics.eif_mean = stats::mean(&if_values);
            Ok(finish(
                data,
                estimand,
                estimator,
                point,
                if_values,
                diagnostics,
            ))
        }
    }
}

pub fn estimate_sub(
    data: &Dataset,
    q: &OutcomeModel,
    estimand: Estimand,
) -> Result<EffectEstimate> {
    estimate(data, Estimator::Sub, estimand, None, Some(q))
}

pub fn estimate_ipw(
    data: &Dataset,
    e: &PropensityModel,
    estimand: Estimand,
    hajek: bool,
) -> Result<EffectEstimate> {
    let estimator = if hajek {
        Estimator::IpwHajek
    } else {
        Estimator::Ipw
    };
    estimate(data, estimator, estimand, Some(e), None)
}

pub fn estimate_aipw(
    data: &Dataset,
    e: &PropensityModel,
    q: &OutcomeModel,
    estimand: Estimand,
) -> Result<EffectEstimate> {
    estimate(data, Estimator::Aipw, estimand, Some(e), Some(q))
}

pub fn estimate_tmle(
    data: &Dataset,
    e: &PropensityModel,
    q: &OutcomeModel,
    estimand: Estimand,
) -> Result<EffectEstimate> {
    estimate(data, Estimator::Tmle, estimand, Some(e), Some(q))
}

pub fn estimate_targeted_ipw(
    data: &Dataset,
    e: &PropensityModel,
    q: &OutcomeModel,
    estimand: Estimand,
) -> Result<EffectEstimate> {
    estimate(data, Estimator::Tipw, estimand, Some(e), Some(q))
}
