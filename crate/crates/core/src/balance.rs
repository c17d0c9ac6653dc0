//! Score-based balance diagnostics for a fitted propensity score.
//!
//! For a direction `f`, the score of the submodel
//! `logit e(X) = logit e_n(X) + beta f(X)` at `beta = 0` is
//! `s_i = f(X_i)(Z_i - e_n(X_i))`. Its sample mean is the balance residual and
//! `sqrt(n) mean(s) / sd(s)` is the score statistic for `beta = 0`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::basis::{BasisExpansion, BasisSpec, KnotStrategy};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionSource {
    Covariate,
    BasisColumn,
    EifWeight,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Direction {
    pub name: String,
    pub source: DirectionSource,
    #[serde(skip)]
    pub values: Vec<f64>,
}

/// Named functions `f(X_i)` evaluated on the sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DirectionSet {
    pub directions: Vec<Direction>,
    /// Directions discarded because they are constant on the sample.
    pub dropped: Vec<String>,
}

impl DirectionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a direction; constant directions are recorded in `dropped` instead.
    pub fn push(
        &mut self,
        name: impl Into<String>,
        source: DirectionSource,
        values: Vec<f64>,
    ) -> Result<()> {
        let name = name.into();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateDirection(format!(
                "{name} has non-finite values"
            )));
        }
        if let Some(first) = values.first() {
            if values.iter().all(|v| v == first) {
                self.dropped.push(name);
                return Ok(());
            }
        }
        self.directions.push(Direction {
            name,
            source,
            values,
        });
        Ok(())
    }

    /// Raw covariates, optionally centred at their sample means.
    pub fn add_covariates(&mut self, data: &Dataset, centre: bool) -> Result<()> {
        for (j, name) in data.covariate_names().iter().enumerate() {
            let values = data.covariate(j).to_vec();
            self.push(
                name.clone(),
                DirectionSource::Covariate,
                maybe_centre(values, centre),
            )?;
        }
        Ok(())
    }

    /// Columns of a basis expansion, optionally centred.
    pub fn add_basis(
        &mut self,
        basis: &BasisExpansion,
        names: &[String],
        centre: bool,
    ) -> Result<()> {
        for (k, term) in basis.terms().iter().enumerate() {
            let values = basis.design().column(k).to_vec();
            self.push(
                term.name(names),
                DirectionSource::BasisColumn,
                maybe_centre(values, centre),
            )?;
        }
        Ok(())
    }

    /// The weight `Qbar(1,X)/e(X)` of the efficient score.
    pub fn add_eif_weight(&mut self, q1: &[f64], scores: &[f64]) -> Result<()> {
        let values = q1.iter().zip(scores).map(|(q, e)| q / e).collect();
        self.push("eif_weight", DirectionSource::EifWeight, values)
    }

    pub fn add_user(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        self.push(name, DirectionSource::User, values)
    }

    /// Raw covariates and degree-one basis columns (both centred) plus the
    /// efficient-score weight when outcome predictions are supplied.
    pub fn default_for(data: &Dataset, eif: Option<(&[f64], &[f64])>) -> Result<Self> {
        let mut set = Self::new();
        set.add_covariates(data, true)?;
        let spec = BasisSpec {
            max_interaction_degree: 1,
            knots: KnotStrategy::AllObserved,
        };
        let basis = BasisExpansion::build(data, spec)?;
        set.add_basis(&basis, data.covariate_names(), true)?;
        if let Some((q1, scores)) = eif {
            set.add_eif_weight(q1, scores)?;
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Direction> {
        self.directions.iter()
    }
}

fn maybe_centre(mut values: Vec<f64>, centre: bool) -> Vec<f64> {
    if centre {
        let m = stats::mean(&values);
        values.iter_mut().for_each(|v| *v -= m);
    }
    values
}

fn score_terms(data: &Dataset, scores: &[f64], f: &[f64]) -> Vec<f64> {
    data.treatment()
        .iter()
        .zip(scores)
        .zip(f)
        .map(|((&z, &e), &f)| f * (f64::from(z) - e))
        .collect()
}

/// `P_n f(X)(Z - e(X))` for one direction.
pub fn score_residual(data: &Dataset, scores: &[f64], f: &[f64]) -> f64 {
    stats::mean(&score_terms(data, scores, f))
}

/// Residuals for every direction, in set order.
pub fn score_residuals(data: &Dataset, scores: &[f64], dirs: &DirectionSet) -> Vec<(String, f64)> {
    dirs.iter()
        .map(|d| (d.name.clone(), score_residual(data, scores, &d.values)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreTest {
    pub residual: f64,
    pub sd: f64,
    pub statistic: f64,
    pub p_value: f64,
}

/// Score test of `beta = 0` in `logit e = logit e_n + beta f`, treating `e_n` as fixed.
pub fn score_test(data: &Dataset, scores: &[f64], f: &[f64]) -> Result<ScoreTest> {
    let s = score_terms(data, scores, f);
    let residual = stats::mean(&s);
    let sd = stats::sd(&s);
    if !(sd > 0.0) {
        return Err(Error::DegenerateDirection(
            "score terms have zero variance".into(),
        ));
    }
    let statistic = (s.len() as f64).sqrt() * residual / sd;
    Ok(ScoreTest {
        residual,
        sd,
        statistic,
        p_value: stats::two_sided_p(statistic),
    })
}

/// `P_n [Qbar(1,X)/e(X)](Z - e(X))`.
pub fn dcar_residual(data: &Dataset, scores: &[f64], q1: &[f64]) -> f64 {
    let w: Vec<f64> = q1.iter().zip(scores).map(|(q, e)| q / e).collect();
    score_residual(data, scores, &w)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionRecord {
    pub name: String,
    pub source: DirectionSource,
    pub residual: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyDecision {
    Balanced,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub alpha: f64,
    /// Per-direction level after Bonferroni correction.
    pub corrected_alpha: f64,
    pub family_decision: FamilyDecision,
    pub rejected_directions: Vec<String>,
    pub max_abs_statistic: f64,
    pub max_direction: String,
    /// Sorted by `|statistic|`, largest first.
    pub directions: Vec<DirectionRecord>,
    /// Directions whose score terms had zero variance.
    pub degenerate: Vec<String>,
    /// Directions constant on the sample.
    pub dropped: Vec<String>,
}

impl BalanceReport {
    pub fn is_balanced(&self) -> bool {
        self.family_decision == FamilyDecision::Balanced
    }

    pub fn to_text(&self) -> String {
        let width = self
            .directions
            .iter()
            .map(|d| d.name.len())
            .chain(std::iter::once("direction".len()))
            .max()
            .unwrap_or(9);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>13}  {:>10}  {:>10}  reject",
            "direction", "residual", "statistic", "p_value"
        );
        for d in &self.directions {
            let _ = writeln!(
                out,
                "{:<width$}  {:>13.6e}  {:>10.4}  {:>10.4}  {}",
                d.name,
                d.residual,
                d.statistic,
                d.p_value,
                if d.rejected { "yes" } else { "no" }
            );
        }
        let _ = writeln!(
            out,
            "\nalpha {} (Bonferroni per-direction {:.3e}); decision: {}",
            self.alpha,
            self.corrected_alpha,
            match self.family_decision {
                FamilyDecision::Balanced => "balanced".to_string(),
                FamilyDecision::Rejected =>
                    format!("rejected ({})", self.rejected_directions.join(", ")),
            }
        );
        for name in &self.degenerate {
            let _ = writeln!(out, "skipped degenerate direction {name}");
        }
        for name in &self.dropped {
            let _ = writeln!(out, "dropped constant direction {name}");
        }
        out
    }
}

/// Score test for every direction with a Bonferroni family decision at `alpha`.
pub fn balance_sweep(
    data: &Dataset,
    scores: &[f64],
    dirs: &DirectionSet,
    alpha: f64,
) -> Result<BalanceReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(
            "alpha",
            format!("must lie in (0, 1), got {alpha}"),
        ));
    }
    if scores.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            got: scores.len(),
        });
    }
    let mut tests = Vec::new();
    let mut degenerate = Vec::new();
    for d in dirs.iter() {
        match score_test(data, scores, &d.values) {
            Ok(t) => tests.push((d, t)),
            Err(Error::DegenerateDirection(_)) => degenerate.push(d.name.clone()),
            Err(e) => return Err(e),
        }
    }
    if tests.is_empty() {
        return Err(Error::NoDirections);
    }
    let corrected = alpha / tests.len() as f64;
    let mut records: Vec<DirectionRecord> = tests
        .into_iter()
        .map(|(d, t)| DirectionRecord {
            name: d.name.clone(),
            source: d.source,
            residual: t.residual,
            statistic: t.statistic,
            p_value: t.p_value,
            rejected: t.p_value < corrected,
        })
        .collect();
    records.sort_by(|a, b| {
        b.statistic
            .abs()
            .total_cmp(&a.statistic.abs())
            .then_with(|| a.name.cmp(&b.name))
    });
    let rejected: Vec<String> = records
        .iter()
        .filter(|r| r.rejected)
        .map(|r| r.name.clone())
        .collect();
    Ok(BalanceReport {
        alpha,
        corrected_alpha: corrected,
        family_decision: if rejected.is_empty() {
            FamilyDecision::Balanced
        } else {
            FamilyDecision::Rejected
        },
        rejected_directions: rejected,
        max_abs_statistic: records[0].statistic.abs(),
        max_direction: records[0].name.clone(),
        directions: records,
        degenerate,
        dropped: dirs.dropped.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn d4b() -> Dataset {
        Dataset::from_columns(
            array![[0.0], [1.0], [1.0], [1.0]],
            vec![0, 1, 1, 0],
            vec![0.0; 4],
        )
        .unwrap()
    }

    #[test]
    fn residual_examples() {
        let data = d4b();
        assert_eq!(
            score_residual(&data, &[0.5; 4], &[0.0, 1.0, 1.0, 1.0]),
            0.125
        );
        assert_eq!(
            score_residual(&data, &[0.0, 1.0, 1.0, 0.0], &[3.0, 1.0, 4.0, 1.0]),
            0.0
        );
        assert_eq!(score_residual(&data, &[0.5; 4], &[1.0; 4]), 0.0);
    }

    #[test]
    fn score_test_matches_reference_values() {
        let t = score_test(&d4b(), &[0.5; 4], &[0.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((t.sd - 0.478713553878169).abs() < 1e-12);
        assert!((t.statistic - 0.522232967867094).abs() < 1e-12);
        assert!((t.p_value - 0.601508134440590).abs() < 1e-9);
    }

    #[test]
    fn zero_residual_gives_null_statistic() {
        let data = Dataset::from_columns(
            array![[0.0], [1.0], [2.0], [3.0]],
            vec![1, 0, 0, 1],
            vec![0.0; 4],
        )
        .unwrap();
        let t = score_test(&data, &[0.5; 4], &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
    }

    #[test]
    fn degenerate_direction_is_an_error() {
        let data = d4b();
        assert!(matches!(
            score_test(&data, &[0.0, 1.0, 1.0, 0.0], &[1.0, 2.0, 3.0, 4.0]),
            Err(Error::DegenerateDirection(_))
        ));
        let mut dirs = DirectionSet::new();
        dirs.add_user("f", vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(
            balance_sweep(&data, &[0.0, 1.0, 1.0, 0.0], &dirs, 0.05),
            Err(Error::NoDirections)
        ));
    }

    #[test]
    fn constant_directions_are_dropped() {
        let mut dirs = DirectionSet::new();
        dirs.add_user("one", vec![1.0; 4]).unwrap();
        dirs.add_user("x", vec![0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(dirs.len(), 1);
        assert_eq!(dirs.dropped, vec!["one".to_string()]);
        assert!(dirs.add_user("bad", vec![f64::NAN; 4]).is_err());
    }

    #[test]
    fn dcar_is_the_eif_weight_residual() {
        let data = Dataset::from_columns(
            array![[0.0], [0.0], [1.0], [1.0]],
            vec![1, 0, 1, 0],
            vec![3.0, 1.0, 5.0, 3.0],
        )
        .unwrap();
        let q1 = [3.0, 3.0, 5.0, 5.0];
        let e = [0.5; 4];
        assert_eq!(dcar_residual(&data, &e, &q1), 0.0);
        let e2 = [0.3, 0.6, 0.7, 0.2];
        let mut dirs = DirectionSet::new();
        dirs.add_eif_weight(&q1, &e2).unwrap();
        assert_eq!(
            score_residuals(&data, &e2, &dirs)[0].1,
            dcar_residual(&data, &e2, &q1)
        );
        assert_eq!(dcar_residual(&data, &e2, &[0.0; 4]), 0.0);
    }

    #[test]
    fn sweep_sorts_and_corrects() {
        let n = 200;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let z: Vec<u8> = x.iter().map(|&v| u8::from(v > 0.5)).collect();
        let data = Dataset::from_columns(
            ndarray::Array2::from_shape_vec((n, 1), x.clone()).unwrap(),
            z,
            vec![0.0; n],
        )
        .unwrap();
        let mut dirs = DirectionSet::new();
        dirs.add_user("noise", (0..n).map(|i| ((i * 7919) % 13) as f64).collect())
            .unwrap();
        dirs.add_covariates(&data, true).unwrap();
        let report = balance_sweep(&data, &vec![0.5; n], &dirs, 0.05).unwrap();
        assert_eq!(report.corrected_alpha, 0.025);
        assert_eq!(report.max_direction, "x1");
        assert_eq!(report.rejected_directions, vec!["x1".to_string()]);
        assert!(!report.is_balanced());
        assert!(report.directions[0].statistic.abs() >= report.directions[1].statistic.abs());
        assert!(report.to_text().contains("rejected (x1)"));
    }
}
