//! Zero-order spline (indicator) basis for highly adaptive lasso sieves.
//!
//! Each column is a tensor product of step functions
//! `prod_{s in S} 1(x_s >= knot_s)` over a covariate subset `S`. Knot vectors
//! come from the observed rows (optionally snapped to marginal quantiles), so
//! a subset of size `d` contributes at most `n` columns before deduplication.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::GlmFit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum KnotStrategy {
    AllObserved,
    /// `k` marginal quantile knots per covariate.
    Quantile(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub max_interaction_degree: usize,
    pub knots: KnotStrategy,
}

impl BasisSpec {
    /// Degree `min(p, 2)` with knots at every observed value.
    pub fn default_for(p: usize) -> Self {
        Self {
            max_interaction_degree: p.clamp(1, 2),
            knots: KnotStrategy::AllObserved,
        }
    }
}

/// One design column: the covariate subset and the knot for each member.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasisTerm {
    pub covariates: Vec<usize>,
    pub knots: Vec<f64>,
}

impl BasisTerm {
    pub fn eval(&self, row: ndarray::ArrayView1<'_, f64>) -> f64 {
        let on = self
            .covariates
            .iter()
            .zip(&self.knots)
            .all(|(&s, &k)| row[s] >= k);
        if on {
            1.0
        } else {
            0.0
        }
    }

    pub fn name(&self, covariate_names: &[String]) -> String {
        self.covariates
            .iter()
            .zip(&self.knots)
            .map(|(&s, k)| format!("1({}>={})", covariate_names[s], k))
            .collect::<Vec<_>>()
            .join("*")
    }
}

#[derive(Debug, Clone)]
pub struct BasisExpansion {
    design: Array2<f64>,
    terms: Vec<BasisTerm>,
    spec: BasisSpec,
    p: usize,
}

impl BasisExpansion {
    pub fn build(data: &Dataset, spec: BasisSpec) -> Result<Self> {
        Self::build_from(data.covariates(), spec)
    }

    pub fn build_from(x: ArrayView2<'_, f64>, spec: BasisSpec) -> Result<Self> {
        let (n, p) = x.dim();
        if spec.max_interaction_degree == 0 {
            return Err(Error::param("max_interaction_degree", "must be at least 1"));
        }
        if spec.max_interaction_degree > p {
            return Err(Error::param(
                "max_interaction_degree",
                format!(
                    "{} exceeds the number of covariates ({p})",
                    spec.max_interaction_degree
                ),
            ));
        }
        if let KnotStrategy::Quantile(k) = spec.knots {
            if k < 2 {
                return Err(Error::param(
                    "knots",
                    "quantile knot count must be at least 2",
                ));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("basis covariates".into()));
        }

        let grids: Option<Vec<Vec<f64>>> = match spec.knots {
            KnotStrategy::AllObserved => None,
            KnotStrategy::Quantile(k) => Some(
                (0..p)
                    .map(|j| quantile_grid(x.column(j).iter().copied(), k))
                    .collect(),
            ),
        };

        let mut seen: HashSet<Vec<u64>> = HashSet::new();
        let mut terms = Vec::new();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for degree in 1..=spec.max_interaction_degree {
            for subset in combinations(p, degree) {
                let mut knot_vectors: Vec<Vec<f64>> = (0..n)
                    .map(|i| {
                        subset
                            .iter()
                            .map(|&s| match &grids {
                                None => x[[i, s]],
                                Some(g) => snap_down(&g[s], x[[i, s]]),
                            })
                            .collect()
                    })
                    .collect();
                knot_vectors.sort_by(|a, b| a.partial_cmp(b).expect("finite knots"));
                knot_vectors.dedup();
                for knots in knot_vectors {
                    let term = BasisTerm {
                        covariates: subset.clone(),
                        knots,
                    };
                    let col: Vec<f64> = x.rows().into_iter().map(|row| term.eval(row)).collect();
                    if seen.insert(pack_bits(&col)) {
                        terms.push(term);
                        columns.push(col);
                    }
                }
            }
        }

        let m = terms.len();
        let mut design = Array2::zeros((n, m));
        for (j, col) in columns.into_iter().enumerate() {
            for (i, v) in col.into_iter().enumerate() {
                design[[i, j]] = v;
            }
        }
        Ok(Self {
            design,
            terms,
            spec,
            p,
        })
    }

    /// Evaluates the stored terms on new rows; no knots are added.
    pub fn evaluate(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: x.ncols(),
            });
        }
        let mut out = Array2::zeros((x.nrows(), self.terms.len()));
        for (i, row) in x.rows().into_iter().enumerate() {
            for (j, term) in self.terms.iter().enumerate() {
                out[[i, j]] = term.eval(row);
            }
        }
        Ok(out)
    }

    /// Indicator design without the intercept column.
    pub fn design(&self) -> ArrayView2<'_, f64> {
        self.design.view()
    }

    /// Design with a leading column of ones.
    pub fn design_with_intercept(&self) -> Array2<f64> {
        let (n, m) = self.design.dim();
        let mut out = Array2::ones((n, m + 1));
        out.slice_mut(ndarray::s![.., 1..]).assign(&self.design);
        out
    }

    pub fn terms(&self) -> &[BasisTerm] {
        &self.terms
    }

    pub fn spec(&self) -> BasisSpec {
        self.spec
    }

    pub fn n_columns(&self) -> usize {
        self.terms.len()
    }
}

/// Sum of absolute non-intercept coefficients.
pub fn sectional_variation_norm(fit: &GlmFit) -> f64 {
    fit.coefficients[1..].iter().map(|b| b.abs()).sum()
}

fn pack_bits(col: &[f64]) -> Vec<u64> {
    let mut words = vec![0u64; col.len().div_ceil(64)];
    for (i, &v) in col.iter().enumerate() {
        if v != 0.0 {
            words[i / 64] |= 1 << (i % 64);
        }
    }
    words
}

/// All `k`-subsets of `0..p` in lexicographic order.
fn combinations(p: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, p: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..p {
            cur.push(j);
            rec(j + 1, p, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, p, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// `k` empirical quantiles at probabilities `0, 1/k, ..., (k-1)/k`, deduplicated.
fn quantile_grid(values: impl Iterator<Item = f64>, k: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite covariates"));
    let n = sorted.len();
    let mut grid: Vec<f64> = (0..k).map(|q| sorted[(q * n) / k]).collect();
    grid.dedup();
    grid
}

/// Largest grid value not exceeding `v`; the grid starts at the sample minimum.
fn snap_down(grid: &[f64], v: f64) -> f64 {
    let idx = grid.partition_point(|&g| g <= v);
    grid[idx.saturating_sub(1)]
}
