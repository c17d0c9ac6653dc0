use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::glm::{GlmFit, GlmProblem};

/// Fold labels `0..v`, stratified by `strata` (treatment arm) and shuffled
/// with a seeded stream so assignments are reproducible.
pub fn stratified_folds(strata: &[u8], v: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; strata.len()];
    let mut offset = 0;
    for level in [0u8, 1u8] {
        let mut idx: Vec<usize> = (0..strata.len()).filter(|&i| strata[i] == level).collect();
        idx.shuffle(&mut rng);
        for (k, &i) in idx.iter().enumerate() {
            folds[i] = (k + offset) % v;
        }
        // continue the round-robin so small arms do not all start at fold 0
        offset = (offset + idx.len()) % v;
    }
    folds
}

/// Fits the L1 logistic path with warm starts.
pub(crate) fn fit_path(problem: &GlmProblem<'_>, path: &[f64]) -> Result<Vec<GlmFit>> {
    let mut fits: Vec<GlmFit> = Vec::with_capacity(path.len());
    for &lambda in path {
        let warm = fits.last().map(|f| f.coefficients.as_slice());
        fits.push(problem.fit_logistic_l1_from(lambda, warm)?);
    }
    Ok(fits)
}

pub(crate) fn binomial_deviance(y: f64, mu: f64) -> f64 {
    let mu = mu.clamp(1e-15, 1.0 - 1e-15);
    let mut d = 0.0;
    if y > 0.0 {
        d -= y * (mu / y).ln();
    }
    if y < 1.0 {
        d -= (1.0 - y) * ((1.0 - mu) / (1.0 - y)).ln();
    }
    2.0 * d
}

/// Mean held-out deviance for each lambda of the path (V-fold).
pub(crate) fn cv_deviance(
    design: ArrayView2<'_, f64>,
    y: &[f64],
    path: &[f64],
    folds: &[usize],
    v: usize,
) -> Result<Vec<f64>> {
    let n = y.len();
    let mut total = vec![0.0; path.len()];
    for k in 0..v {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != k).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == k).collect();
        if test.is_empty() {
            continue;
        }
        if train.is_empty() {
            return Err(Error::InvalidData(
                "cross-validation fold left no training rows".into(),
            ));
        }
        let x_train = design.select(Axis(0), &train);
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let x_test = design.select(Axis(0), &test);
        let problem = GlmProblem::new(x_train.view(), &y_train);
        let fits = fit_path(&problem, path)?;
        for (slot, fit) in total.iter_mut().zip(&fits) {
            let mu = fit.predict(x_test.view(), None);
            *slot += test
                .iter()
                .zip(&mu)
                .map(|(&i, &m)| binomial_deviance(y[i], m))
                .sum::<f64>();
        }
    }
    Ok(total.into_iter().map(|t| t / n as f64).collect())
}

/// Index of the smallest CV deviance; ties go to the larger penalty.
pub(crate) fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = k;
        }
    }
    best
}
