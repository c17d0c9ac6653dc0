//! L1-penalized logistic regression: proximal Newton outer steps, each solving
//! the penalized quadratic model by cyclic coordinate descent.
//!
//! Objective: `(1/n) sum_i w_i nll_i + lambda * sum_j |beta_j|`, intercept free.

use ndarray::ArrayView2;

use super::{bernoulli_nll, Family, GlmFit, GlmProblem, PROB_CLIP};
use crate::error::{Error, Result};
use crate::stats::expit;

/// Active-set passes between full sweeps.
const ACTIVE_PASSES: usize = 10;
/// Up to this many columns the inner solve works on the weighted Gram matrix,
/// making a sweep O(m^2) instead of O(nm).
const GRAM_MAX_COLUMNS: usize = 400;

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

struct State<'p, 'a> {
    problem: &'p GlmProblem<'a>,
    cols: &'p [Vec<f64>],
    lambda: f64,
    n: f64,
}

impl State<'_, '_> {
    fn objective(&self, eta: &[f64], beta: &[f64]) -> f64 {
        let nll: f64 = eta
            .iter()
            .enumerate()
            .map(|(i, &e)| self.problem.weight(i) * bernoulli_nll(e, self.problem.y[i]))
            .sum::<f64>()
            / self.n;
        nll + self.lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    /// Residuals `w_i (y_i - mu_i)` and the score vector (intercept first).
    fn score(&self, eta: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
        let resid: Vec<f64> = eta
            .iter()
            .enumerate()
            .map(|(i, &e)| self.problem.weight(i) * (self.problem.y[i] - expit(e)))
            .collect();
        let g0 = resid.iter().sum::<f64>() / self.n;
        let g = self
            .cols
            .iter()
            .map(|c| c.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / self.n)
            .collect();
        (resid, g0, g)
    }

    fn kkt_violation(&self, g0: f64, g: &[f64], beta: &[f64]) -> f64 {
        let mut worst = if self.problem.intercept {
            g0.abs()
        } else {
            0.0
        };
        for (gj, bj) in g.iter().zip(beta) {
            let v = if *bj == 0.0 {
                (gj.abs() - self.lambda).max(0.0)
            } else {
                (gj - self.lambda * bj.signum()).abs()
            };
            worst = worst.max(v);
        }
        worst
    }
}

pub(super) fn fit(
    problem: &GlmProblem<'_>,
    cols: &[Vec<f64>],
    lambda: f64,
    init: Option<&[f64]>,
) -> Result<GlmFit> {
    let n = problem.n();
    let m = cols.len();
    let opts = problem.options;
    let state = State {
        problem,
        cols,
        lambda,
        n: n as f64,
    };

    let (mut b0, mut beta) = match init {
        Some(c) => (if problem.intercept { c[0] } else { 0.0 }, c[1..].to_vec()),
        None => (0.0, vec![0.0; m]),
    };
    let mut eta: Vec<f64> = (0..n)
        .map(|i| {
            let mut e = problem.offset_at(i) + b0;
            for (c, b) in cols.iter().zip(&beta) {
                e += c[i] * b;
            }
            e
        })
        .collect();

    let mut sweeps = 0usize;
    let mut iterations = 0usize;
    let mut converged = false;
    let mut kkt;
    let mut w = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut polish_from: Option<(f64, Vec<f64>, f64)> = None;

    loop {
        let (_, g0, g) = state.score(&eta);
        kkt = state.kkt_violation(g0, &g, &beta);
        if let Some((pb0, pbeta, pkkt)) = polish_from.take() {
            if kkt > pkkt {
                b0 = pb0;
                beta = pbeta;
                kkt = pkkt;
            }
            break;
        }
        if kkt <= opts.tol_score {
            // converged; take one more outer step to polish, then stop
            converged = true;
            if kkt <= 1e-3 * opts.tol_score {
                break;
            }
            polish_from = Some((b0, beta.clone(), kkt));
        }
        if !converged && (iterations >= opts.max_iter || sweeps >= opts.max_sweeps) {
            break;
        }
        iterations += 1;

        for (i, wi) in w.iter_mut().enumerate() {
            let p = expit(eta[i]).clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            *wi = problem.weight(i) * p * (1.0 - p);
        }
        // Coordinate descent on the quadratic model in the new coefficients
        // (gamma0, gamma); q tracks the change in the linear predictor.
        let inner_tol = (1e-2 * kkt).clamp(1e-14, 1e-6);
        let quad = Quadratic {
            w: &w,
            g0,
            g: &g,
            b0,
            beta: &beta,
            tol: inner_tol,
        };
        let (gamma0, gamma) = if m <= GRAM_MAX_COLUMNS {
            let (gamma0, gamma) = inner_gram(&state, &quad, &mut sweeps);
            q.iter_mut().for_each(|qi| *qi = gamma0 - b0);
            for j in 0..m {
                let d = gamma[j] - beta[j];
                if d != 0.0 {
                    for (qi, x) in q.iter_mut().zip(&cols[j]) {
                        *qi += d * x;
                    }
                }
            }
            (gamma0, gamma)
        } else {
            inner_naive(&state, &quad, &mut sweeps, &mut q)
        };

        // Backtracking line search along the proximal Newton direction.
        let d0 = gamma0 - b0;
        let d: Vec<f64> = gamma.iter().zip(&beta).map(|(g, b)| g - b).collect();
        let l1_old: f64 = beta.iter().map(|b| b.abs()).sum();
        let l1_new: f64 = gamma.iter().map(|b| b.abs()).sum();
        let decrease = -(g0 * d0 + g.iter().zip(&d).map(|(g, d)| g * d).sum::<f64>())
            + lambda * (l1_new - l1_old);
        let current = state.objective(&eta, &beta);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let trial_beta: Vec<f64> = if t == 1.0 {
                gamma.clone()
            } else {
                beta.iter().zip(&d).map(|(b, d)| b + t * d).collect()
            };
            let trial_eta: Vec<f64> = eta.iter().zip(&q).map(|(e, q)| e + t * q).collect();
            let value = state.objective(&trial_eta, &trial_beta);
            if value <= current + 1e-4 * t * decrease.min(0.0) + 1e-15 * current.abs() {
                b0 += t * d0;
                beta = trial_beta;
                eta = trial_eta;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if let Some((pb0, pbeta, pkkt)) = polish_from.take() {
                b0 = pb0;
                beta = pbeta;
                kkt = pkkt;
            }
            break;
        }
    }

    let coefficients = std::iter::once(if problem.intercept { b0 } else { 0.0 })
        .chain(beta)
        .collect();
    Ok(GlmFit {
        coefficients,
        family: Family::Logistic,
        penalty: lambda,
        intercept: problem.intercept,
        offset_used: problem.offset.is_some(),
        converged,
        iterations,
        final_gradient_norm: kkt,
        ridge_used: false,
    })
}

/// Quadratic model of the smooth loss around `(b0, beta)`.
struct Quadratic<'q> {
    w: &'q [f64],
    g0: f64,
    g: &'q [f64],
    b0: f64,
    beta: &'q [f64],
    tol: f64,
}

/// Sweeps `update` over all coordinates, then over the active set, until
/// the largest weighted change falls below `tol`.
fn sweep_until(
    m: usize,
    intercept: bool,
    tol: f64,
    max_sweeps: usize,
    sweeps: &mut usize,
    gamma: &mut Vec<f64>,
    mut update: impl FnMut(usize, &mut Vec<f64>) -> f64,
) {
    // coordinate 0 is the intercept, coordinate j + 1 is column j
    let first = usize::from(!intercept);
    loop {
        let mut change = 0.0_f64;
        for j in first..=m {
            change = change.max(update(j, gamma));
        }
        *sweeps += 1;
        if change <= tol || *sweeps >= max_sweeps {
            return;
        }
        for _ in 0..ACTIVE_PASSES {
            let mut change = 0.0_f64;
            for j in first..=m {
                if j == 0 || gamma[j] != 0.0 {
                    change = change.max(update(j, gamma));
                }
            }
            *sweeps += 1;
            if change <= tol || *sweeps >= max_sweeps {
                break;
            }
        }
    }
}

fn coordinate_step(j: usize, a: f64, old: f64, smooth_grad: f64, lambda: f64) -> f64 {
    if j == 0 {
        old - smooth_grad / a
    } else {
        soft_threshold(a * old - smooth_grad, lambda) / a
    }
}

fn inner_gram(state: &State<'_, '_>, quad: &Quadratic<'_>, sweeps: &mut usize) -> (f64, Vec<f64>) {
    let m = state.cols.len();
    let k = m + 1;
    let n = state.n;
    let ones = vec![1.0; quad.w.len()];
    let col = |j: usize| -> &[f64] {
        if j == 0 {
            &ones
        } else {
            &state.cols[j - 1]
        }
    };
    let weighted: Vec<Vec<f64>> = (0..k)
        .map(|j| col(j).iter().zip(quad.w).map(|(x, w)| x * w).collect())
        .collect();
    let mut h = vec![0.0; k * k];
    for r in 0..k {
        for c in 0..=r {
            let v = weighted[r]
                .iter()
                .zip(col(c))
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n;
            h[r * k + c] = v;
            h[c * k + r] = v;
        }
    }
    let grad: Vec<f64> = std::iter::once(quad.g0)
        .chain(quad.g.iter().copied())
        .collect();
    let start: Vec<f64> = std::iter::once(quad.b0)
        .chain(quad.beta.iter().copied())
        .collect();
    let mut gamma = start.clone();
    // H (gamma - start)
    let mut hd = vec![0.0; k];
    let lambda = state.lambda;
    sweep_until(
        m,
        state.problem.intercept,
        quad.tol,
        state.problem.options.max_sweeps,
        sweeps,
        &mut gamma,
        |j, gamma| {
            let a = h[j * k + j];
            if a <= 0.0 {
                return 0.0;
            }
            let old = gamma[j];
            let new = coordinate_step(j, a, old, hd[j] - grad[j], lambda);
            let delta = new - old;
            if delta != 0.0 {
                gamma[j] = new;
                let hj = &h[j * k..(j + 1) * k];
                for (v, hv) in hd.iter_mut().zip(hj) {
                    *v += delta * hv;
                }
            }
            (delta * a).abs()
        },
    );
    let gamma0 = gamma[0];
    gamma.remove(0);
    (gamma0, gamma)
}

fn inner_naive(
    state: &State<'_, '_>,
    quad: &Quadratic<'_>,
    sweeps: &mut usize,
    q: &mut [f64],
) -> (f64, Vec<f64>) {
    let m = state.cols.len();
    let n = state.n;
    let ones = vec![1.0; quad.w.len()];
    let col = |j: usize| -> &[f64] {
        if j == 0 {
            &ones
        } else {
            &state.cols[j - 1]
        }
    };
    let curv: Vec<f64> = (0..=m)
        .map(|j| {
            col(j)
                .iter()
                .zip(quad.w)
                .map(|(x, w)| x * x * w)
                .sum::<f64>()
                / n
        })
        .collect();
    let grad: Vec<f64> = std::iter::once(quad.g0)
        .chain(quad.g.iter().copied())
        .collect();
    let mut gamma: Vec<f64> = std::iter::once(quad.b0)
        .chain(quad.beta.iter().copied())
        .collect();
    q.iter_mut().for_each(|v| *v = 0.0);
    let lambda = state.lambda;
    sweep_until(
        m,
        state.problem.intercept,
        quad.tol,
        state.problem.options.max_sweeps,
        sweeps,
        &mut gamma,
        |j, gamma| {
            let a = curv[j];
            if a <= 0.0 {
                return 0.0;
            }
            let c = col(j);
            let qw: f64 = c
                .iter()
                .zip(q.iter())
                .zip(quad.w)
                .map(|((x, q), w)| x * q * w)
                .sum::<f64>()
                / n;
            let old = gamma[j];
            let new = coordinate_step(j, a, old, qw - grad[j], lambda);
            let delta = new - old;
            if delta != 0.0 {
                gamma[j] = new;
                for (qi, x) in q.iter_mut().zip(c) {
                    *qi += delta * x;
                }
            }
            (delta * a).abs()
        },
    );
    let gamma0 = gamma[0];
    gamma.remove(0);
    (gamma0, gamma)
}

/// Geometric lambda grid from `lambda_max` (the smallest penalty that zeroes
/// every non-intercept coefficient) down to `lambda_max * ratio`.
pub fn lambda_path(
    design: ArrayView2<'_, f64>,
    y: &[f64],
    n_lambda: usize,
    ratio: f64,
) -> Result<Vec<f64>> {
    if n_lambda < 2 {
        return Err(Error::param("n_lambda", "must be at least 2"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::param(
            "ratio",
            format!("must lie in (0, 1), got {ratio}"),
        ));
    }
    if design.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: design.nrows(),
        });
    }
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::InvalidData(
            "response has a single class; lambda path undefined".into(),
        ));
    }
    let lambda_max = design
        .columns()
        .into_iter()
        .map(|c| (c.iter().zip(y).map(|(x, v)| x * (v - ybar)).sum::<f64>() / n).abs())
        .fold(0.0_f64, f64::max);
    if lambda_max <= 0.0 {
        return Err(Error::InvalidData(
            "all design columns are orthogonal to the response".into(),
        ));
    }
    // Inflated by a relative 1e-12 so the null fit is exactly optimal despite rounding.
    let lambda_max = lambda_max * (1.0 + 1e-12);
    Ok((0..n_lambda)
        .map(|k| lambda_max * ratio.powf(k as f64 / (n_lambda - 1) as f64))
        .collect())
}
