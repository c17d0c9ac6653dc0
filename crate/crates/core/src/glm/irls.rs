use super::linalg::solve_normal_equations;
use super::{bernoulli_nll, Family, GlmFit, GlmProblem, PROB_CLIP, SEPARATION_THRESHOLD};
use crate::error::{Error, Result};
use crate::stats::expit;

/// Newton steps smaller than this (max-norm) count as settled; together with
/// the score tolerance this keeps separated problems from looking converged
/// once their score has decayed.
const STEP_TOL: f64 = 1e-4;

/// Column list including a leading column of ones when the problem has an intercept.
fn full_columns<'c>(
    problem: &GlmProblem<'_>,
    cols: &'c [Vec<f64>],
    ones: &'c [f64],
) -> Vec<&'c [f64]> {
    let mut out: Vec<&[f64]> = Vec::with_capacity(cols.len() + 1);
    if problem.intercept {
        out.push(ones);
    }
    out.extend(cols.iter().map(|c| c.as_slice()));
    out
}

fn eta_of(problem: &GlmProblem<'_>, columns: &[&[f64]], beta: &[f64]) -> Vec<f64> {
    let n = problem.n();
    let mut eta: Vec<f64> = (0..n).map(|i| problem.offset_at(i)).collect();
    for (col, &b) in columns.iter().zip(beta) {
        if b != 0.0 {
            for (e, x) in eta.iter_mut().zip(col.iter()) {
                *e += b * x;
            }
        }
    }
    eta
}

fn weighted_gram(problem: &GlmProblem<'_>, columns: &[&[f64]], w: &[f64]) -> Vec<f64> {
    let k = columns.len();
    let n = problem.n() as f64;
    let mut a = vec![0.0; k * k];
    for r in 0..k {
        for c in 0..=r {
            let v: f64 = columns[r]
                .iter()
                .zip(columns[c].iter())
                .zip(w)
                .map(|((x, z), w)| x * z * w)
                .sum::<f64>()
                / n;
            a[r * k + c] = v;
            a[c * k + r] = v;
        }
    }
    a
}

fn expand(problem: &GlmProblem<'_>, beta: &[f64]) -> Vec<f64> {
    if problem.intercept {
        beta.to_vec()
    } else {
        std::iter::once(0.0).chain(beta.iter().copied()).collect()
    }
}

pub(super) fn fit_logistic(problem: &GlmProblem<'_>, cols: &[Vec<f64>]) -> Result<GlmFit> {
    let n = problem.n();
    let ones = vec![1.0; n];
    let columns = full_columns(problem, cols, &ones);
    let k = columns.len();
    let opts = problem.options;

    let objective = |eta: &[f64]| -> f64 {
        eta.iter()
            .enumerate()
            .map(|(i, &e)| problem.weight(i) * bernoulli_nll(e, problem.y[i]))
            .sum::<f64>()
            / n as f64
    };

    let mut beta = vec![0.0; k];
    let mut eta = eta_of(problem, &columns, &beta);
    let mut ridge_used = false;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;

    for iter in 0..=opts.max_iter {
        let mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let resid: Vec<f64> = (0..n)
            .map(|i| problem.weight(i) * (problem.y[i] - mu[i]))
            .collect();
        let score: Vec<f64> = columns
            .iter()
            .map(|c| c.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / n as f64)
            .collect();
        grad_norm = score.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
        if k == 0 {
            converged = true;
            break;
        }
        let w: Vec<f64> = mu
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                problem.weight(i) * p * (1.0 - p)
            })
            .collect();
        let gram = weighted_gram(problem, &columns, &w);
        let (step, ridged) = solve_normal_equations(&gram, &score, k);
        ridge_used |= ridged;
        let step_norm = step.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
        if grad_norm <= opts.tol_score && step_norm <= STEP_TOL {
            converged = true;
            // one final full Newton step; within the quadratic region it
            // squares the remaining error
            let polished: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + s).collect();
            let polished_eta = eta_of(problem, &columns, &polished);
            if objective(&polished_eta) <= objective(&eta) {
                beta = polished;
                eta = polished_eta;
                let mu: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
                grad_norm = columns
                    .iter()
                    .map(|c| {
                        let s: f64 = (0..n)
                            .map(|i| c[i] * problem.weight(i) * (problem.y[i] - mu[i]))
                            .sum();
                        (s / n as f64).abs()
                    })
                    .fold(0.0_f64, f64::max);
            }
            break;
        }
        if iter == opts.max_iter {
            break;
        }
        iterations = iter + 1;

        // step halving on the negative log-likelihood
        let current = objective(&eta);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let trial_eta = eta_of(problem, &columns, &trial);
            let value = objective(&trial_eta);
            if value <= current + 1e-12 * current.abs().max(1.0) {
                beta = trial;
                eta = trial_eta;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        let start = usize::from(problem.intercept);
        let magnitude = beta[start..].iter().fold(0.0_f64, |m, b| m.max(b.abs()));
        let intercept_mag = if problem.intercept {
            beta[0].abs()
        } else {
            0.0
        };
        if magnitude > SEPARATION_THRESHOLD || intercept_mag > SEPARATION_THRESHOLD {
            return Err(Error::Separation {
                magnitude: magnitude.max(intercept_mag),
            });
        }
    }

    Ok(GlmFit {
        coefficients: expand(problem, &beta),
        family: Family::Logistic,
        penalty: 0.0,
        intercept: problem.intercept,
        offset_used: problem.offset.is_some(),
        converged,
        iterations,
        final_gradient_norm: grad_norm,
        ridge_used,
    })
}

pub(super) fn fit_linear(problem: &GlmProblem<'_>, cols: &[Vec<f64>]) -> Result<GlmFit> {
    let n = problem.n();
    let ones = vec![1.0; n];
    let columns = full_columns(problem, cols, &ones);
    let k = columns.len();
    let w: Vec<f64> = (0..n).map(|i| problem.weight(i)).collect();
    let target: Vec<f64> = (0..n)
        .map(|i| problem.y[i] - problem.offset_at(i))
        .collect();

    let (beta, ridge_used) = if k == 0 {
        (Vec::new(), false)
    } else {
        let gram = weighted_gram(problem, &columns, &w);
        let rhs: Vec<f64> = columns
            .iter()
            .map(|c| (0..n).map(|i| c[i] * w[i] * target[i]).sum::<f64>() / n as f64)
            .collect();
        solve_normal_equations(&gram, &rhs, k)
    };
    let eta = eta_of(problem, &columns, &beta);
    let grad_norm = columns
        .iter()
        .map(|c| {
            ((0..n)
                .map(|i| c[i] * w[i] * (problem.y[i] - eta[i]))
                .sum::<f64>()
                / n as f64)
                .abs()
        })
        .fold(0.0_f64, f64::max);

    Ok(GlmFit {
        coefficients: expand(problem, &beta),
        family: Family::Linear,
        penalty: 0.0,
        intercept: problem.intercept,
        offset_used: problem.offset.is_some(),
        converged: true,
        iterations: 1,
        final_gradient_norm: grad_norm,
        ridge_used,
    })
}
