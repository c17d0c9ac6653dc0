//! Independent oracles shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// `(1/n) sum (softplus(eta) - y eta) + lambda sum |beta|`; `coef` is intercept first.
pub fn l1_objective(x: &Array2<f64>, y: &[f64], coef: &[f64], lambda: f64) -> f64 {
    let n = y.len();
    let nll: f64 = (0..n)
        .map(|i| {
            let eta = coef[0] + (0..x.ncols()).map(|j| x[[i, j]] * coef[j + 1]).sum::<f64>();
            softplus(eta) - y[i] * eta
        })
        .sum::<f64>()
        / n as f64;
    nll + lambda * coef[1..].iter().map(|b| b.abs()).sum::<f64>()
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let k = b.len();
    for c in 0..k {
        let p = (c..k)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..k {
            let f = a[r][c] / a[c][c];
            for j in c..k {
                a[r][j] -= f * a[c][j];
            }
            b[r] -= f * b[c];
        }
    }
    let mut out = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|j| a[r][j] * out[j]).sum();
        out[r] = (b[r] - s) / a[r][r];
    }
    out
}

/// Minimizes the smooth surrogate on one orthant face: coordinates in `free`
/// move, penalty `lambda * sign_j * beta_j`, the rest stay at zero.
fn face_minimum(x: &Array2<f64>, y: &[f64], signs: &[i8], lambda: f64) -> Vec<f64> {
    let n = y.len();
    let free: Vec<usize> = (0..x.ncols()).filter(|&j| signs[j] != 0).collect();
    let k = free.len() + 1;
    let feature = |i: usize, c: usize| if c == 0 { 1.0 } else { x[[i, free[c - 1]]] };
    let surrogate = |t: &[f64]| -> f64 {
        let nll: f64 = (0..n)
            .map(|i| {
                let eta: f64 = (0..k).map(|c| feature(i, c) * t[c]).sum();
                softplus(eta) - y[i] * eta
            })
            .sum::<f64>()
            / n as f64;
        nll + lambda
            * (1..k)
                .map(|c| f64::from(signs[free[c - 1]]) * t[c])
                .sum::<f64>()
    };
    let mut t = vec![0.0; k];
    for _ in 0..200 {
        let mut g = vec![0.0; k];
        let mut h = vec![vec![0.0; k]; k];
        for i in 0..n {
            let eta: f64 = (0..k).map(|c| feature(i, c) * t[c]).sum();
            let p = sigmoid(eta);
            for a in 0..k {
                g[a] += (p - y[i]) * feature(i, a) / n as f64;
                for b in 0..k {
                    h[a][b] += p * (1.0 - p) * feature(i, a) * feature(i, b) / n as f64;
                }
            }
        }
        for c in 1..k {
            g[c] += lambda * f64::from(signs[free[c - 1]]);
        }
        if g.iter().all(|v| v.abs() < 1e-14) {
            break;
        }
        let step = solve(h, g.iter().map(|v| -v).collect());
        let f0 = surrogate(&t);
        let mut s = 1.0;
        loop {
            let trial: Vec<f64> = t.iter().zip(&step).map(|(a, d)| a + s * d).collect();
            if surrogate(&trial) <= f0 || s < 1e-12 {
                t = trial;
                break;
            }
            s *= 0.5;
        }
    }
    let mut coef = vec![0.0; x.ncols() + 1];
    coef[0] = t[0];
    for (c, &j) in free.iter().enumerate() {
        coef[j + 1] = t[c + 1];
    }
    coef
}

/// Global minimum of the L1-penalized logistic objective by enumerating every
/// sign pattern of the penalized coefficients. Only for a handful of columns.
pub fn brute_force_l1(x: &Array2<f64>, y: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let m = x.ncols();
    assert!(m <= 6);
    let mut best = (f64::INFINITY, Vec::new());
    for code in 0..3usize.pow(m as u32) {
        let signs: Vec<i8> = (0..m)
            .map(|j| (code / 3usize.pow(j as u32) % 3) as i8 - 1)
            .collect();
        let coef = face_minimum(x, y, &signs, lambda);
        let feasible = (0..m).all(|j| f64::from(signs[j]) * coef[j + 1] >= 0.0);
        if feasible {
            let value = l1_objective(x, y, &coef, lambda);
            if value < best.0 {
                best = (value, coef);
            }
        }
    }
    best
}

/// Small random logistic instance with both classes present.
pub fn random_instance(seed: u64, n: usize, m: usize) -> (Array2<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let x = Array2::from_shape_fn((n, m), |_| rng.random_range(-2.0..2.0));
        let beta: Vec<f64> = (0..m).map(|_| rng.random_range(-1.5..1.5)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let eta = 0.3 + (0..m).map(|j| x[[i, j]] * beta[j]).sum::<f64>();
                f64::from(u8::from(rng.random::<f64>() < sigmoid(eta)))
            })
            .collect();
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        if ones >= 2 && ones + 2 <= n {
            return (x, y);
        }
    }
}
