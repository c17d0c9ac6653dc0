/// Solves `a x = b` for a symmetric positive (semi)definite `a` (row-major,
/// `m x m`) by Cholesky. Returns `None` when a pivot falls below
/// `1e-12 * max_diag`, the signal to retry with a ridge.
pub(crate) fn cholesky_solve(a: &[f64], b: &[f64], m: usize) -> Option<Vec<f64>> {
    let max_diag = (0..m).map(|i| a[i * m + i]).fold(0.0_f64, f64::max);
    let floor = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; m * m];
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= l[j * m + k] * l[j * m + k];
        }
        if !(d > floor) {
            return None;
        }
        let d = d.sqrt();
        l[j * m + j] = d;
        for i in (j + 1)..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k];
            }
            l[i * m + j] = s / d;
        }
    }
    let mut y = vec![0.0; m];
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * m + k] * y[k];
        }
        y[i] = s / l[i * m + i];
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let mut s = y[i];
        for k in (i + 1)..m {
            s -= l[k * m + i] * x[k];
        }
        x[i] = s / l[i * m + i];
    }
    Some(x)
}

/// Cholesky solve with the ridge-of-last-resort fallback. The flag reports
/// whether the ridge was needed.
pub(crate) fn solve_normal_equations(a: &[f64], b: &[f64], m: usize) -> (Vec<f64>, bool) {
    if let Some(x) = cholesky_solve(a, b, m) {
        return (x, false);
    }
    let max_diag = (0..m)
        .map(|i| a[i * m + i])
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let mut ridge = 1e-10 * max_diag;
    let mut a2 = a.to_vec();
    loop {
        for i in 0..m {
            a2[i * m + i] = a[i * m + i] + ridge;
        }
        if let Some(x) = cholesky_solve(&a2, b, m) {
            return (x, true);
        }
        ridge *= 100.0;
    }
}
