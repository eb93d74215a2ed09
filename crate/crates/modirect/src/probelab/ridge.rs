//! Ridge regression on activation features.
//!
//! Both a closed-form solver (centered normal equations via Cholesky) and a
//! conjugate-gradient solver for the same system are provided; the two must
//! agree tightly on well-posed problems, which gives downstream analyses a
//! built-in cross-check.

use super::linalg::{cholesky_solve, Mat};
use super::ProbeError;

/// A fitted ridge regressor for a single scalar target.
#[derive(Clone, Debug)]
pub struct RidgeFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
}

impl RidgeFit {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut p = self.intercept;
        for (w, v) in self.weights.iter().zip(x) {
            p += w * v;
        }
        p
    }

    pub fn predict(&self, x: &Mat) -> Vec<f64> {
        (0..x.rows).map(|r| self.predict_row(x.row(r))).collect()
    }
}

fn centered_system(x: &Mat, y: &[f64], alpha: f64) -> (Mat, Vec<f64>, Vec<f64>, f64) {
    let xm = x.col_means();
    let ym: f64 = y.iter().sum::<f64>() / y.len().max(1) as f64;
    let mut xc = x.clone();
    for r in 0..xc.rows {
        let row = xc.row_mut(r);
        for (c, v) in row.iter_mut().enumerate() {
            *v -= xm[c];
        }
    }
    let yc: Vec<f64> = y.iter().map(|v| v - ym).collect();
    let mut a = xc.gram();
    for i in 0..a.rows {
        *a.at_mut(i, i) += alpha;
    }
    let b = xc.t_vec(&yc);
    (a, b, xm, ym)
}

fn assemble(beta: Vec<f64>, xm: &[f64], ym: f64, alpha: f64) -> RidgeFit {
    let mut intercept = ym;
    for (w, m) in beta.iter().zip(xm) {
        intercept -= w * m;
    }
    RidgeFit { weights: beta, intercept, alpha }
}

/// Closed-form ridge: solve (XcᵀXc + αI) β = Xcᵀ yc on centered data.
/// The intercept is recovered so predictions apply to uncentered inputs.
pub fn ridge_fit(x: &Mat, y: &[f64], alpha: f64) -> Result<RidgeFit, ProbeError> {
    assert_eq!(x.rows, y.len());
    if x.rows == 0 {
        return Err(ProbeError::EmptyInput);
    }
    let (a, b, xm, ym) = centered_system(x, y, alpha);
    let beta = cholesky_solve(&a, &b)
        .map_err(|e| ProbeError::SingularSystem { detail: e.to_string() })?;
    Ok(assemble(beta, &xm, ym, alpha))
}

/// Iterative ridge: plain gradient descent on the identical centered
/// quadratic, stepped at 1/λ_max. Slower than the closed form but independent
/// of it, which makes agreement between the two a meaningful cross-check.
pub fn ridge_fit_gd(x: &Mat, y: &[f64], alpha: f64) -> Result<RidgeFit, ProbeError> {
    assert_eq!(x.rows, y.len());
    if x.rows == 0 {
        return Err(ProbeError::EmptyInput);
    }
    let (a, b, xm, ym) = centered_system(x, y, alpha);
    let n = a.rows;
    let matvec = |v: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let row = a.row(i);
            let mut s = 0.0;
            for (j, &vj) in v.iter().enumerate() {
                s += row[j] * vj;
            }
            out[i] = s;
        }
    };
    // Largest eigenvalue by power iteration sets a stable step size.
    let mut v = vec![1.0; n];
    let mut av = vec![0.0; n];
    let mut lambda_max = 0.0_f64;
    for _ in 0..100 {
        matvec(&v, &mut av);
        let norm = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-300 {
            break;
        }
        lambda_max = norm;
        for (vi, ai) in v.iter_mut().zip(&av) {
            *vi = ai / norm;
        }
    }
    if lambda_max <= 0.0 {
        return Err(ProbeError::SingularSystem {
            detail: "gradient-descent ridge: system matrix is numerically zero".into(),
        });
    }
    let step = 1.0 / lambda_max;
    let b_norm = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    let mut beta = vec![0.0; n];
    let mut grad = vec![0.0; n];
    for _ in 0..500_000 {
        matvec(&beta, &mut grad);
        let mut res = 0.0;
        for (g, &bi) in grad.iter_mut().zip(&b) {
            *g -= bi;
            res += *g * *g;
        }
        if res.sqrt() <= 1e-10 * b_norm {
            break;
        }
        for (be, &g) in beta.iter_mut().zip(&grad) {
            *be -= step * g;
        }
    }
    Ok(assemble(beta, &xm, ym, alpha))
}

/// Coefficient of determination on (x, y). A constant target (zero variance)
/// is reported as 0 by convention.
pub fn r_squared(fit: &RidgeFit, x: &Mat, y: &[f64]) -> f64 {
    let preds = fit.predict(x);
    let ym: f64 = y.iter().sum::<f64>() / y.len().max(1) as f64;
    let mut sse = 0.0;
    let mut sst = 0.0;
    for (p, &t) in preds.iter().zip(y) {
        sse += (t - p) * (t - p);
        sst += (t - ym) * (t - ym);
    }
    if sst == 0.0 {
        return 0.0;
    }
    1.0 - sse / sst
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-checked example: x = [1,2,3], y = [2,4,6], α = 1.
    /// Centered: xc = [-1,0,1], yc = [-2,0,2]; β = 4/(2+1) = 4/3;
    /// intercept = 4 − (4/3)·2 = 4/3; residuals (−2/3, 0, 2/3) give
    /// SSE = 8/9, SST = 8, R² = 1 − 1/9 = 8/9.
    #[test]
    fn matches_hand_computed_fit() {
        let x = Mat::from_rows(vec![vec![1.0], vec![2.0], vec![3.0]]);
        let y = [2.0, 4.0, 6.0];
        let fit = ridge_fit(&x, &y, 1.0).unwrap();
        assert!((fit.weights[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((fit.intercept - 4.0 / 3.0).abs() < 1e-12);
        let r2 = r_squared(&fit, &x, &y);
        assert!((r2 - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_and_gradient_descent_agree() {
        // A deterministic, moderately conditioned 5-feature problem.
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
        let mut unit = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..64 {
            let row: Vec<f64> = (0..5).map(|_| unit() * 2.0 - 1.0).collect();
            let target = 3.0 * row[0] - 2.0 * row[3] + 0.5 + 0.01 * (unit() - 0.5);
            rows.push(row);
            y.push(target);
        }
        let x = Mat::from_rows(rows);
        let a = ridge_fit(&x, &y, 1.0).unwrap();
        let b = ridge_fit_gd(&x, &y, 1.0).unwrap();
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            assert!((wa - wb).abs() < 1e-8, "{wa} vs {wb}");
        }
        assert!((a.intercept - b.intercept).abs() < 1e-8);
    }

    #[test]
    fn unregularized_collinear_features_error() {
        // Two identical columns make XᵀX singular at α = 0.
        let x = Mat::from_rows(vec![
            vec![1.0, 1.0],
            vec![2.0, 2.0],
            vec![3.0, 3.0],
        ]);
        let y = [1.0, 2.0, 3.0];
        assert!(ridge_fit(&x, &y, 0.0).is_err());
        assert!(ridge_fit(&x, &y, 1.0).is_ok());
    }
}
