//! Dense f64 matrices and the two solvers the diagnostics need: Cholesky
//! solves for ridge systems and a Jacobi eigensolver for PCA. Dimensions here
//! are small (at most a few hundred), so simple, deterministic algorithms are
//! the right tool.

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Mat {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Select a subset of rows.
    pub fn take_rows(&self, idx: &[usize]) -> Mat {
        let mut out = Mat::zeros(idx.len(), self.cols);
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(r));
        }
        out
    }

    /// Column means.
    pub fn col_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (c, mc) in m.iter_mut().enumerate() {
                *mc += self.at(r, c);
            }
        }
        let inv = 1.0 / self.rows.max(1) as f64;
        for v in &mut m {
            *v *= inv;
        }
        m
    }

    /// XᵀX of self (cols × cols), symmetric.
    pub fn gram(&self) -> Mat {
        let d = self.cols;
        let mut g = Mat::zeros(d, d);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..d {
                let xi = row[i];
                if xi == 0.0 {
                    continue;
                }
                let gi = &mut g.data[i * d..(i + 1) * d];
                for (j, &xj) in row.iter().enumerate() {
                    gi[j] += xi * xj;
                }
            }
        }
        g
    }

    /// Xᵀy for a column vector y of length `rows`.
    pub fn t_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let yr = y[r];
            for (c, o) in out.iter_mut().enumerate() {
                *o += row[c] * yr;
            }
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
#[error("matrix is singular (pivot {pivot:.3e} at index {index})")]
pub struct SingularMatrix {
    pub pivot: f64,
    pub index: usize,
}

/// Cholesky factorization of a symmetric positive-definite matrix: A = LLᵀ.
/// Returns the lower factor; fails on non-positive pivots.
pub fn cholesky(a: &Mat) -> Result<Mat, SingularMatrix> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    // Pivots that fall below this share of the largest diagonal entry are
    // numerically zero: the matrix is singular to working precision.
    let max_diag = (0..n).map(|i| a.at(i, i)).fold(0.0_f64, f64::max);
    let tol = (1e-12 * max_diag).max(1e-300);
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.at(i, j);
            for k in 0..j {
                sum -= l.at(i, k) * l.at(j, k);
            }
            if i == j {
                if sum <= tol {
                    return Err(SingularMatrix { pivot: sum, index: i });
                }
                *l.at_mut(i, j) = sum.sqrt();
            } else {
                *l.at_mut(i, j) = sum / l.at(j, j);
            }
        }
    }
    Ok(l)
}

/// Solve A x = b for SPD A via Cholesky.
pub fn cholesky_solve(a: &Mat, b: &[f64]) -> Result<Vec<f64>, SingularMatrix> {
    let l = cholesky(a)?;
    let n = a.rows;
    // Forward: L z = b
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.at(i, k) * z[k];
        }
        z[i] = s / l.at(i, i);
    }
    // Back: Lᵀ x = z
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= l.at(k, i) * x[k];
        }
        x[i] = s / l.at(i, i);
    }
    Ok(x)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns (eigenvalues, eigenvectors) sorted by descending eigenvalue;
/// eigenvectors are the ROWS of the returned matrix.
pub fn jacobi_eigh(a: &Mat) -> (Vec<f64>, Mat) {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Mat::zeros(n, n);
    for i in 0..n {
        *v.at_mut(i, i) = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m.at(i, j) * m.at(i, j);
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.at(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    *m.at_mut(k, p) = c * mkp - s * mkq;
                    *m.at_mut(k, q) = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    *m.at_mut(p, k) = c * mpk - s * mqk;
                    *m.at_mut(q, k) = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    *v.at_mut(k, p) = c * vkp - s * vkq;
                    *v.at_mut(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vecs = Mat::zeros(n, n);
    for (r, &i) in order.iter().enumerate() {
        for k in 0..n {
            *vecs.at_mut(r, k) = v.at(k, i);
        }
    }
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_a_known_system() {
        // A = [[4, 2], [2, 3]], b = [10, 8] → x = [7/4, 3/2]
        let a = Mat::from_rows(vec![vec![4.0, 2.0], vec![2.0, 3.0]]);
        let x = cholesky_solve(&a, &[10.0, 8.0]).unwrap();
        assert!((x[0] - 1.75).abs() < 1e-12);
        assert!((x[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Mat::from_rows(vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn jacobi_recovers_planted_spectrum() {
        // Diagonalize Q diag(5,2,1) Qᵀ for a known rotation Q.
        let theta: f64 = 0.6;
        let (s, c) = theta.sin_cos();
        let q = Mat::from_rows(vec![
            vec![c, -s, 0.0],
            vec![s, c, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let d = [5.0, 2.0, 1.0];
        let mut a = Mat::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                let mut v = 0.0;
                for k in 0..3 {
                    v += q.at(i, k) * d[k] * q.at(j, k);
                }
                *a.at_mut(i, j) = v;
            }
        }
        let (vals, vecs) = jacobi_eigh(&a);
        assert!((vals[0] - 5.0).abs() < 1e-10);
        assert!((vals[1] - 2.0).abs() < 1e-10);
        assert!((vals[2] - 1.0).abs() < 1e-10);
        // First eigenvector matches the first column of Q up to sign.
        let dot: f64 = (0..3).map(|k| vecs.at(0, k) * q.at(k, 0)).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-10);
    }
}
