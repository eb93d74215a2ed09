//! Flat f64 parameter storage and the slice-level linear algebra the model is
//! built from.
//!
//! The model math is written directly over contiguous slices — row-major
//! matrices with explicit dimensions — so the inner loops stay simple enough
//! for the compiler to vectorize and every floating-point operation has a
//! fixed, thread-count-independent order. All training math runs in f64 so
//! analytic gradients can be validated against central finite differences at
//! tight tolerances.

use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// A named trainable tensor with its gradient and moment buffers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Weights, row-major.
    pub w: Vec<f64>,
    /// Gradient accumulator, same layout.
    #[serde(skip)]
    pub g: Vec<f64>,
    /// First/second Adam moments.
    #[serde(skip)]
    pub m: Vec<f64>,
    #[serde(skip)]
    pub v: Vec<f64>,
}

impl Param {
    pub fn zeros(name: &str, rows: usize, cols: usize) -> Param {
        let n = rows * cols;
        Param {
            name: name.to_string(),
            rows,
            cols,
            w: vec![0.0; n],
            g: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Gaussian init with the given standard deviation.
    pub fn randn(name: &str, rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Param {
        let mut p = Param::zeros(name, rows, cols);
        for w in &mut p.w {
            *w = std * rng.gauss();
        }
        p
    }

    /// Constant-filled tensor (e.g. norm gains initialized to one).
    pub fn full(name: &str, rows: usize, cols: usize, value: f64) -> Param {
        let mut p = Param::zeros(name, rows, cols);
        p.w.fill(value);
        p
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.g.fill(0.0);
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.w[r * self.cols..(r + 1) * self.cols]
    }

    pub fn grad_row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.g[r * self.cols..(r + 1) * self.cols]
    }

    /// Restore moment/grad buffers after deserialization.
    pub fn ensure_buffers(&mut self) {
        let n = self.rows * self.cols;
        if self.g.len() != n {
            self.g = vec![0.0; n];
        }
        if self.m.len() != n {
            self.m = vec![0.0; n];
        }
        if self.v.len() != n {
            self.v = vec![0.0; n];
        }
    }
}

/// y[j] += a * x[j]
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y) {
        acc += a * b;
    }
    acc
}

/// out = x·W + b for one row: x (din), W (din×dout row-major), b (dout).
#[inline]
pub fn linear_row(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let dout = out.len();
    debug_assert_eq!(w.len(), x.len() * dout);
    out.copy_from_slice(b);
    for (i, &xi) in x.iter().enumerate() {
        axpy(xi, &w[i * dout..(i + 1) * dout], out);
    }
}

/// out = x·W for one row (no bias), same layout as [`linear_row`].
#[inline]
pub fn linear_row_nobias(x: &[f64], w: &[f64], out: &mut [f64]) {
    let dout = out.len();
    debug_assert_eq!(w.len(), x.len() * dout);
    out.fill(0.0);
    for (i, &xi) in x.iter().enumerate() {
        axpy(xi, &w[i * dout..(i + 1) * dout], out);
    }
}

/// Forward pass of a dense layer over a batch of rows.
/// x: (n×din), w: (din×dout), b: (dout), out: (n×dout).
pub fn linear_fwd(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64], din: usize, dout: usize) {
    let n = x.len() / din;
    debug_assert_eq!(out.len(), n * dout);
    for s in 0..n {
        linear_row(&x[s * din..(s + 1) * din], w, b, &mut out[s * dout..(s + 1) * dout]);
    }
}

/// Backward pass of a dense layer.
///
/// Accumulates into dw/db/dx (callers zero them at batch start). `dx` may be
/// `None` when the input is not differentiated (e.g. frozen features).
#[allow(clippy::too_many_arguments)]
pub fn linear_bwd(
    x: &[f64],
    w: &[f64],
    dout_grad: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
    din: usize,
    dout: usize,
) {
    let n = x.len() / din;
    debug_assert_eq!(dout_grad.len(), n * dout);
    for s in 0..n {
        let xs = &x[s * din..(s + 1) * din];
        let gs = &dout_grad[s * dout..(s + 1) * dout];
        axpy(1.0, gs, db);
        for (i, &xi) in xs.iter().enumerate() {
            axpy(xi, gs, &mut dw[i * dout..(i + 1) * dout]);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxs = &mut dx[s * din..(s + 1) * din];
            for (i, dxi) in dxs.iter_mut().enumerate() {
                *dxi += dot(gs, &w[i * dout..(i + 1) * dout]);
            }
        }
    }
}

/// In-place numerically stable softmax.
pub fn softmax(x: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in x.iter_mut() {
        *v *= inv;
    }
}

/// Index of the maximum element, ties resolving to the lowest index.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_forward_matches_hand_computation() {
        // x = [1, 2], W = [[1, 0, -1], [2, 1, 0]], b = [0.5, 0, 0]
        let x = [1.0, 2.0];
        let w = [1.0, 0.0, -1.0, 2.0, 1.0, 0.0];
        let b = [0.5, 0.0, 0.0];
        let mut out = [0.0; 3];
        linear_row(&x, &w, &b, &mut out);
        assert_eq!(out, [5.5, 2.0, -1.0]);
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = Rng::from_seed(4);
        let (din, dout, n) = (5, 4, 3);
        let x: Vec<f64> = (0..n * din).map(|_| rng.gauss()).collect();
        let w: Vec<f64> = (0..din * dout).map(|_| rng.gauss()).collect();
        let b: Vec<f64> = (0..dout).map(|_| rng.gauss()).collect();
        // Loss = sum of squares of outputs.
        let loss = |w: &[f64], b: &[f64], x: &[f64]| {
            let mut out = vec![0.0; n * dout];
            linear_fwd(x, w, b, &mut out, din, dout);
            out.iter().map(|v| v * v).sum::<f64>()
        };
        let mut out = vec![0.0; n * dout];
        linear_fwd(&x, &w, &b, &mut out, din, dout);
        let dout_grad: Vec<f64> = out.iter().map(|v| 2.0 * v).collect();
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; b.len()];
        let mut dx = vec![0.0; x.len()];
        linear_bwd(&x, &w, &dout_grad, &mut dw, &mut db, Some(&mut dx), din, dout);

        let eps = 1e-6;
        for i in 0..w.len() {
            let mut wp = w.clone();
            wp[i] += eps;
            let mut wm = w.clone();
            wm[i] -= eps;
            let fd = (loss(&wp, &b, &x) - loss(&wm, &b, &x)) / (2.0 * eps);
            assert!((fd - dw[i]).abs() < 1e-6 * (1.0 + fd.abs()), "dw[{i}]: {fd} vs {}", dw[i]);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += eps;
            let mut xm = x.clone();
            xm[i] -= eps;
            let fd = (loss(&w, &b, &xp) - loss(&w, &b, &xm)) / (2.0 * eps);
            assert!((fd - dx[i]).abs() < 1e-6 * (1.0 + fd.abs()), "dx[{i}]");
        }
    }

    #[test]
    fn softmax_normalizes_and_orders() {
        let mut x = [1.0, 3.0, 2.0];
        softmax(&mut x);
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(x[1] > x[2] && x[2] > x[0]);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 2.0, 2.0, 0.0]), 1);
        assert_eq!(argmax(&[5.0, 5.0]), 0);
    }
}
