//! Multinomial logistic probes over frozen activation features.
//!
//! The training recipe is fixed so probe accuracies are comparable across
//! feature constructions, layers, and checkpoints: zero-initialized softmax
//! regression trained with decoupled weight decay on z-scored inputs, with a
//! seeded stratified 70/30 train/eval split.

use crate::rng::Rng;

use super::linalg::Mat;
use super::ProbeError;

const LR: f64 = 1e-3;
const WEIGHT_DECAY: f64 = 1e-2;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const BATCH: usize = 64;
const EPOCHS: usize = 50;
const TRAIN_FRACTION: f64 = 0.7;

/// Per-feature z-score transform fitted on the training split. Features with
/// zero variance are passed through unscaled (divisor 1).
#[derive(Clone, Debug)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Mat) -> Standardizer {
        let mean = x.col_means();
        let mut var = vec![0.0; x.cols];
        for r in 0..x.rows {
            let row = x.row(r);
            for (c, v) in var.iter_mut().enumerate() {
                let d = row[c] - mean[c];
                *v += d * d;
            }
        }
        let inv = 1.0 / x.rows.max(1) as f64;
        let scale = var
            .iter()
            .map(|v| {
                let s = (v * inv).sqrt();
                if s > 0.0 { s } else { 1.0 }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply_row(&self, row: &[f64], out: &mut [f64]) {
        for ((o, &v), (m, s)) in out
            .iter_mut()
            .zip(row)
            .zip(self.mean.iter().zip(&self.scale))
        {
            *o = (v - m) / s;
        }
    }
}

/// A trained probe: softmax regression on standardized features.
#[derive(Clone, Debug)]
pub struct LinearProbe {
    pub n_classes: usize,
    pub dim: usize,
    /// Row-major (n_classes × dim).
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub standardizer: Standardizer,
}

impl LinearProbe {
    /// Class logits for one raw (unstandardized) feature row.
    pub fn logits(&self, row: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        self.standardizer.apply_row(row, &mut z);
        let mut out = self.bias.clone();
        for (k, o) in out.iter_mut().enumerate() {
            let w = &self.weights[k * self.dim..(k + 1) * self.dim];
            let mut s = 0.0;
            for (wi, zi) in w.iter().zip(&z) {
                s += wi * zi;
            }
            *o += s;
        }
        out
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let logit = self.logits(row);
        let mut best = 0;
        for (k, &v) in logit.iter().enumerate() {
            if v > logit[best] {
                best = k;
            }
        }
        best
    }
}

/// Result of a probe run: the trained probe plus split accuracies.
#[derive(Clone, Debug)]
pub struct ProbeReport {
    pub probe: LinearProbe,
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
    pub n_train: usize,
    pub n_eval: usize,
    /// Eval accuracy per class, indexed by label.
    pub per_class_eval: Vec<f64>,
}

/// Deterministic stratified split: per class, shuffle indices with a derived
/// stream and assign the first ~70% (rounded, clamped so both splits are
/// non-empty) to train.
pub fn stratified_split(
    labels: &[usize],
    n_classes: usize,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<usize>), ProbeError> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= n_classes {
            return Err(ProbeError::LabelOutOfRange { label: y, n_classes });
        }
        by_class[y].push(i);
    }
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (class, idx) in by_class.iter_mut().enumerate() {
        if idx.len() < 2 {
            return Err(ProbeError::DegenerateClass { class, count: idx.len() });
        }
        let mut stream = rng.derive(class as u64);
        stream.shuffle(idx);
        let n_train = ((idx.len() as f64 * TRAIN_FRACTION).round() as usize)
            .clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..n_train]);
        eval.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    eval.sort_unstable();
    Ok((train, eval))
}

/// Train a probe on (features, labels) with the fixed recipe and report
/// accuracies on the held-out split.
pub fn train_probe(
    features: &Mat,
    labels: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<ProbeReport, ProbeError> {
    assert_eq!(features.rows, labels.len());
    if features.rows == 0 {
        return Err(ProbeError::EmptyInput);
    }
    if n_classes < 2 {
        return Err(ProbeError::DegenerateClass { class: 0, count: 0 });
    }
    let rng = Rng::from_seed(seed);
    let (train_idx, eval_idx) = stratified_split(labels, n_classes, &mut rng.derive(1))?;

    let x_train = features.take_rows(&train_idx);
    let standardizer = Standardizer::fit(&x_train);
    let dim = features.cols;

    // Pre-standardize the training rows once.
    let mut z_train = Mat::zeros(train_idx.len(), dim);
    for (r, &i) in train_idx.iter().enumerate() {
        let mut row = vec![0.0; dim];
        standardizer.apply_row(features.row(i), &mut row);
        z_train.row_mut(r).copy_from_slice(&row);
    }
    let y_train: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();

    let mut w = vec![0.0; n_classes * dim];
    let mut b = vec![0.0; n_classes];
    let mut m_w = vec![0.0; w.len()];
    let mut v_w = vec![0.0; w.len()];
    let mut m_b = vec![0.0; b.len()];
    let mut v_b = vec![0.0; b.len()];
    let mut step = 0u64;

    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    let mut shuffle_rng = rng.derive(2);
    let mut g_w = vec![0.0; w.len()];
    let mut g_b = vec![0.0; b.len()];
    let mut logits = vec![0.0; n_classes];

    for _epoch in 0..EPOCHS {
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(BATCH) {
            g_w.iter_mut().for_each(|v| *v = 0.0);
            g_b.iter_mut().for_each(|v| *v = 0.0);
            let inv = 1.0 / chunk.len() as f64;
            for &r in chunk {
                let row = z_train.row(r);
                for (k, l) in logits.iter_mut().enumerate() {
                    let wk = &w[k * dim..(k + 1) * dim];
                    let mut s = b[k];
                    for (wi, zi) in wk.iter().zip(row) {
                        s += wi * zi;
                    }
                    *l = s;
                }
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for l in logits.iter_mut() {
                    *l = (*l - max).exp();
                    denom += *l;
                }
                let y = y_train[r];
                for k in 0..n_classes {
                    let p = logits[k] / denom;
                    let err = (p - if k == y { 1.0 } else { 0.0 }) * inv;
                    g_b[k] += err;
                    let gk = &mut g_w[k * dim..(k + 1) * dim];
                    for (g, zi) in gk.iter_mut().zip(row) {
                        *g += err * zi;
                    }
                }
            }
            step += 1;
            let bc1 = 1.0 - BETA1.powi(step as i32);
            let bc2 = 1.0 - BETA2.powi(step as i32);
            for i in 0..w.len() {
                m_w[i] = BETA1 * m_w[i] + (1.0 - BETA1) * g_w[i];
                v_w[i] = BETA2 * v_w[i] + (1.0 - BETA2) * g_w[i] * g_w[i];
                let mhat = m_w[i] / bc1;
                let vhat = v_w[i] / bc2;
                // Decoupled weight decay on the weight matrix only.
                w[i] -= LR * (mhat / (vhat.sqrt() + ADAM_EPS) + WEIGHT_DECAY * w[i]);
            }
            for i in 0..b.len() {
                m_b[i] = BETA1 * m_b[i] + (1.0 - BETA1) * g_b[i];
                v_b[i] = BETA2 * v_b[i] + (1.0 - BETA2) * g_b[i] * g_b[i];
                let mhat = m_b[i] / bc1;
                let vhat = v_b[i] / bc2;
                b[i] -= LR * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }

    let probe = LinearProbe { n_classes, dim, weights: w, bias: b, standardizer };

    let accuracy = |idx: &[usize]| -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        let hits = idx
            .iter()
            .filter(|&&i| probe.predict(features.row(i)) == labels[i])
            .count();
        hits as f64 / idx.len() as f64
    };
    let train_accuracy = accuracy(&train_idx);
    let eval_accuracy = accuracy(&eval_idx);

    let mut per_class_hits = vec![0usize; n_classes];
    let mut per_class_total = vec![0usize; n_classes];
    for &i in &eval_idx {
        per_class_total[labels[i]] += 1;
        if probe.predict(features.row(i)) == labels[i] {
            per_class_hits[labels[i]] += 1;
        }
    }
    let per_class_eval = per_class_hits
        .iter()
        .zip(&per_class_total)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect();

    Ok(ProbeReport {
        probe,
        train_accuracy,
        eval_accuracy,
        n_train: train_idx.len(),
        n_eval: eval_idx.len(),
        per_class_eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_blobs(n_per: usize, sep: f64, seed: u64) -> (Mat, Vec<usize>) {
        let mut rng = Rng::from_seed(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let centers = [[sep, 0.0], [-sep, 0.0], [0.0, sep]];
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..n_per {
                rows.push(vec![
                    center[0] + rng.gauss(),
                    center[1] + rng.gauss(),
                    rng.gauss(), // pure-noise feature
                ]);
                labels.push(c);
            }
        }
        (Mat::from_rows(rows), labels)
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let (x, y) = gaussian_blobs(120, 6.0, 7);
        let report = train_probe(&x, &y, 3, 11).unwrap();
        assert!(report.eval_accuracy > 0.97, "eval {}", report.eval_accuracy);
        assert_eq!(report.n_train + report.n_eval, 360);
    }

    #[test]
    fn pure_noise_stays_near_chance() {
        let mut rng = Rng::from_seed(3);
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..4).map(|_| rng.gauss()).collect())
            .collect();
        let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let x = Mat::from_rows(rows);
        let report = train_probe(&x, &labels, 3, 5).unwrap();
        assert!(
            report.eval_accuracy < 0.55,
            "noise eval {}",
            report.eval_accuracy
        );
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let mut rng = Rng::from_seed(42);
        let (train_a, eval_a) = stratified_split(&labels, 4, &mut rng).unwrap();
        let mut rng = Rng::from_seed(42);
        let (train_b, eval_b) = stratified_split(&labels, 4, &mut rng).unwrap();
        assert_eq!(train_a, train_b);
        assert_eq!(eval_a, eval_b);
        for c in 0..4 {
            let n_train = train_a.iter().filter(|&&i| labels[i] == c).count();
            let n_eval = eval_a.iter().filter(|&&i| labels[i] == c).count();
            assert_eq!(n_train, 18, "class {c}");
            assert_eq!(n_eval, 7, "class {c}");
        }
    }

    #[test]
    fn single_sample_class_is_rejected() {
        let labels = vec![0, 0, 0, 1];
        let mut rng = Rng::from_seed(1);
        let err = stratified_split(&labels, 2, &mut rng).unwrap_err();
        assert!(matches!(err, ProbeError::DegenerateClass { class: 1, count: 1 }));
    }

    #[test]
    fn zero_variance_feature_passes_through() {
        let x = Mat::from_rows(vec![
            vec![5.0, 1.0],
            vec![5.0, 2.0],
            vec![5.0, 3.0],
            vec![5.0, 4.0],
        ]);
        let s = Standardizer::fit(&x);
        assert_eq!(s.scale[0], 1.0);
        let mut out = vec![0.0; 2];
        s.apply_row(&[5.0, 2.5], &mut out);
        assert_eq!(out[0], 0.0);
    }
}
