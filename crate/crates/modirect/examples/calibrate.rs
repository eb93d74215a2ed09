//! Calibration driver: verifies that the frozen encoder's pooled per-frame
//! features support (1) ridge position decoding, (2) a high-accuracy
//! direction probe on last−first deltas, (3) near-chance identity probing on
//! the same deltas, and (4) strong identity probing on temporal means.
//!
//! Run with: cargo run --release -p modirect --example calibrate [sweep]

use std::time::Instant;

use modirect::microvlm::{
    lift_descriptors, patch_descriptors, pool_frame_mean, EncoderConfig, EncoderLift, LiftProfile,
};
use modirect::probelab::{r_squared, ridge_fit, train_probe, Mat};
use modirect::rng::Rng;
use modirect::scenegen::{
    direction_label, foreground_identity, generate_clip, sample_clip_spec, BackgroundStyle, Direction8,
    DirectionLabel, DirectionMode, Domain, MotionType, TAU_STATIC,
};

struct Corpus {
    /// Raw patch descriptors per clip: (t × M × 8).
    descriptors: Vec<Vec<f64>>,
    centers: Vec<Vec<(f64, f64)>>,
    dir_labels: Vec<usize>,
    id_labels: Vec<usize>,
    t_len: usize,
}

fn build_corpus(n_clips: usize, cfg: &EncoderConfig) -> Corpus {
    let t_len = 8usize;
    let (w, h) = (64usize, 64usize);
    let mut spec_rng = Rng::from_seed(0xCA11_B007);
    let mut corpus = Corpus {
        descriptors: Vec::with_capacity(n_clips),
        centers: Vec::with_capacity(n_clips),
        dir_labels: Vec::with_capacity(n_clips),
        id_labels: Vec::with_capacity(n_clips),
        t_len,
    };
    for i in 0..n_clips {
        let axis = Direction8::AXES[i % 4];
        let spec = sample_clip_spec(
            Domain::PSyn,
            BackgroundStyle::Plain,
            MotionType::Linear,
            Some(axis),
            0x5EED_0000 + i as u64,
            t_len,
            w,
            h,
            &mut spec_rng,
        );
        let clip = generate_clip(&spec).expect("clip generation");
        corpus
            .descriptors
            .push(patch_descriptors(&clip.frames, t_len, h, w, cfg));
        corpus
            .centers
            .push(clip.track.iter().map(|p| (p.x, p.y)).collect());
        let label = direction_label(&clip.track, DirectionMode::FourWay, TAU_STATIC);
        let dir_idx = DirectionLabel::FOUR
            .iter()
            .position(|&l| l == label)
            .expect("axis label");
        corpus.dir_labels.push(dir_idx);
        corpus.id_labels.push(foreground_identity(&spec.foreground));
    }
    corpus
}

struct Scores {
    r2x: f64,
    r2y: f64,
    dir_delta: f64,
    id_delta: f64,
    id_tmean: f64,
}

impl Scores {
    /// Worst margin over the five targets (positive = all pass).
    fn margin(&self) -> f64 {
        let chance_plus = 1.0 / 30.0 + 0.15;
        [
            self.r2x - 0.95,
            self.r2y - 0.95,
            self.dir_delta - 0.95,
            chance_plus - self.id_delta,
            self.id_tmean - 0.80,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    }
}

fn evaluate(corpus: &Corpus, cfg: &EncoderConfig, profile: &LiftProfile) -> Scores {
    let lift = EncoderLift::with_profile(cfg, profile);
    let d = cfg.d_v;
    let m = cfg.patches();
    let t_len = corpus.t_len;
    let n_clips = corpus.descriptors.len();

    let mut pooled: Vec<Vec<f64>> = Vec::with_capacity(n_clips);
    for desc in &corpus.descriptors {
        let v = lift_descriptors(desc, t_len, cfg, &lift);
        let mut per_frame = vec![0.0f64; t_len * d];
        for t in 0..t_len {
            pool_frame_mean(&v, t, m, d, &mut per_frame[t * d..(t + 1) * d]);
        }
        pooled.push(per_frame);
    }

    // Ridge position decode, split by clip (70/30).
    let n_train_clips = n_clips * 7 / 10;
    let mut rows_train = Vec::new();
    let mut rows_eval = Vec::new();
    let (mut yx_train, mut yy_train, mut yx_eval, mut yy_eval) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, frames) in pooled.iter().enumerate() {
        for t in 0..t_len {
            let row = frames[t * d..(t + 1) * d].to_vec();
            let (cx, cy) = corpus.centers[i][t];
            if i < n_train_clips {
                rows_train.push(row);
                yx_train.push(cx);
                yy_train.push(cy);
            } else {
                rows_eval.push(row);
                yx_eval.push(cx);
                yy_eval.push(cy);
            }
        }
    }
    let x_train = Mat::from_rows(rows_train);
    let x_eval = Mat::from_rows(rows_eval);
    let fit_x = ridge_fit(&x_train, &yx_train, 1.0).unwrap();
    let fit_y = ridge_fit(&x_train, &yy_train, 1.0).unwrap();
    let r2x = r_squared(&fit_x, &x_eval, &yx_eval);
    let r2y = r_squared(&fit_y, &x_eval, &yy_eval);

    // Delta and TMean constructions.
    let mut delta_rows = Vec::with_capacity(n_clips);
    let mut tmean_rows = Vec::with_capacity(n_clips);
    for frames in &pooled {
        let first = &frames[0..d];
        let last = &frames[(t_len - 1) * d..t_len * d];
        delta_rows.push(last.iter().zip(first).map(|(a, b)| a - b).collect::<Vec<f64>>());
        let mut mean = vec![0.0; d];
        for t in 0..t_len {
            for k in 0..d {
                mean[k] += frames[t * d + k];
            }
        }
        for v in &mut mean {
            *v /= t_len as f64;
        }
        tmean_rows.push(mean);
    }
    let delta = Mat::from_rows(delta_rows);
    let tmean = Mat::from_rows(tmean_rows);

    let dir_delta = train_probe(&delta, &corpus.dir_labels, 4, 101).unwrap().eval_accuracy;
    let id_delta = train_probe(&delta, &corpus.id_labels, 30, 102).unwrap().eval_accuracy;
    let id_tmean = train_probe(&tmean, &corpus.id_labels, 30, 103).unwrap().eval_accuracy;

    Scores { r2x, r2y, dir_delta, id_delta, id_tmean }
}

/// Nearest-class-mean accuracy (z-scored on a leading 70% split): an upper
/// bound sanity check that separates "features overlap" from "probe underfits".
fn ncm_accuracy(rows: &[Vec<f64>], labels: &[usize], n_classes: usize) -> f64 {
    let n = rows.len();
    let d = rows[0].len();
    let n_train = n * 7 / 10;
    let mut mean = vec![0.0f64; d];
    let mut var = vec![0.0f64; d];
    for r in &rows[..n_train] {
        for k in 0..d {
            mean[k] += r[k];
        }
    }
    for m in &mut mean {
        *m /= n_train as f64;
    }
    for r in &rows[..n_train] {
        for k in 0..d {
            var[k] += (r[k] - mean[k]).powi(2);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / n_train as f64).sqrt();
            if s > 0.0 { s } else { 1.0 }
        })
        .collect();
    let z = |r: &Vec<f64>| -> Vec<f64> {
        (0..d).map(|k| (r[k] - mean[k]) / scale[k]).collect()
    };
    let mut class_mean = vec![vec![0.0f64; d]; n_classes];
    let mut class_n = vec![0usize; n_classes];
    for (r, &y) in rows[..n_train].iter().zip(&labels[..n_train]) {
        let zr = z(r);
        for k in 0..d {
            class_mean[y][k] += zr[k];
        }
        class_n[y] += 1;
    }
    for (cm, &cn) in class_mean.iter_mut().zip(&class_n) {
        if cn > 0 {
            for v in cm.iter_mut() {
                *v /= cn as f64;
            }
        }
    }
    let mut correct = 0usize;
    for (r, &y) in rows[n_train..].iter().zip(&labels[n_train..]) {
        let zr = z(r);
        let mut best = (f64::INFINITY, 0usize);
        for (c, cm) in class_mean.iter().enumerate() {
            if class_n[c] == 0 {
                continue;
            }
            let dist: f64 = zr.iter().zip(cm).map(|(a, b)| (a - b).powi(2)).sum();
            if dist < best.0 {
                best = (dist, c);
            }
        }
        if best.1 == y {
            correct += 1;
        }
    }
    correct as f64 / (n - n_train) as f64
}

/// Break the identity score down: shape-only and color-only probes plus
/// nearest-class-mean ceilings on the TMean construction.
fn diagnostics(corpus: &Corpus, cfg: &EncoderConfig, profile: &LiftProfile) {
    let lift = EncoderLift::with_profile(cfg, profile);
    let d = cfg.d_v;
    let m = cfg.patches();
    let t_len = corpus.t_len;
    let mut tmean_rows = Vec::with_capacity(corpus.descriptors.len());
    for desc in &corpus.descriptors {
        let v = lift_descriptors(desc, t_len, cfg, &lift);
        let mut frame = vec![0.0f64; d];
        let mut mean = vec![0.0f64; d];
        for t in 0..t_len {
            pool_frame_mean(&v, t, m, d, &mut frame);
            for k in 0..d {
                mean[k] += frame[k];
            }
        }
        for v in &mut mean {
            *v /= t_len as f64;
        }
        tmean_rows.push(mean);
    }
    let shape_labels: Vec<usize> = corpus.id_labels.iter().map(|&i| i / 10).collect();
    let color_labels: Vec<usize> = corpus.id_labels.iter().map(|&i| i % 10).collect();
    let tmean = Mat::from_rows(tmean_rows.clone());
    let shape_acc = train_probe(&tmean, &shape_labels, 3, 201).unwrap().eval_accuracy;
    let color_acc = train_probe(&tmean, &color_labels, 10, 202).unwrap().eval_accuracy;
    let ncm_id = ncm_accuracy(&tmean_rows, &corpus.id_labels, 30);
    let ncm_shape = ncm_accuracy(&tmean_rows, &shape_labels, 3);
    let ncm_color = ncm_accuracy(&tmean_rows, &color_labels, 10);
    println!(
        "TMean probes: shape {:.1}% color {:.1}% | NCM ceilings: id {:.1}% shape {:.1}% color {:.1}%",
        100.0 * shape_acc,
        100.0 * color_acc,
        100.0 * ncm_id,
        100.0 * ncm_shape,
        100.0 * ncm_color
    );
    // Error anatomy of the identity probe: same color / same shape / both off.
    let rep = train_probe(&tmean, &corpus.id_labels, 30, 103).unwrap();
    let mut rng = modirect::rng::Rng::from_seed(103);
    let (_, eval_idx) =
        modirect::probelab::probe::stratified_split(&corpus.id_labels, 30, &mut rng).unwrap();
    let mut same_color = 0usize;
    let mut same_shape = 0usize;
    let mut both_off = 0usize;
    let mut per_color_err = vec![0usize; 10];
    for &i in &eval_idx {
        let pred = rep.probe.predict(tmean.row(i));
        let truth = corpus.id_labels[i];
        if pred == truth {
            continue;
        }
        if pred % 10 == truth % 10 {
            same_color += 1;
            per_color_err[truth % 10] += 1;
        } else if pred / 10 == truth / 10 {
            same_shape += 1;
        } else {
            both_off += 1;
        }
    }
    println!(
        "id errors: same-color(shape miss) {same_color} | same-shape(color miss) {same_shape} | both {both_off} | shape-miss by color {per_color_err:?}"
    );
    // Which color pairs get confused (unordered, any shape)?
    let mut color_pairs = vec![0usize; 100];
    for &i in &eval_idx {
        let pred = rep.probe.predict(tmean.row(i));
        let truth = corpus.id_labels[i];
        if pred != truth && pred % 10 != truth % 10 {
            let (a, b) = ((truth % 10).min(pred % 10), (truth % 10).max(pred % 10));
            color_pairs[a * 10 + b] += 1;
        }
    }
    let mut ranked: Vec<(usize, usize, usize)> = color_pairs
        .iter()
        .enumerate()
        .filter(|(_, &c)| c >= 2)
        .map(|(k, &c)| (k / 10, k % 10, c))
        .collect();
    ranked.sort_by_key(|&(_, _, c)| std::cmp::Reverse(c));
    println!("confused color pairs (>=2): {ranked:?}");
}

fn report(tag: &str, s: &Scores) {
    println!(
        "{tag}: R2x {:.3} R2y {:.3} | dir(Delta) {:.1}% | id(Delta) {:.1}% | id(TMean) {:.1}% | margin {:+.3}",
        s.r2x,
        s.r2y,
        100.0 * s.dir_delta,
        100.0 * s.id_delta,
        100.0 * s.id_tmean,
        s.margin()
    );
}

fn main() {
    let sweep = std::env::args().any(|a| a == "sweep");
    let cfg = EncoderConfig::default();

    let t0 = Instant::now();
    let n = 1000;
    let corpus = build_corpus(n, &cfg);
    println!("built {n}-clip corpus in {:.2?}", t0.elapsed());

    if sweep {
        let mut best: Option<(LiftProfile, f64)> = None;
        for pos_gain in [2.5, 3.0, 3.5] {
        for kappa in [12.0, 15.0, 18.0] {
            for floor in [0.3] {
                for luma in [3.0] {
                    for beta in [3.0] {
                        let profile = LiftProfile {
                            chroma_gain: 2.0,
                            chroma_floor: floor,
                            hue_kappa: kappa,
                            luma_gain: luma,
                            luma_offset: 0.8,
                            std_gain: 8.0,
                            grad_gain: 12.0,
                            pos_gain,
                            saliency_beta: beta,
                        };
                        let s = evaluate(&corpus, &cfg, &profile);
                        let tag =
                            format!("ka{kappa:>3} pg{pos_gain:>4} fl{floor:>4} lu{luma:>3} beta{beta:>3}");
                        report(&tag, &s);
                        let m = s.margin();
                        if best.as_ref().is_none_or(|(_, bm)| m > *bm) {
                            best = Some((profile, m));
                        }
                    }
                }
            }
        }
        }
        let (profile, margin) = best.unwrap();
        println!("\nbest margin {margin:+.3} with {profile:?}");
    } else {
        let profile = LiftProfile::default();
        let s = evaluate(&corpus, &cfg, &profile);
        report("default", &s);
        diagnostics(&corpus, &cfg, &profile);
        println!("total {:.2?}", t0.elapsed());
    }
}
