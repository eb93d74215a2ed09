//! Training and evaluation: sample preparation, the combined objective with
//! the auxiliary motion branch, Adam, and multiple-choice scoring.
//!
//! The loop is strictly serial with a fixed visit order derived from the
//! seed, so a run is reproducible to the bit regardless of the host's
//! thread count. The auxiliary branch reads one of five tap points:
//!
//! * `encoder-output` / `pre-projector` — frozen stages; the branch trains
//!   only its own head/operator parameters (nothing upstream to move).
//! * `post-projector` — the default; branch gradients flow into the
//!   projector.
//! * `lm-visual-tokens` / `final-readout` — stages inside the readout
//!   stack; branch gradients flow *through* the attention blocks back to
//!   the projector, but are never applied to block, embedding, or
//!   positional parameters. The readout stack's own weights are shaped by
//!   the answer loss alone.

use super::model::{
    backward_blocks, backward_lm, backward_projector, forward, tokenize_record, MicroVlmError,
    ModelConfig, ModelParams, SampleTokens, Workspace,
};
use super::vocab::Vocab;
use crate::deltadirect::{
    head_predict, head_predict_backward, motion_targets, mvp_backward, mvp_forward, mvp_loss,
    mvp_loss_backward, pooled_width, total_loss, DeltaError, MotionTargets, MvpConfig, MvpParams,
    MvpTrace, Tap, PAIR_MIN_DISPLACEMENT, TARGET_EPS,
};
use crate::microvlm::encoder::{encode_frames, EncoderConfig, EncoderLift};
use crate::qagen::QARecord;
use crate::qagen::QAType;
use crate::rng::Rng;
use crate::scenegen::{foreground_identity, generate_clip, DirectionLabel, Domain};
use crate::tensor::{argmax, Param};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One record rendered, encoded, and tokenized — everything the training
/// and evaluation loops touch. The encoder is frozen, so its output is
/// computed once here and reused for every epoch.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub clip_id: String,
    pub domain: Domain,
    pub qa_type: QAType,
    pub direction: DirectionLabel,
    /// Foreground identity class index within the domain's family.
    pub identity: usize,
    /// Frozen encoder output, T×M×D_v.
    pub v: Vec<f64>,
    pub tokens: SampleTokens,
    /// Per-frame-pair unit motion targets from the ground-truth track.
    pub targets: MotionTargets,
}

impl PreparedSample {
    pub fn gold_slot(&self) -> usize {
        self.tokens.gold_slot
    }
}

/// Render, encode, and tokenize one manifest record.
pub fn prepare_record(
    rec: &QARecord,
    enc: &EncoderConfig,
    lift: &EncoderLift,
    vocab: &Vocab,
) -> Result<PreparedSample, MicroVlmError> {
    let tokens = tokenize_record(rec, vocab)?;
    let spec = rec
        .clip
        .as_ref()
        .ok_or_else(|| MicroVlmError::MissingClip { clip_id: rec.clip_id.clone() })?;
    let clip = generate_clip(spec)?;
    let v = encode_frames(&clip.frames, spec.frames, spec.height, spec.width, enc, lift);
    let targets = motion_targets(&clip.track, TARGET_EPS, PAIR_MIN_DISPLACEMENT);
    Ok(PreparedSample {
        clip_id: rec.clip_id.clone(),
        domain: rec.domain,
        qa_type: rec.qa_type,
        direction: rec.direction,
        identity: foreground_identity(&spec.foreground),
        v,
        tokens,
        targets,
    })
}

/// Prepare every multiple-choice record in a slice, in order.
pub fn prepare_records(
    recs: &[QARecord],
    enc: &EncoderConfig,
    lift: &EncoderLift,
) -> Result<Vec<PreparedSample>, MicroVlmError> {
    let vocab = Vocab::new();
    recs.iter().map(|r| prepare_record(r, enc, lift, &vocab)).collect()
}

/// Stage geometry (tokens per frame, channel width) the branch sees at a
/// tap point.
pub fn tap_stage_dims(cfg: &ModelConfig, tap: Tap) -> (usize, usize) {
    match tap {
        Tap::EncoderOutput => (cfg.patches(), cfg.d_v),
        Tap::PreProjector => (cfg.tokens_per_frame(), cfg.d_v),
        Tap::PostProjector | Tap::LmVisualTokens(_) => (cfg.tokens_per_frame(), cfg.d),
        Tap::FinalReadout => (1, cfg.d),
    }
}

/// Check a tap against the model depth.
pub fn validate_tap(cfg: &ModelConfig, tap: Tap) -> Result<(), MicroVlmError> {
    if let Tap::LmVisualTokens(layer) = tap {
        if layer == 0 || layer > cfg.layers {
            return Err(MicroVlmError::InvalidTapLayer { layer, layers: cfg.layers });
        }
    }
    Ok(())
}

/// Initialize branch parameters sized for this model/branch configuration.
pub fn init_mvp(
    mvp: &MvpConfig,
    model: &ModelConfig,
    seed: u64,
) -> Result<MvpParams, MicroVlmError> {
    validate_tap(model, mvp.tap)?;
    let (n, d) = tap_stage_dims(model, mvp.tap);
    let d_delta = pooled_width(mvp.pool, n, d);
    Ok(MvpParams::init(mvp, d_delta, &Rng::from_seed(seed)))
}

fn validate_mvp_shape(
    mvp: &MvpParams,
    cfg: &MvpConfig,
    model: &ModelConfig,
) -> Result<(), MicroVlmError> {
    validate_tap(model, cfg.tap)?;
    let (n, d) = tap_stage_dims(model, cfg.tap);
    let want = pooled_width(cfg.pool, n, d);
    if mvp.d_delta != want {
        return Err(MicroVlmError::Delta(DeltaError::ShapeMismatch {
            expected: want,
            got: mvp.d_delta,
            t: model.frames,
            n,
            d,
        }));
    }
    Ok(())
}

/// Forward state of the auxiliary branch for one sample.
pub enum MvpRun {
    /// Not computed this step.
    Skipped,
    /// A frame-sequence tap: the full pooled/delta/head trace.
    Sequence(MvpTrace),
    /// The readout-state tap: one head prediction against the clip-level
    /// mean motion target (the frame-pair operator does not apply — there
    /// is a single state, not a sequence).
    Readout { pred: [f64; 2], hidden: Vec<f64>, single: MotionTargets, loss: f64 },
}

impl MvpRun {
    pub fn loss(&self) -> f64 {
        match self {
            MvpRun::Skipped => 0.0,
            MvpRun::Sequence(t) => t.loss,
            MvpRun::Readout { loss, .. } => *loss,
        }
    }
}

/// Run the branch forward from the workspace state left by [`forward`].
pub fn mvp_forward_sample(
    sample: &PreparedSample,
    params: &ModelParams,
    mvp: &MvpParams,
    cfg: &MvpConfig,
    ws: &Workspace,
) -> Result<MvpRun, MicroVlmError> {
    let mc = &params.cfg;
    let (n, d) = tap_stage_dims(mc, cfg.tap);
    let t_len = mc.frames;
    let run = match cfg.tap {
        Tap::EncoderOutput => MvpRun::Sequence(mvp_forward(
            &sample.v,
            t_len,
            n,
            d,
            mvp,
            &sample.targets,
            cfg,
        )?),
        Tap::PreProjector => MvpRun::Sequence(mvp_forward(
            &ws.pooled_v,
            t_len,
            n,
            d,
            mvp,
            &sample.targets,
            cfg,
        )?),
        Tap::PostProjector => {
            MvpRun::Sequence(mvp_forward(&ws.f, t_len, n, d, mvp, &sample.targets, cfg)?)
        }
        Tap::LmVisualTokens(layer) => {
            let tn = mc.visual_tokens();
            MvpRun::Sequence(mvp_forward(
                &ws.x[layer][..tn * mc.d],
                t_len,
                n,
                d,
                mvp,
                &sample.targets,
                cfg,
            )?)
        }
        Tap::FinalReadout => {
            let s_len = ws.s_len;
            let h_l = &ws.x[mc.layers][(s_len - 1) * mc.d..s_len * mc.d];
            let mut hidden = Vec::new();
            let pred = head_predict(mvp, h_l, &mut hidden);
            let single = MotionTargets {
                m: vec![sample.targets.mean_target()],
                mask: vec![!sample.targets.all_masked()],
            };
            let (loss, _) = mvp_loss(&pred, &single, cfg.loss_kind)?;
            MvpRun::Readout { pred, hidden, single, loss }
        }
    };
    Ok(run)
}

/// Backward pass of the branch, scaled by `scale` (λ divided by batch
/// size). Branch parameters always accumulate; model gradients reach only
/// the projector (`ws.df`), per the routing described in the module docs.
pub fn mvp_backward_sample(
    sample: &PreparedSample,
    params: &mut ModelParams,
    mvp: &mut MvpParams,
    cfg: &MvpConfig,
    ws: &mut Workspace,
    run: &MvpRun,
    scale: f64,
) {
    if scale == 0.0 {
        return;
    }
    let mc = params.cfg;
    let d = mc.d;
    let tn = mc.visual_tokens();
    match run {
        MvpRun::Skipped => {}
        MvpRun::Sequence(trace) => match cfg.tap {
            Tap::EncoderOutput | Tap::PreProjector => {
                // Frozen stage: only branch parameters move.
                mvp_backward(trace, mvp, &sample.targets, cfg, scale, None);
            }
            Tap::PostProjector => {
                mvp_backward(trace, mvp, &sample.targets, cfg, scale, Some(&mut ws.df));
            }
            Tap::LmVisualTokens(layer) => {
                let s_len = ws.s_len;
                ws.dx[..s_len * d].fill(0.0);
                mvp_backward(trace, mvp, &sample.targets, cfg, scale, Some(&mut ws.dx[..tn * d]));
                backward_blocks(params, ws, layer, false);
                for (df, dx) in ws.df[..tn * d].iter_mut().zip(&ws.dx[..tn * d]) {
                    *df += dx;
                }
            }
            Tap::FinalReadout => unreachable!("readout tap produces MvpRun::Readout"),
        },
        MvpRun::Readout { pred, hidden, single, .. } => {
            if single.mask.iter().all(|m| !m) {
                return;
            }
            let dpred = mvp_loss_backward(pred, single, cfg.loss_kind);
            let s_len = ws.s_len;
            let h_l: Vec<f64> = ws.x[mc.layers][(s_len - 1) * d..s_len * d].to_vec();
            let mut dhl = vec![0.0; d];
            head_predict_backward(mvp, &h_l, hidden, [dpred[0], dpred[1]], scale, Some(&mut dhl));
            ws.dx[..s_len * d].fill(0.0);
            ws.dx[(s_len - 1) * d..s_len * d].copy_from_slice(&dhl);
            backward_blocks(params, ws, mc.layers, false);
            for (df, dx) in ws.df[..tn * d].iter_mut().zip(&ws.dx[..tn * d]) {
                *df += dx;
            }
        }
    }
}

/// Adam with bias correction; one shared step counter for every tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    pub t: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam { t: 0, lr, beta1, beta2, eps }
    }

    /// Apply one update to every tensor from its accumulated gradient.
    pub fn step(&mut self, tensors: &mut [&mut Param]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for p in tensors.iter_mut() {
            p.ensure_buffers();
            for i in 0..p.w.len() {
                let g = p.g[i];
                p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
                p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
                let mhat = p.m[i] / bc1;
                let vhat = p.v[i] / bc2;
                p.w[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default = "TrainConfig::default")]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub mvp: MvpConfig,
    /// With the branch weight at zero, still run its forward pass and
    /// report the unweighted loss per step (never any gradient). Turning
    /// this off must not change the trained weights by a single bit.
    pub report_mvp_when_off: bool,
    /// After training, run one forward-only pass over the full training
    /// set and record the final mean losses.
    pub final_loss_pass: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 3,
            mvp: MvpConfig::default(),
            report_mvp_when_off: true,
            final_loss_pass: false,
        }
    }
}

/// Per-step loss record (batch means; `l_mvp` is unweighted).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub l_lm: f64,
    pub l_mvp: f64,
    pub l_total: f64,
}

/// What a training run produced.
#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub rows: Vec<LossRow>,
    pub steps: usize,
    /// Full-pass means over the training set after the last update, when
    /// requested.
    pub final_lm: Option<f64>,
    pub final_mvp: Option<f64>,
}

/// One sample's forward + backward inside a batch. Returns
/// `(answer loss, unweighted branch loss)`.
#[allow(clippy::too_many_arguments)]
fn train_sample(
    sample: &PreparedSample,
    params: &mut ModelParams,
    mvp: &mut MvpParams,
    tcfg: &TrainConfig,
    vocab: &Vocab,
    ws: &mut Workspace,
    inv_batch: f64,
    compute_mvp: bool,
) -> Result<(f64, f64), MicroVlmError> {
    let l_lm = forward(&sample.v, &sample.tokens, params, vocab, ws)?;
    let run = if compute_mvp {
        mvp_forward_sample(sample, params, mvp, &tcfg.mvp, ws)?
    } else {
        MvpRun::Skipped
    };
    let l_mvp = run.loss();

    let d = params.cfg.d;
    let tn = params.cfg.visual_tokens();
    ws.df[..tn * d].fill(0.0);
    let lambda = tcfg.mvp.lambda;
    if lambda != 0.0 {
        mvp_backward_sample(sample, params, mvp, &tcfg.mvp, ws, &run, lambda * inv_batch);
    }
    backward_lm(&sample.tokens, params, ws, inv_batch);
    backward_projector(params, ws);
    Ok((l_lm, l_mvp))
}

/// Train in place. Serial, fixed-order, deterministic for a given seed and
/// sample order; the report carries one loss row per optimizer step.
pub fn train(
    samples: &[PreparedSample],
    params: &mut ModelParams,
    mvp: &mut MvpParams,
    tcfg: &TrainConfig,
) -> Result<TrainReport, MicroVlmError> {
    if samples.is_empty() {
        return Err(MicroVlmError::EmptyDataset);
    }
    validate_mvp_shape(mvp, &tcfg.mvp, &params.cfg)?;
    let vocab = Vocab::new();
    let mut ws = Workspace::new(&params.cfg);
    let n = samples.len();
    let batch = tcfg.batch_size.min(n).max(1);
    let batches_per_epoch = n / batch;
    let inv_batch = 1.0 / batch as f64;
    let compute_mvp = tcfg.mvp.lambda != 0.0 || tcfg.report_mvp_when_off;
    let root = Rng::from_seed(tcfg.seed);
    let mut adam = Adam::new(tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps);
    let mut report = TrainReport::default();
    let mut step = 0usize;

    for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        root.derive(epoch as u64).shuffle(&mut order);
        for b in 0..batches_per_epoch {
            step += 1;
            params.zero_grad();
            mvp.zero_grad();
            let mut lm_sum = 0.0;
            let mut mvp_sum = 0.0;
            for &idx in &order[b * batch..(b + 1) * batch] {
                let (l_lm, l_mvp) = train_sample(
                    &samples[idx],
                    params,
                    mvp,
                    tcfg,
                    &vocab,
                    &mut ws,
                    inv_batch,
                    compute_mvp,
                )?;
                lm_sum += l_lm;
                mvp_sum += l_mvp;
            }
            let l_lm = lm_sum * inv_batch;
            let l_mvp = mvp_sum * inv_batch;
            let l_total = total_loss(l_lm, l_mvp, tcfg.mvp.lambda);
            if !l_total.is_finite() {
                return Err(MicroVlmError::DivergenceDetected { step });
            }
            let mut tensors = params.tensors_mut();
            tensors.extend(mvp.tensors_mut());
            adam.step(&mut tensors);
            report.rows.push(LossRow { step, l_lm, l_mvp, l_total });
        }
    }
    report.steps = step;

    if tcfg.final_loss_pass {
        let mut lm_sum = 0.0;
        let mut mvp_sum = 0.0;
        for sample in samples {
            lm_sum += forward(&sample.v, &sample.tokens, params, &vocab, &mut ws)?;
            mvp_sum += mvp_forward_sample(sample, params, mvp, &tcfg.mvp, &ws)?.loss();
        }
        report.final_lm = Some(lm_sum / n as f64);
        report.final_mvp = Some(mvp_sum / n as f64);
    }
    Ok(report)
}

/// Predicted option slot for one sample (argmax; ties take the lowest
/// slot).
pub fn predict_slot(
    sample: &PreparedSample,
    params: &ModelParams,
    vocab: &Vocab,
    ws: &mut Workspace,
) -> Result<usize, MicroVlmError> {
    forward(&sample.v, &sample.tokens, params, vocab, ws)?;
    Ok(argmax(&ws.answer_logits))
}

/// Multiple-choice accuracy, overall and per domain.
#[derive(Clone, Debug, Default, Serialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    /// domain → (correct, total)
    pub by_domain: BTreeMap<Domain, (usize, usize)>,
    pub mean_lm_loss: f64,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    pub fn domain_accuracy(&self, domain: Domain) -> Option<f64> {
        self.by_domain.get(&domain).map(|&(c, t)| c as f64 / t as f64)
    }
}

/// Score every sample with the current weights.
pub fn evaluate(
    samples: &[PreparedSample],
    params: &ModelParams,
) -> Result<EvalReport, MicroVlmError> {
    if samples.is_empty() {
        return Err(MicroVlmError::EmptyDataset);
    }
    let vocab = Vocab::new();
    let mut ws = Workspace::new(&params.cfg);
    let mut report = EvalReport::default();
    for sample in samples {
        let loss = forward(&sample.v, &sample.tokens, params, &vocab, &mut ws)?;
        report.mean_lm_loss += loss;
        let pred = argmax(&ws.answer_logits);
        let entry = report.by_domain.entry(sample.domain).or_insert((0, 0));
        entry.1 += 1;
        report.total += 1;
        if pred == sample.tokens.gold_slot {
            entry.0 += 1;
            report.correct += 1;
        }
    }
    report.mean_lm_loss /= report.total as f64;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deltadirect::{DeltaOperator, DeltaPool, HeadKind, MvpLossKind};
    use crate::qagen::make_qa_record;
    use crate::scenegen::{
        sample_clip_spec, sample_track_for_spec, BackgroundStyle, Direction8, MotionType,
    };

    fn tiny_cfg() -> ModelConfig {
        ModelConfig { frames: 3, patch_grid: 2, d_v: 4, d: 6, layers: 2, mlp_ratio: 2 }
    }

    /// A synthetic sample with random visuals and real unit targets.
    fn synthetic_sample(cfg: &ModelConfig, seed: u64, gold: usize) -> PreparedSample {
        let mut rng = Rng::from_seed(seed);
        let vocab = Vocab::new();
        let v: Vec<f64> =
            (0..cfg.frames * cfg.patches() * cfg.d_v).map(|_| rng.gauss()).collect();
        let words = ["left", "right", "up", "down"];
        let tokens = SampleTokens {
            qa_type_id: vocab.qa_type(QAType::DirMCQ4),
            option_word_ids: words.iter().map(|w| vocab.id(w).unwrap()).collect(),
            gold_slot: gold,
        };
        // A gently curving track so every pair is unmasked with distinct
        // directions.
        let track: Vec<crate::geom::Vec2> = (0..cfg.frames)
            .map(|t| crate::geom::Vec2::new(5.0 + 4.0 * t as f64, 7.0 + 1.5 * (t * t) as f64))
            .collect();
        PreparedSample {
            clip_id: format!("syn-{seed}"),
            domain: Domain::PSyn,
            qa_type: QAType::DirMCQ4,
            direction: DirectionLabel::Right,
            identity: 0,
            v,
            tokens,
            targets: motion_targets(&track, TARGET_EPS, PAIR_MIN_DISPLACEMENT),
        }
    }

    /// Mean total loss of a 2-sample batch under the given weights —
    /// forward only, used as the finite-difference objective.
    fn batch_loss(
        samples: &[PreparedSample],
        params: &ModelParams,
        mvp: &MvpParams,
        tcfg: &TrainConfig,
    ) -> f64 {
        let vocab = Vocab::new();
        let mut ws = Workspace::new(&params.cfg);
        let mut lm = 0.0;
        let mut aux = 0.0;
        for s in samples {
            lm += forward(&s.v, &s.tokens, params, &vocab, &mut ws).unwrap();
            aux += mvp_forward_sample(s, params, mvp, &tcfg.mvp, &ws).unwrap().loss();
        }
        let n = samples.len() as f64;
        total_loss(lm / n, aux / n, tcfg.mvp.lambda)
    }

    /// Analytic gradients of the same batch objective.
    fn batch_grads(
        samples: &[PreparedSample],
        params: &mut ModelParams,
        mvp: &mut MvpParams,
        tcfg: &TrainConfig,
    ) {
        let vocab = Vocab::new();
        let mut ws = Workspace::new(&params.cfg);
        params.zero_grad();
        mvp.zero_grad();
        let inv = 1.0 / samples.len() as f64;
        for s in samples {
            train_sample(s, params, mvp, tcfg, &vocab, &mut ws, inv, true).unwrap();
        }
    }

    fn fd_check_tensor(
        name: &str,
        idx_grad: (usize, f64),
        samples: &[PreparedSample],
        params: &mut ModelParams,
        mvp: &mut MvpParams,
        tcfg: &TrainConfig,
        which: Which,
    ) {
        let (i, ana) = idx_grad;
        let eps = 1e-5;
        let read = |params: &mut ModelParams, mvp: &mut MvpParams, delta: f64, i: usize| {
            {
                let mut all = match which {
                    Which::Model => params.tensors_mut(),
                    Which::Mvp => mvp.tensors_mut(),
                };
                let p = all.iter_mut().find(|p| p.name == name).unwrap();
                p.w[i] += delta;
            }
            batch_loss(samples, params, mvp, tcfg)
        };
        let up = read(params, mvp, eps, i);
        let down = read(params, mvp, -2.0 * eps, i);
        read(params, mvp, eps, i); // restore
        let fd = (up - down) / (2.0 * eps);
        let denom = fd.abs().max(ana.abs()).max(1e-6);
        let rel = (fd - ana).abs() / denom;
        assert!(rel < 1e-4, "{name}[{i}]: fd={fd:.9} ana={ana:.9} rel={rel:.2e}");
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Which {
        Model,
        Mvp,
    }

    /// Exhaustive finite-difference validation of every trainable value —
    /// model and branch — on a small configuration with the default tap.
    #[test]
    fn analytic_gradients_match_finite_differences_everywhere() {
        let cfg = tiny_cfg();
        let mut params = ModelParams::init_untied(&cfg, 21);
        let tcfg = TrainConfig { batch_size: 2, ..TrainConfig::default() };
        let mut mvp = init_mvp(&tcfg.mvp, &cfg, 22).unwrap();
        let samples = vec![synthetic_sample(&cfg, 1, 2), synthetic_sample(&cfg, 2, 0)];
        batch_grads(&samples, &mut params, &mut mvp, &tcfg);

        let model_named: Vec<(String, Vec<f64>)> =
            params.tensors().iter().map(|p| (p.name.clone(), p.g.clone())).collect();
        for (name, grads) in &model_named {
            for (i, &g) in grads.iter().enumerate() {
                fd_check_tensor(
                    name,
                    (i, g),
                    &samples,
                    &mut params,
                    &mut mvp,
                    &tcfg,
                    Which::Model,
                );
            }
        }
        let mvp_named: Vec<(String, Vec<f64>)> =
            mvp.tensors().iter().map(|p| (p.name.clone(), p.g.clone())).collect();
        for (name, grads) in &mvp_named {
            for (i, &g) in grads.iter().enumerate() {
                fd_check_tensor(name, (i, g), &samples, &mut params, &mut mvp, &tcfg, Which::Mvp);
            }
        }
    }

    /// Each non-default tap: the branch's own parameters and the projector
    /// check against finite differences, and the readout-side parameters
    /// receive no branch gradient at all.
    #[test]
    fn tap_routing_reaches_projector_but_not_readout_parameters() {
        let cfg = tiny_cfg();
        let taps = [
            Tap::EncoderOutput,
            Tap::PreProjector,
            Tap::LmVisualTokens(1),
            Tap::LmVisualTokens(2),
            Tap::FinalReadout,
        ];
        for tap in taps {
            let mut tcfg = TrainConfig { batch_size: 2, ..TrainConfig::default() };
            tcfg.mvp.tap = tap;
            tcfg.mvp.operator = DeltaOperator::GatedDiff;
            tcfg.mvp.head = HeadKind::Linear;
            let mut params = ModelParams::init_untied(&cfg, 31);
            let mut mvp = init_mvp(&tcfg.mvp, &cfg, 32).unwrap();
            let samples = vec![synthetic_sample(&cfg, 3, 1), synthetic_sample(&cfg, 4, 3)];
            batch_grads(&samples, &mut params, &mut mvp, &tcfg);

            // Finite differences on projector + branch tensors (their
            // analytic gradient includes the full differentiable path).
            let proj_names = ["proj_w1", "proj_b1", "proj_w2", "proj_b2"];
            let proj_named: Vec<(String, Vec<f64>)> = params
                .tensors()
                .iter()
                .filter(|p| proj_names.contains(&p.name.as_str()))
                .map(|p| (p.name.clone(), p.g.clone()))
                .collect();
            for (name, grads) in &proj_named {
                for (i, &g) in grads.iter().enumerate().step_by(3) {
                    fd_check_tensor(
                        name,
                        (i, g),
                        &samples,
                        &mut params,
                        &mut mvp,
                        &tcfg,
                        Which::Model,
                    );
                }
            }
            let mvp_named: Vec<(String, Vec<f64>)> =
                mvp.tensors().iter().map(|p| (p.name.clone(), p.g.clone())).collect();
            for (name, grads) in &mvp_named {
                for (i, &g) in grads.iter().enumerate() {
                    fd_check_tensor(
                        name,
                        (i, g),
                        &samples,
                        &mut params,
                        &mut mvp,
                        &tcfg,
                        Which::Mvp,
                    );
                }
            }

            // Routing invariant: readout-side gradients are identical with
            // the branch on and off — the branch contributes nothing there.
            let grads_on: Vec<(String, Vec<f64>)> =
                params.tensors().iter().map(|p| (p.name.clone(), p.g.clone())).collect();
            let mut tcfg_off = tcfg.clone();
            tcfg_off.mvp.lambda = 0.0;
            batch_grads(&samples, &mut params, &mut mvp, &tcfg_off);
            for (off, (name, on)) in params.tensors().iter().zip(&grads_on) {
                if proj_names.contains(&name.as_str()) {
                    continue;
                }
                assert_eq!(
                    &off.g, on,
                    "{name} gradient changed with branch weight under tap {tap:?}"
                );
            }
        }
    }

    /// Branch gradients scale linearly in the weight: g(λ) = g(0) + λ·(g(1) − g(0)).
    #[test]
    fn gradients_are_affine_in_branch_weight() {
        let cfg = tiny_cfg();
        let mut params = ModelParams::init_untied(&cfg, 77);
        let samples = vec![synthetic_sample(&cfg, 5, 0), synthetic_sample(&cfg, 6, 2)];
        let mut grads = Vec::new();
        for lambda in [0.0, 1.0, 0.5] {
            let mut tcfg = TrainConfig { batch_size: 2, ..TrainConfig::default() };
            tcfg.mvp.lambda = lambda;
            let mut mvp = init_mvp(&tcfg.mvp, &cfg, 78).unwrap();
            batch_grads(&samples, &mut params, &mut mvp, &tcfg);
            grads.push(params.proj_w1.g.clone());
        }
        for i in 0..grads[0].len() {
            let expect = grads[0][i] + 0.5 * (grads[1][i] - grads[0][i]);
            assert!(
                (grads[2][i] - expect).abs() < 1e-12,
                "proj_w1[{i}] not affine in the branch weight"
            );
        }
    }

    /// With the branch weight at zero, reporting the branch loss or not
    /// must leave the trained weights bit-identical, and the branch's own
    /// parameters must never move from initialization.
    #[test]
    fn zero_weight_branch_is_pure_reporting() {
        let cfg = tiny_cfg();
        let samples: Vec<PreparedSample> =
            (0..6).map(|i| synthetic_sample(&cfg, 100 + i, (i % 4) as usize)).collect();
        let run = |report_flag: bool| {
            let mut params = ModelParams::init(&cfg, 50);
            let mut tcfg = TrainConfig {
                batch_size: 3,
                epochs: 4,
                report_mvp_when_off: report_flag,
                ..TrainConfig::default()
            };
            tcfg.mvp.lambda = 0.0;
            let mut mvp = init_mvp(&tcfg.mvp, &cfg, 51).unwrap();
            let before = mvp.head_w1.w.clone();
            let rep = train(&samples, &mut params, &mut mvp, &tcfg).unwrap();
            assert_eq!(mvp.head_w1.w, before, "branch moved with zero weight");
            (params, rep)
        };
        let (p_on, rep_on) = run(true);
        let (p_off, rep_off) = run(false);
        for (a, b) in p_on.tensors().iter().zip(p_off.tensors().iter()) {
            assert_eq!(a.w, b.w, "{} differs between reporting modes", a.name);
        }
        // Reporting on yields real branch losses; off reports zeros.
        assert!(rep_on.rows.iter().all(|r| r.l_mvp > 0.0));
        assert!(rep_off.rows.iter().all(|r| r.l_mvp == 0.0));
        assert_eq!(
            rep_on.rows.iter().map(|r| r.l_lm.to_bits()).collect::<Vec<_>>(),
            rep_off.rows.iter().map(|r| r.l_lm.to_bits()).collect::<Vec<_>>()
        );
    }

    /// Fixed seed ⇒ bit-identical trained weights.
    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_cfg();
        let samples: Vec<PreparedSample> =
            (0..5).map(|i| synthetic_sample(&cfg, 200 + i, (i % 4) as usize)).collect();
        let run = || {
            let mut params = ModelParams::init(&cfg, 60);
            let tcfg = TrainConfig { batch_size: 2, epochs: 3, ..TrainConfig::default() };
            let mut mvp = init_mvp(&tcfg.mvp, &cfg, 61).unwrap();
            let report = train(&samples, &mut params, &mut mvp, &tcfg).unwrap();
            (params, mvp, report)
        };
        let (pa, ma, ra) = run();
        let (pb, mb, rb) = run();
        for (a, b) in pa.tensors().iter().zip(pb.tensors().iter()) {
            assert_eq!(a.w, b.w, "{}", a.name);
        }
        for (a, b) in ma.tensors().iter().zip(mb.tensors().iter()) {
            assert_eq!(a.w, b.w, "{}", a.name);
        }
        assert_eq!(ra.rows.len(), rb.rows.len());
        for (x, y) in ra.rows.iter().zip(&rb.rows) {
            assert_eq!(x.l_total.to_bits(), y.l_total.to_bits());
        }
    }

    /// Overfitting a fixed 8-sample batch for 100 steps drives the answer
    /// loss under 0.1 — the canonical learning smoke test.
    #[test]
    fn overfits_a_fixed_small_batch() {
        let cfg = tiny_cfg();
        let samples: Vec<PreparedSample> =
            (0..8).map(|i| synthetic_sample(&cfg, 300 + i, (i % 4) as usize)).collect();
        let mut params = ModelParams::init(&cfg, 70);
        let tcfg = TrainConfig { batch_size: 8, epochs: 100, ..TrainConfig::default() };
        let mut mvp = init_mvp(&tcfg.mvp, &cfg, 71).unwrap();
        let report = train(&samples, &mut params, &mut mvp, &tcfg).unwrap();
        assert_eq!(report.steps, 100);
        let last = report.rows.last().unwrap();
        assert!(last.l_lm < 0.1, "answer loss stayed at {:.4}", last.l_lm);
        // And the fit is behavioral, not just loss-deep: every sample is
        // answered correctly.
        let eval = evaluate(&samples, &params).unwrap();
        assert_eq!(eval.correct, eval.total);
    }

    /// The branch loss also falls when trained (default tap, real weight).
    #[test]
    fn branch_loss_decreases_during_training() {
        let cfg = tiny_cfg();
        let samples: Vec<PreparedSample> =
            (0..8).map(|i| synthetic_sample(&cfg, 400 + i, (i % 4) as usize)).collect();
        let mut params = ModelParams::init(&cfg, 80);
        let tcfg = TrainConfig {
            batch_size: 8,
            epochs: 60,
            final_loss_pass: true,
            ..TrainConfig::default()
        };
        let mut mvp = init_mvp(&tcfg.mvp, &cfg, 81).unwrap();
        let report = train(&samples, &mut params, &mut mvp, &tcfg).unwrap();
        let first = report.rows.first().unwrap().l_mvp;
        let final_mvp = report.final_mvp.unwrap();
        assert!(
            final_mvp < 0.5 * first,
            "branch loss did not fall: first {first:.4}, final {final_mvp:.4}"
        );
    }

    /// All four operator/pool corners train without error and the loss
    /// stays finite (cosine loss included).
    #[test]
    fn every_operator_pool_combination_trains() {
        let cfg = tiny_cfg();
        let samples: Vec<PreparedSample> =
            (0..4).map(|i| synthetic_sample(&cfg, 500 + i, (i % 4) as usize)).collect();
        for op in [DeltaOperator::Subtract, DeltaOperator::ConcatLinear, DeltaOperator::GatedDiff]
        {
            for pool in [DeltaPool::Mean, DeltaPool::Flatten] {
                for loss in [MvpLossKind::Mse, MvpLossKind::Cosine] {
                    let mut tcfg =
                        TrainConfig { batch_size: 4, epochs: 2, ..TrainConfig::default() };
                    tcfg.mvp.operator = op;
                    tcfg.mvp.pool = pool;
                    tcfg.mvp.loss_kind = loss;
                    let mut params = ModelParams::init(&cfg, 90);
                    let mut mvp = init_mvp(&tcfg.mvp, &cfg, 91).unwrap();
                    let report = train(&samples, &mut params, &mut mvp, &tcfg).unwrap();
                    assert!(report.rows.iter().all(|r| r.l_total.is_finite()));
                }
            }
        }
    }

    /// Invalid tap layers are rejected up front.
    #[test]
    fn tap_layer_bounds_are_checked() {
        let cfg = tiny_cfg();
        for bad in [0usize, 3, 9] {
            let mut mvp_cfg = MvpConfig::default();
            mvp_cfg.tap = Tap::LmVisualTokens(bad);
            match init_mvp(&mvp_cfg, &cfg, 1) {
                Err(MicroVlmError::InvalidTapLayer { layer, layers: 2 }) => {
                    assert_eq!(layer, bad)
                }
                other => panic!("expected tap-layer error, got {other:?}"),
            }
        }
        assert!(init_mvp(
            &MvpConfig { tap: Tap::LmVisualTokens(2), ..MvpConfig::default() },
            &cfg,
            1
        )
        .is_ok());
    }

    /// Untied random weights answer balanced 4-way questions at chance.
    #[test]
    fn random_weights_score_at_chance_on_balanced_questions() {
        let cfg = tiny_cfg();
        let params = ModelParams::init_untied(&cfg, 123);
        let vocab = Vocab::new();
        let mut ws = Workspace::new(&cfg);
        let mut rng = Rng::from_seed(321);
        let n = 6000;
        let mut correct = 0;
        let words = ["left", "right", "up", "down"];
        for i in 0..n {
            let v: Vec<f64> =
                (0..cfg.frames * cfg.patches() * cfg.d_v).map(|_| rng.gauss()).collect();
            let mut order = [0usize, 1, 2, 3];
            rng.shuffle(&mut order);
            let tokens = SampleTokens {
                qa_type_id: vocab.qa_type(QAType::DirMCQ4),
                option_word_ids: order.iter().map(|&k| vocab.id(words[k]).unwrap()).collect(),
                gold_slot: (i % 4),
            };
            forward(&v, &tokens, &params, &vocab, &mut ws).unwrap();
            if argmax(&ws.answer_logits) == tokens.gold_slot {
                correct += 1;
            }
        }
        let acc = correct as f64 / n as f64;
        assert!((acc - 0.25).abs() <= 0.023, "chance accuracy off: {acc:.4}");
    }

    /// End-to-end: real rendered clips prepare, train, and evaluate.
    #[test]
    fn prepares_and_learns_from_rendered_clips() {
        let mcfg = ModelConfig { frames: 8, patch_grid: 8, d_v: 32, d: 16, layers: 2, mlp_ratio: 2 };
        let enc = EncoderConfig::default();
        let lift = EncoderLift::new(&enc);
        let mut rng = Rng::from_seed(900);
        let dirs = [Direction8::Left, Direction8::Right, Direction8::Up, Direction8::Down];
        let mut records = Vec::new();
        for i in 0..16 {
            let spec = sample_clip_spec(
                Domain::PSyn,
                BackgroundStyle::Plain,
                MotionType::Linear,
                Some(dirs[i % 4]),
                9000 + i as u64,
                8,
                64,
                64,
                &mut rng,
            );
            let track = sample_track_for_spec(&spec).unwrap();
            records.push(make_qa_record(&spec, &track, QAType::DirMCQ4, &mut rng).unwrap());
        }
        let samples = prepare_records(&records, &enc, &lift).unwrap();
        assert!(samples.iter().all(|s| s.targets.unmasked() > 0));
        assert!(samples.iter().all(|s| s.tokens.options() == 4));

        let mut params = ModelParams::init(&mcfg, 901);
        let tcfg = TrainConfig { batch_size: 16, epochs: 60, ..TrainConfig::default() };
        let mut mvp = init_mvp(&tcfg.mvp, &mcfg, 902).unwrap();
        train(&samples, &mut params, &mut mvp, &tcfg).unwrap();
        let eval = evaluate(&samples, &params).unwrap();
        assert!(
            eval.accuracy() >= 0.9,
            "trained accuracy on its own data: {:.3}",
            eval.accuracy()
        );
        assert_eq!(eval.by_domain.len(), 1);
        assert_eq!(eval.by_domain[&Domain::PSyn].1, 16);
    }

    /// Missing clip recipes are a hard error naming the record.
    #[test]
    fn missing_clip_recipe_is_reported() {
        let cfg = tiny_cfg();
        let _ = cfg;
        let enc = EncoderConfig::default();
        let lift = EncoderLift::new(&enc);
        let vocab = Vocab::new();
        let mut rng = Rng::from_seed(31);
        let spec = sample_clip_spec(
            Domain::PSyn,
            BackgroundStyle::Plain,
            MotionType::Linear,
            Some(Direction8::Up),
            77,
            8,
            64,
            64,
            &mut rng,
        );
        let track = sample_track_for_spec(&spec).unwrap();
        let mut rec = make_qa_record(&spec, &track, QAType::DirMCQ4, &mut rng).unwrap();
        rec.clip = None;
        match prepare_record(&rec, &enc, &lift, &vocab) {
            Err(MicroVlmError::MissingClip { clip_id }) => assert_eq!(clip_id, rec.clip_id),
            other => panic!("expected missing-clip error, got {other:?}"),
        }
    }
}
