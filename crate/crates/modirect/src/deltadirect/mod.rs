//! The motion-vector-prediction (MVP) auxiliary objective.
//!
//! A clip's ground-truth center track induces one normalized 2-D motion
//! target per adjacent frame pair. During training, a temporal *delta
//! feature* is computed from a configurable stage of the model (the tap), a
//! lightweight head predicts the motion vector from it, and the resulting
//! regression loss is added to the answer cross-entropy with weight λ. The
//! branch exists only at training time: answer evaluation never touches it,
//! and deleting its parameters from a checkpoint changes no answer output.
//!
//! The module owns everything that is independent of the model internals:
//! target construction, the delta operators and pools over an arbitrary
//! `T×N×D` stage tensor, the prediction heads, the loss, and their analytic
//! gradients. Tap selection (which stage tensor to feed in) lives in
//! [`crate::microvlm`], which knows the stages.

use crate::geom::Vec2;
use crate::rng::Rng;
use crate::tensor::{linear_row, Param};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Denominator guard of the target normalization.
pub const TARGET_EPS: f64 = 1e-8;

/// Frame pairs whose center displacement is below this many pixels carry no
/// motion target (the pair is treated as not moving).
pub const PAIR_MIN_DISPLACEMENT: f64 = 0.5;

/// Hidden width of the MLP head variant.
pub const MLP_HEAD_HIDDEN: usize = 256;

#[derive(Debug, Error)]
pub enum DeltaError {
    #[error("stage tensor has {got} values, expected {expected} ({t} frames × {n} tokens × {d} channels)")]
    ShapeMismatch { expected: usize, got: usize, t: usize, n: usize, d: usize },
    #[error("{got} delta vectors for {want} motion-target pairs")]
    PairCountMismatch { got: usize, want: usize },
    #[error("need at least two frames for temporal deltas, got {frames}")]
    TooFewFrames { frames: usize },
}

/// Which stage of the model the MVP branch reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tap {
    /// Frozen encoder tokens V (T×M×D_v).
    EncoderOutput,
    /// Spatially pooled encoder tokens, immediately before the projector's
    /// first affine layer (T×N×D_v).
    PreProjector,
    /// Projector output F (T×N×D) — the reference configuration.
    PostProjector,
    /// Readout-stack hidden states at the visual token positions after the
    /// given layer (1-based), shape T×N×D.
    LmVisualTokens(usize),
    /// The final-layer readout state h^L: a single vector per clip, so the
    /// branch predicts one clip-level motion vector (the mean of the
    /// unmasked per-pair targets) instead of per-pair deltas.
    FinalReadout,
}

/// How two frames' stage features combine into a delta feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaOperator {
    /// δ_t = pool(F_{t+1}) − pool(F_t).
    Subtract,
    /// δ_t = W·[pool(F_t); pool(F_{t+1})] + b with a trainable affine map.
    ConcatLinear,
    /// δ_t = (pool(F_{t+1}) − pool(F_t)) ⊙ sigmoid(W·pool(F_t) + b).
    GatedDiff,
}

/// How the token axis is reduced before the delta operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaPool {
    /// Mean over the N tokens of a frame: d_delta = D.
    #[default]
    Mean,
    /// Concatenate the N tokens: d_delta = N·D.
    Flatten,
}

/// Prediction head family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// m̂ = W·δ + b with W ∈ ℝ^{2×d}: exactly 2d + 2 parameters.
    Linear,
    /// d → 256 → 2 with a tanh between the affine maps.
    Mlp,
}

/// Regression loss family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MvpLossKind {
    /// Mean over unmasked pairs of ‖m̂_t − m_t‖².
    Mse,
    /// Mean over unmasked pairs of 1 − cos(m̂_t, m_t).
    Cosine,
}

/// Full configuration of the auxiliary branch. The default value is the
/// reference method; every other setting is an ablation variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default = "MvpConfig::default")]
pub struct MvpConfig {
    pub tap: Tap,
    pub operator: DeltaOperator,
    pub pool: DeltaPool,
    pub head: HeadKind,
    pub loss_kind: MvpLossKind,
    /// Weight of the MVP term in the total loss; 0 disables the branch.
    pub lambda: f64,
}

impl Default for MvpConfig {
    fn default() -> Self {
        MvpConfig {
            tap: Tap::PostProjector,
            operator: DeltaOperator::Subtract,
            pool: DeltaPool::Mean,
            head: HeadKind::Linear,
            loss_kind: MvpLossKind::Mse,
            lambda: 1.0,
        }
    }
}

/// Per-pair normalized motion targets of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionTargets {
    /// One 2-vector per adjacent frame pair (T−1 of them). Masked entries
    /// hold zeros and are never read by the loss.
    pub m: Vec<[f64; 2]>,
    /// `mask[t]` is true exactly when pair t moved at least the minimum
    /// displacement and therefore carries a target.
    pub mask: Vec<bool>,
}

impl MotionTargets {
    pub fn pairs(&self) -> usize {
        self.m.len()
    }

    pub fn unmasked(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn all_masked(&self) -> bool {
        self.unmasked() == 0
    }

    /// Plain mean of the unmasked targets (zero vector if all masked); the
    /// clip-level target used by the [`Tap::FinalReadout`] variant.
    pub fn mean_target(&self) -> [f64; 2] {
        let u = self.unmasked();
        if u == 0 {
            return [0.0, 0.0];
        }
        let mut s = [0.0, 0.0];
        for (m, &keep) in self.m.iter().zip(&self.mask) {
            if keep {
                s[0] += m[0];
                s[1] += m[1];
            }
        }
        [s[0] / u as f64, s[1] / u as f64]
    }
}

/// Normalized per-pair motion targets of a center track.
///
/// For each adjacent pair, m_t = (c_{t+1} − c_t) / (‖c_{t+1} − c_t‖ + ε);
/// pairs displaced less than `pair_min_displacement` are masked out.
pub fn motion_targets(track: &[Vec2], eps: f64, pair_min_displacement: f64) -> MotionTargets {
    let pairs = track.len().saturating_sub(1);
    let mut m = vec![[0.0; 2]; pairs];
    let mut mask = vec![false; pairs];
    for t in 0..pairs {
        let d = track[t + 1] - track[t];
        let norm = d.norm();
        if norm >= pair_min_displacement {
            let inv = 1.0 / (norm + eps);
            m[t] = [d.x * inv, d.y * inv];
            mask[t] = true;
        }
    }
    MotionTargets { m, mask }
}

/// Trainable parameters of the MVP branch: the prediction head plus the
/// operator's affine map when the operator has one. Initialization draws
/// from streams derived off the module's own tag, so adding or removing the
/// branch never perturbs any other parameter's initial values.
#[derive(Clone, Debug)]
pub struct MvpParams {
    pub head: HeadKind,
    pub operator: DeltaOperator,
    /// Delta feature width the branch was sized for.
    pub d_delta: usize,
    /// Linear head: (d×2) plus bias — or the MLP's first affine (d×256).
    pub head_w1: Param,
    pub head_b1: Param,
    /// MLP second affine (256×2); absent for the linear head.
    pub head_w2: Option<Param>,
    pub head_b2: Option<Param>,
    /// ConcatLinear: (2d×d); GatedDiff: (d×d); absent for Subtract.
    pub op_w: Option<Param>,
    pub op_b: Option<Param>,
}

impl MvpParams {
    /// Initialize for delta width `d_delta` under the given config.
    pub fn init(cfg: &MvpConfig, d_delta: usize, rng: &Rng) -> MvpParams {
        let d = d_delta;
        let stream = |tag: u64| rng.derive(0x6d76_7000 + tag);
        let (head_w1, head_b1, head_w2, head_b2) = match cfg.head {
            HeadKind::Linear => (
                Param::randn("mvp.head_w1", d, 2, 1.0 / (d as f64).sqrt(), &mut stream(1)),
                Param::zeros("mvp.head_b1", 1, 2),
                None,
                None,
            ),
            HeadKind::Mlp => (
                Param::randn(
                    "mvp.head_w1",
                    d,
                    MLP_HEAD_HIDDEN,
                    1.0 / (d as f64).sqrt(),
                    &mut stream(1),
                ),
                Param::zeros("mvp.head_b1", 1, MLP_HEAD_HIDDEN),
                Some(Param::randn(
                    "mvp.head_w2",
                    MLP_HEAD_HIDDEN,
                    2,
                    1.0 / (MLP_HEAD_HIDDEN as f64).sqrt(),
                    &mut stream(2),
                )),
                Some(Param::zeros("mvp.head_b2", 1, 2)),
            ),
        };
        let (op_w, op_b) = match cfg.operator {
            DeltaOperator::Subtract => (None, None),
            DeltaOperator::ConcatLinear => (
                Some(Param::randn(
                    "mvp.op_w",
                    2 * d,
                    d,
                    1.0 / (2.0 * d as f64).sqrt(),
                    &mut stream(3),
                )),
                Some(Param::zeros("mvp.op_b", 1, d)),
            ),
            DeltaOperator::GatedDiff => (
                Some(Param::randn("mvp.op_w", d, d, 1.0 / (d as f64).sqrt(), &mut stream(3))),
                Some(Param::zeros("mvp.op_b", 1, d)),
            ),
        };
        MvpParams {
            head: cfg.head,
            operator: cfg.operator,
            d_delta,
            head_w1,
            head_b1,
            head_w2,
            head_b2,
            op_w,
            op_b,
        }
    }

    /// All trainable tensors, in a fixed order.
    pub fn tensors(&self) -> Vec<&Param> {
        let mut v = vec![&self.head_w1, &self.head_b1];
        if let Some(p) = &self.head_w2 {
            v.push(p);
        }
        if let Some(p) = &self.head_b2 {
            v.push(p);
        }
        if let Some(p) = &self.op_w {
            v.push(p);
        }
        if let Some(p) = &self.op_b {
            v.push(p);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = vec![&mut self.head_w1, &mut self.head_b1];
        if let Some(p) = &mut self.head_w2 {
            v.push(p);
        }
        if let Some(p) = &mut self.head_b2 {
            v.push(p);
        }
        if let Some(p) = &mut self.op_w {
            v.push(p);
        }
        if let Some(p) = &mut self.op_b {
            v.push(p);
        }
        v
    }

    pub fn zero_grad(&mut self) {
        for p in self.tensors_mut() {
            p.zero_grad();
        }
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|p| p.len()).sum()
    }
}

/// Pool one frame's tokens: Mean reduces to `d` values, Flatten keeps `n·d`.
pub fn pooled_width(pool: DeltaPool, n: usize, d: usize) -> usize {
    match pool {
        DeltaPool::Mean => d,
        DeltaPool::Flatten => n * d,
    }
}

/// Pool every frame of a T×N×D stage tensor into a T×d_pool matrix.
pub fn pool_stage(
    stage: &[f64],
    t_len: usize,
    n: usize,
    d: usize,
    pool: DeltaPool,
) -> Result<Vec<f64>, DeltaError> {
    if stage.len() != t_len * n * d {
        return Err(DeltaError::ShapeMismatch {
            expected: t_len * n * d,
            got: stage.len(),
            t: t_len,
            n,
            d,
        });
    }
    match pool {
        DeltaPool::Flatten => Ok(stage.to_vec()),
        DeltaPool::Mean => {
            let mut out = vec![0.0; t_len * d];
            let inv = 1.0 / n as f64;
            for t in 0..t_len {
                let row = &mut out[t * d..(t + 1) * d];
                for p in 0..n {
                    let tok = &stage[(t * n + p) * d..(t * n + p + 1) * d];
                    for (o, x) in row.iter_mut().zip(tok) {
                        *o += x;
                    }
                }
                for o in row.iter_mut() {
                    *o *= inv;
                }
            }
            Ok(out)
        }
    }
}

/// Scatter a gradient on the pooled matrix back onto the stage tensor.
pub fn pool_stage_backward(
    d_pooled: &[f64],
    t_len: usize,
    n: usize,
    d: usize,
    pool: DeltaPool,
    d_stage: &mut [f64],
) {
    debug_assert_eq!(d_stage.len(), t_len * n * d);
    match pool {
        DeltaPool::Flatten => {
            for (o, g) in d_stage.iter_mut().zip(d_pooled) {
                *o += g;
            }
        }
        DeltaPool::Mean => {
            let inv = 1.0 / n as f64;
            for t in 0..t_len {
                let row = &d_pooled[t * d..(t + 1) * d];
                for p in 0..n {
                    let tok = &mut d_stage[(t * n + p) * d..(t * n + p + 1) * d];
                    for (o, g) in tok.iter_mut().zip(row) {
                        *o += inv * g;
                    }
                }
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything the forward pass of the branch records so the backward pass
/// can run without recomputation.
#[derive(Clone, Debug, Default)]
pub struct MvpTrace {
    /// Pooled per-frame features, T×d_pool.
    pub pooled: Vec<f64>,
    /// Delta features, P×d_delta (P = T−1, or 1 for the clip-level variant).
    pub deltas: Vec<f64>,
    /// GatedDiff gate activations, P×d_delta.
    pub gate: Vec<f64>,
    /// MLP head hidden activations, P×256.
    pub hidden: Vec<f64>,
    /// Head predictions, P×2.
    pub preds: Vec<f64>,
    /// Loss value (0 when every pair is masked).
    pub loss: f64,
    /// True when the clip had no unmasked pair (static clip): the loss is
    /// defined as 0 and the backward pass is a no-op.
    pub all_masked: bool,
    pairs: usize,
    d_delta: usize,
    t_len: usize,
    n_tokens: usize,
    d_chan: usize,
    pool: DeltaPool,
}

/// Delta features of a stage tensor under an operator and pool.
///
/// Returns the P×d_delta delta matrix (P = T−1). Operators needing trainable
/// parameters read them from `params`; `Subtract` ignores it entirely (pass
/// params built for any config).
pub fn delta_features(
    stage: &[f64],
    t_len: usize,
    n: usize,
    d: usize,
    operator: DeltaOperator,
    pool: DeltaPool,
    params: Option<&MvpParams>,
) -> Result<Vec<f64>, DeltaError> {
    if t_len < 2 {
        return Err(DeltaError::TooFewFrames { frames: t_len });
    }
    let pooled = pool_stage(stage, t_len, n, d, pool)?;
    let dp = pooled_width(pool, n, d);
    Ok(delta_from_pooled(&pooled, t_len, dp, operator, params, &mut Vec::new()))
}

/// Deltas from the pooled T×d matrix; `gate_out` receives the gate values
/// (GatedDiff only) for backward use.
fn delta_from_pooled(
    pooled: &[f64],
    t_len: usize,
    d: usize,
    operator: DeltaOperator,
    params: Option<&MvpParams>,
    gate_out: &mut Vec<f64>,
) -> Vec<f64> {
    let pairs = t_len - 1;
    let mut deltas = vec![0.0; pairs * d];
    match operator {
        DeltaOperator::Subtract => {
            for t in 0..pairs {
                for k in 0..d {
                    deltas[t * d + k] = pooled[(t + 1) * d + k] - pooled[t * d + k];
                }
            }
        }
        DeltaOperator::ConcatLinear => {
            let p = params.expect("ConcatLinear needs operator parameters");
            let (w, b) = (p.op_w.as_ref().unwrap(), p.op_b.as_ref().unwrap());
            let mut cat = vec![0.0; 2 * d];
            for t in 0..pairs {
                cat[..d].copy_from_slice(&pooled[t * d..(t + 1) * d]);
                cat[d..].copy_from_slice(&pooled[(t + 1) * d..(t + 2) * d]);
                linear_row(&cat, &w.w, &b.w, &mut deltas[t * d..(t + 1) * d]);
            }
        }
        DeltaOperator::GatedDiff => {
            let p = params.expect("GatedDiff needs operator parameters");
            let (w, b) = (p.op_w.as_ref().unwrap(), p.op_b.as_ref().unwrap());
            gate_out.resize(pairs * d, 0.0);
            let mut pre = vec![0.0; d];
            for t in 0..pairs {
                linear_row(&pooled[t * d..(t + 1) * d], &w.w, &b.w, &mut pre);
                for k in 0..d {
                    let g = sigmoid(pre[k]);
                    gate_out[t * d + k] = g;
                    deltas[t * d + k] = (pooled[(t + 1) * d + k] - pooled[t * d + k]) * g;
                }
            }
        }
    }
    deltas
}

/// Head prediction for one delta vector.
fn head_forward(params: &MvpParams, delta: &[f64], hidden: &mut [f64], pred: &mut [f64]) {
    match params.head {
        HeadKind::Linear => {
            linear_row(delta, &params.head_w1.w, &params.head_b1.w, pred);
        }
        HeadKind::Mlp => {
            linear_row(delta, &params.head_w1.w, &params.head_b1.w, hidden);
            for h in hidden.iter_mut() {
                *h = h.tanh();
            }
            linear_row(
                hidden,
                &params.head_w2.as_ref().unwrap().w,
                &params.head_b2.as_ref().unwrap().w,
                pred,
            );
        }
    }
}

/// Apply the prediction head to one feature row of width `d_delta`.
///
/// `hidden` is resized to the head's hidden width (zero for the linear
/// head) and receives the post-activation hidden state, which the matching
/// backward pass needs. Used by the readout-state tap, where the clip-level
/// state itself is the feature and no frame-pair operator runs.
pub fn head_predict(params: &MvpParams, feature: &[f64], hidden: &mut Vec<f64>) -> [f64; 2] {
    let hw = if params.head == HeadKind::Mlp { MLP_HEAD_HIDDEN } else { 0 };
    hidden.resize(hw, 0.0);
    let mut pred = [0.0, 0.0];
    head_forward(params, feature, hidden, &mut pred);
    pred
}

/// Backward of [`head_predict`] for one row: accumulates `scale ×` the head
/// parameter gradients, and the feature-row gradient into `dfeature` when
/// the tap point is trainable.
pub fn head_predict_backward(
    params: &mut MvpParams,
    feature: &[f64],
    hidden: &[f64],
    dpred: [f64; 2],
    scale: f64,
    mut dfeature: Option<&mut [f64]>,
) {
    let dp = feature.len();
    let (gp0, gp1) = (dpred[0] * scale, dpred[1] * scale);
    match params.head {
        HeadKind::Linear => {
            if let Some(df) = dfeature.as_deref_mut() {
                let w = &params.head_w1.w;
                for i in 0..dp {
                    df[i] += gp0 * w[i * 2] + gp1 * w[i * 2 + 1];
                }
            }
            for i in 0..dp {
                params.head_w1.g[i * 2] += feature[i] * gp0;
                params.head_w1.g[i * 2 + 1] += feature[i] * gp1;
            }
            params.head_b1.g[0] += gp0;
            params.head_b1.g[1] += gp1;
        }
        HeadKind::Mlp => {
            let h = MLP_HEAD_HIDDEN;
            // Through second affine.
            let w2 = params.head_w2.as_mut().unwrap();
            let mut dhid = vec![0.0; h];
            for i in 0..h {
                dhid[i] = gp0 * w2.w[i * 2] + gp1 * w2.w[i * 2 + 1];
                w2.g[i * 2] += hidden[i] * gp0;
                w2.g[i * 2 + 1] += hidden[i] * gp1;
            }
            let b2 = params.head_b2.as_mut().unwrap();
            b2.g[0] += gp0;
            b2.g[1] += gp1;
            // Through tanh.
            for i in 0..h {
                dhid[i] *= 1.0 - hidden[i] * hidden[i];
            }
            // Through first affine.
            for i in 0..dp {
                let row = &params.head_w1.w[i * h..(i + 1) * h];
                let mut acc = 0.0;
                for (r, g) in row.iter().zip(&dhid) {
                    acc += r * g;
                }
                if let Some(df) = dfeature.as_deref_mut() {
                    df[i] += acc;
                }
                let grow = &mut params.head_w1.g[i * h..(i + 1) * h];
                for (gr, g) in grow.iter_mut().zip(&dhid) {
                    *gr += feature[i] * g;
                }
            }
            for (gb, g) in params.head_b1.g.iter_mut().zip(&dhid) {
                *gb += g;
            }
        }
    }
}

/// Loss of predictions against targets, averaged over unmasked pairs.
///
/// Returns `(loss, all_masked)`: a clip with no unmasked pair has loss 0 by
/// definition. `preds` is P×2 with P = targets.pairs().
pub fn mvp_loss(
    preds: &[f64],
    targets: &MotionTargets,
    loss_kind: MvpLossKind,
) -> Result<(f64, bool), DeltaError> {
    let pairs = targets.pairs();
    if preds.len() != pairs * 2 {
        return Err(DeltaError::PairCountMismatch { got: preds.len() / 2, want: pairs });
    }
    let u = targets.unmasked();
    if u == 0 {
        return Ok((0.0, true));
    }
    let mut total = 0.0;
    for t in 0..pairs {
        if !targets.mask[t] {
            continue;
        }
        let (px, py) = (preds[t * 2], preds[t * 2 + 1]);
        let [mx, my] = targets.m[t];
        total += match loss_kind {
            MvpLossKind::Mse => (px - mx) * (px - mx) + (py - my) * (py - my),
            MvpLossKind::Cosine => {
                let pn = (px * px + py * py).sqrt() + 1e-12;
                let mn = (mx * mx + my * my).sqrt() + 1e-12;
                1.0 - (px * mx + py * my) / (pn * mn)
            }
        };
    }
    Ok((total / u as f64, false))
}

/// Gradient of [`mvp_loss`] with respect to the predictions (P×2).
pub fn mvp_loss_backward(
    preds: &[f64],
    targets: &MotionTargets,
    loss_kind: MvpLossKind,
) -> Vec<f64> {
    let pairs = targets.pairs();
    let mut dp = vec![0.0; pairs * 2];
    let u = targets.unmasked();
    if u == 0 {
        return dp;
    }
    let inv_u = 1.0 / u as f64;
    for t in 0..pairs {
        if !targets.mask[t] {
            continue;
        }
        let (px, py) = (preds[t * 2], preds[t * 2 + 1]);
        let [mx, my] = targets.m[t];
        match loss_kind {
            MvpLossKind::Mse => {
                dp[t * 2] = 2.0 * (px - mx) * inv_u;
                dp[t * 2 + 1] = 2.0 * (py - my) * inv_u;
            }
            MvpLossKind::Cosine => {
                let pn = (px * px + py * py).sqrt() + 1e-12;
                let mn = (mx * mx + my * my).sqrt() + 1e-12;
                let dot = px * mx + py * my;
                // d(1 − dot/(pn·mn))/dp = −m/(pn·mn) + dot·p/(pn³·mn)
                let a = 1.0 / (pn * mn);
                let b = dot / (pn * pn * pn * mn);
                dp[t * 2] = (-mx * a + px * b) * inv_u;
                dp[t * 2 + 1] = (-my * a + py * b) * inv_u;
            }
        }
    }
    dp
}

/// Full forward pass of the branch over a stage tensor.
///
/// For [`Tap::FinalReadout`]-style use, pass the readout state as a 1×1×D
/// tensor together with single-pair targets (see
/// [`MotionTargets::mean_target`]).
pub fn mvp_forward(
    stage: &[f64],
    t_len: usize,
    n: usize,
    d: usize,
    params: &MvpParams,
    targets: &MotionTargets,
    cfg: &MvpConfig,
) -> Result<MvpTrace, DeltaError> {
    if t_len < 2 && targets.pairs() + 1 != t_len {
        return Err(DeltaError::TooFewFrames { frames: t_len });
    }
    let pooled = pool_stage(stage, t_len, n, d, cfg.pool)?;
    let dp = pooled_width(cfg.pool, n, d);
    if dp != params.d_delta {
        return Err(DeltaError::ShapeMismatch {
            expected: params.d_delta,
            got: dp,
            t: t_len,
            n,
            d,
        });
    }
    let mut gate = Vec::new();
    let deltas = delta_from_pooled(&pooled, t_len, dp, cfg.operator, Some(params), &mut gate);
    let pairs = t_len - 1;
    if pairs != targets.pairs() {
        return Err(DeltaError::PairCountMismatch { got: pairs, want: targets.pairs() });
    }

    let hidden_w = if params.head == HeadKind::Mlp { MLP_HEAD_HIDDEN } else { 0 };
    let mut hidden = vec![0.0; pairs * hidden_w];
    let mut preds = vec![0.0; pairs * 2];
    let mut hbuf = vec![0.0; hidden_w];
    for t in 0..pairs {
        head_forward(params, &deltas[t * dp..(t + 1) * dp], &mut hbuf, &mut preds[t * 2..t * 2 + 2]);
        if hidden_w > 0 {
            hidden[t * hidden_w..(t + 1) * hidden_w].copy_from_slice(&hbuf);
        }
    }
    let (loss, all_masked) = mvp_loss(&preds, targets, cfg.loss_kind)?;
    Ok(MvpTrace {
        pooled,
        deltas,
        gate,
        hidden,
        preds,
        loss,
        all_masked,
        pairs,
        d_delta: dp,
        t_len,
        n_tokens: n,
        d_chan: d,
        pool: cfg.pool,
    })
}

/// Backward pass of the branch: accumulates `scale × ∂loss/∂·` into the
/// branch parameters' gradient buffers and into `d_stage` (the gradient on
/// the stage tensor, same layout as the forward input), which may be `None`
/// when the tap point is frozen.
pub fn mvp_backward(
    trace: &MvpTrace,
    params: &mut MvpParams,
    targets: &MotionTargets,
    cfg: &MvpConfig,
    scale: f64,
    mut d_stage: Option<&mut [f64]>,
) {
    if trace.all_masked || scale == 0.0 {
        return;
    }
    let dp = trace.d_delta;
    let pairs = trace.pairs;
    let mut dpreds = mvp_loss_backward(&trace.preds, targets, cfg.loss_kind);
    for g in &mut dpreds {
        *g *= scale;
    }

    // Head backward: dpreds → ddeltas (+ head parameter grads).
    let mut ddeltas = vec![0.0; pairs * dp];
    let hw = if params.head == HeadKind::Mlp { MLP_HEAD_HIDDEN } else { 0 };
    for t in 0..pairs {
        head_predict_backward(
            params,
            &trace.deltas[t * dp..(t + 1) * dp],
            &trace.hidden[t * hw..(t + 1) * hw],
            [dpreds[t * 2], dpreds[t * 2 + 1]],
            1.0,
            Some(&mut ddeltas[t * dp..(t + 1) * dp]),
        );
    }

    // Operator backward: ddeltas → dpooled (+ operator parameter grads).
    let t_len = trace.t_len;
    let mut dpooled = vec![0.0; t_len * dp];
    match params.operator {
        DeltaOperator::Subtract => {
            for t in 0..pairs {
                for k in 0..dp {
                    let g = ddeltas[t * dp + k];
                    dpooled[(t + 1) * dp + k] += g;
                    dpooled[t * dp + k] -= g;
                }
            }
        }
        DeltaOperator::ConcatLinear => {
            let w = params.op_w.as_mut().unwrap();
            let b = params.op_b.as_mut().unwrap();
            for t in 0..pairs {
                let dd = &ddeltas[t * dp..(t + 1) * dp];
                for (gb, g) in b.g.iter_mut().zip(dd) {
                    *gb += g;
                }
                // cat = [pooled_t; pooled_{t+1}]; W is (2dp × dp).
                for i in 0..dp {
                    let xi = trace.pooled[t * dp + i];
                    let xj = trace.pooled[(t + 1) * dp + i];
                    let row_t = &w.w[i * dp..(i + 1) * dp];
                    let row_t1 = &w.w[(dp + i) * dp..(dp + i + 1) * dp];
                    let mut acc_t = 0.0;
                    let mut acc_t1 = 0.0;
                    for k in 0..dp {
                        acc_t += row_t[k] * dd[k];
                        acc_t1 += row_t1[k] * dd[k];
                    }
                    dpooled[t * dp + i] += acc_t;
                    dpooled[(t + 1) * dp + i] += acc_t1;
                    let grow_t = &mut w.g[i * dp..(i + 1) * dp];
                    for (gr, g) in grow_t.iter_mut().zip(dd) {
                        *gr += xi * g;
                    }
                    let grow_t1 = &mut w.g[(dp + i) * dp..(dp + i + 1) * dp];
                    for (gr, g) in grow_t1.iter_mut().zip(dd) {
                        *gr += xj * g;
                    }
                }
            }
        }
        DeltaOperator::GatedDiff => {
            let w = params.op_w.as_mut().unwrap();
            let b = params.op_b.as_mut().unwrap();
            for t in 0..pairs {
                let dd = &ddeltas[t * dp..(t + 1) * dp];
                let gate = &trace.gate[t * dp..(t + 1) * dp];
                // δ_k = diff_k · g_k, g = σ(W·p_t + b): split gradient into
                // the diff path and the gate path.
                let mut dpre = vec![0.0; dp];
                for k in 0..dp {
                    let diff = trace.pooled[(t + 1) * dp + k] - trace.pooled[t * dp + k];
                    let gd = dd[k] * gate[k];
                    dpooled[(t + 1) * dp + k] += gd;
                    dpooled[t * dp + k] -= gd;
                    dpre[k] = dd[k] * diff * gate[k] * (1.0 - gate[k]);
                }
                for (gb, g) in b.g.iter_mut().zip(&dpre) {
                    *gb += g;
                }
                for i in 0..dp {
                    let xi = trace.pooled[t * dp + i];
                    let row = &w.w[i * dp..(i + 1) * dp];
                    let mut acc = 0.0;
                    for (r, g) in row.iter().zip(&dpre) {
                        acc += r * g;
                    }
                    dpooled[t * dp + i] += acc;
                    let grow = &mut w.g[i * dp..(i + 1) * dp];
                    for (gr, g) in grow.iter_mut().zip(&dpre) {
                        *gr += xi * g;
                    }
                }
            }
        }
    }

    if let Some(ds) = d_stage.as_deref_mut() {
        pool_stage_backward(&dpooled, t_len, trace.n_tokens, trace.d_chan, trace.pool, ds);
    }
}

/// The combined training objective: answer cross-entropy plus the weighted
/// auxiliary term.
pub fn total_loss(l_lm: f64, l_mvp: f64, lambda: f64) -> f64 {
    l_lm + lambda * l_mvp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    #[test]
    fn targets_are_normalized_displacements() {
        let track = vec![v(0.0, 0.0), v(3.0, 4.0)];
        let t = motion_targets(&track, TARGET_EPS, PAIR_MIN_DISPLACEMENT);
        assert_eq!(t.pairs(), 1);
        assert!(t.mask[0]);
        assert!((t.m[0][0] - 0.6).abs() < 1e-8);
        assert!((t.m[0][1] - 0.8).abs() < 1e-8);
        assert!((t.m[0][0].hypot(t.m[0][1]) - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn stationary_pairs_are_masked() {
        let track = vec![v(5.0, 5.0), v(5.0, 5.0), v(5.2, 5.0), v(9.0, 5.0)];
        let t = motion_targets(&track, TARGET_EPS, PAIR_MIN_DISPLACEMENT);
        assert_eq!(t.mask, vec![false, false, true]);
        assert_eq!(t.m[0], [0.0, 0.0]);
        assert_eq!(t.m[1], [0.0, 0.0]);
        assert!((t.m[2][0] - 1.0).abs() < 1e-6 && t.m[2][1] == 0.0);
    }

    #[test]
    fn targets_negate_and_reverse_under_track_reversal() {
        let mut rng = Rng::from_seed(11);
        for _ in 0..50 {
            let track: Vec<Vec2> =
                (0..8).map(|_| v(rng.range(0.0, 64.0), rng.range(0.0, 64.0))).collect();
            let fwd = motion_targets(&track, TARGET_EPS, PAIR_MIN_DISPLACEMENT);
            let rev_track: Vec<Vec2> = track.iter().rev().cloned().collect();
            let rev = motion_targets(&rev_track, TARGET_EPS, PAIR_MIN_DISPLACEMENT);
            let pairs = fwd.pairs();
            for t in 0..pairs {
                assert_eq!(rev.mask[pairs - 1 - t], fwd.mask[t]);
                // Exact: the displacement vector is the exact negation, so
                // norm and quotient are bit-identical.
                assert_eq!(rev.m[pairs - 1 - t][0], -fwd.m[t][0]);
                assert_eq!(rev.m[pairs - 1 - t][1], -fwd.m[t][1]);
            }
        }
    }

    #[test]
    fn mean_target_ignores_masked_pairs() {
        let track = vec![v(0.0, 0.0), v(10.0, 0.0), v(10.0, 0.1), v(10.0, 10.0)];
        let t = motion_targets(&track, TARGET_EPS, PAIR_MIN_DISPLACEMENT);
        assert_eq!(t.mask, vec![true, false, true]);
        let m = t.mean_target();
        // Mean of (1,0) and (0,~1).
        assert!((m[0] - 0.5).abs() < 1e-6);
        assert!((m[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn subtract_deltas_of_constant_stage_are_zero() {
        let (t, n, d) = (5, 3, 4);
        let one_frame: Vec<f64> = (0..n * d).map(|i| i as f64 * 0.37 - 1.0).collect();
        let stage: Vec<f64> = (0..t).flat_map(|_| one_frame.clone()).collect();
        let deltas =
            delta_features(&stage, t, n, d, DeltaOperator::Subtract, DeltaPool::Mean, None)
                .unwrap();
        assert!(deltas.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn subtract_deltas_of_linear_ramp_recover_the_step() {
        // F_t = t · u for a token-uniform vector u → every δ_t = u.
        let (t_len, n, d) = (6, 2, 3);
        let u = [0.5, -1.0, 2.0];
        let mut stage = vec![0.0; t_len * n * d];
        for t in 0..t_len {
            for p in 0..n {
                for k in 0..d {
                    stage[(t * n + p) * d + k] = t as f64 * u[k];
                }
            }
        }
        for pool in [DeltaPool::Mean, DeltaPool::Flatten] {
            let deltas =
                delta_features(&stage, t_len, n, d, DeltaOperator::Subtract, pool, None).unwrap();
            let dp = pooled_width(pool, n, d);
            for t in 0..t_len - 1 {
                for k in 0..dp {
                    let want = u[k % d];
                    assert!((deltas[t * dp + k] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn subtract_deltas_negate_and_reverse_under_frame_reversal() {
        let mut rng = Rng::from_seed(3);
        let (t_len, n, d) = (7, 4, 5);
        let stage: Vec<f64> = (0..t_len * n * d).map(|_| rng.gauss()).collect();
        let mut reversed = vec![0.0; stage.len()];
        for t in 0..t_len {
            reversed[t * n * d..(t + 1) * n * d]
                .copy_from_slice(&stage[(t_len - 1 - t) * n * d..(t_len - t) * n * d]);
        }
        let fwd = delta_features(&stage, t_len, n, d, DeltaOperator::Subtract, DeltaPool::Mean, None)
            .unwrap();
        let rev =
            delta_features(&reversed, t_len, n, d, DeltaOperator::Subtract, DeltaPool::Mean, None)
                .unwrap();
        let pairs = t_len - 1;
        for t in 0..pairs {
            for k in 0..d {
                assert_eq!(rev[(pairs - 1 - t) * d + k], -fwd[t * d + k]);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let stage = vec![0.0; 10];
        let err = delta_features(&stage, 2, 3, 4, DeltaOperator::Subtract, DeltaPool::Mean, None)
            .unwrap_err();
        match err {
            DeltaError::ShapeMismatch { expected, got, .. } => {
                assert_eq!(expected, 24);
                assert_eq!(got, 10);
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn linear_head_parameter_count_is_2d_plus_2() {
        let cfg = MvpConfig::default();
        let rng = Rng::from_seed(1);
        for d in [8, 32, 128] {
            let p = MvpParams::init(&cfg, d, &rng);
            assert_eq!(p.param_count(), 2 * d + 2);
        }
    }

    #[test]
    fn perfect_predictions_have_zero_loss() {
        let track = vec![v(0.0, 0.0), v(3.0, 4.0), v(3.0, 4.0), v(0.0, 4.0)];
        let targets = motion_targets(&track, TARGET_EPS, PAIR_MIN_DISPLACEMENT);
        let preds: Vec<f64> = targets.m.iter().flatten().cloned().collect();
        for kind in [MvpLossKind::Mse, MvpLossKind::Cosine] {
            let (loss, masked) = mvp_loss(&preds, &targets, kind).unwrap();
            assert!(!masked);
            assert!(loss.abs() < 1e-9, "{kind:?} loss {loss}");
        }
    }

    #[test]
    fn zero_prediction_unit_targets_mse_is_one() {
        let track = vec![v(0.0, 0.0), v(10.0, 0.0), v(10.0, 10.0)];
        let targets = motion_targets(&track, TARGET_EPS, PAIR_MIN_DISPLACEMENT);
        let preds = vec![0.0; 4];
        let (loss, _) = mvp_loss(&preds, &targets, MvpLossKind::Mse).unwrap();
        assert!((loss - 1.0).abs() < 1e-6, "loss {loss}");
    }

    #[test]
    fn negated_prediction_mse_is_four() {
        let track = vec![v(0.0, 0.0), v(8.0, 6.0)];
        let targets = motion_targets(&track, TARGET_EPS, PAIR_MIN_DISPLACEMENT);
        let preds: Vec<f64> = targets.m.iter().flatten().map(|x| -x).collect();
        let (loss, _) = mvp_loss(&preds, &targets, MvpLossKind::Mse).unwrap();
        assert!((loss - 4.0).abs() < 1e-5, "loss {loss}");
        let (closs, _) = mvp_loss(&preds, &targets, MvpLossKind::Cosine).unwrap();
        assert!((closs - 2.0).abs() < 1e-6, "cosine loss {closs}");
    }

    #[test]
    fn all_masked_clip_reports_zero_loss_with_flag() {
        let track = vec![v(5.0, 5.0); 8];
        let targets = motion_targets(&track, TARGET_EPS, PAIR_MIN_DISPLACEMENT);
        assert!(targets.all_masked());
        let preds = vec![0.3; 14];
        let (loss, masked) = mvp_loss(&preds, &targets, MvpLossKind::Mse).unwrap();
        assert_eq!(loss, 0.0);
        assert!(masked);
    }

    #[test]
    fn total_loss_is_affine_in_lambda() {
        assert_eq!(total_loss(0.5, 0.25, 0.0), 0.5);
        assert_eq!(total_loss(0.5, 0.25, 1.0), 0.75);
        assert_eq!(total_loss(1.0, 2.0, 0.5), 2.0);
    }

    /// Shared harness: finite-difference check of the full branch backward
    /// under a given configuration.
    fn fd_check(cfg: &MvpConfig, t_len: usize, n: usize, d: usize, seed: u64) {
        let mut rng = Rng::from_seed(seed);
        let stage: Vec<f64> = (0..t_len * n * d).map(|_| rng.gauss()).collect();
        let track: Vec<Vec2> =
            (0..t_len).map(|_| v(rng.range(0.0, 64.0), rng.range(0.0, 64.0))).collect();
        let targets = motion_targets(&track, TARGET_EPS, PAIR_MIN_DISPLACEMENT);
        let dp = pooled_width(cfg.pool, n, d);
        let mut params = MvpParams::init(cfg, dp, &rng);

        let loss_of = |params: &MvpParams, stage: &[f64]| {
            mvp_forward(stage, t_len, n, d, params, &targets, cfg).unwrap().loss
        };

        let trace = mvp_forward(&stage, t_len, n, d, &params, &targets, cfg).unwrap();
        params.zero_grad();
        let mut d_stage = vec![0.0; stage.len()];
        mvp_backward(&trace, &mut params, &targets, cfg, 1.0, Some(&mut d_stage));

        let eps = 1e-5;
        // Parameter gradients.
        let n_tensors = params.tensors().len();
        for ti in 0..n_tensors {
            for i in 0..params.tensors()[ti].len() {
                let orig = params.tensors()[ti].w[i];
                params.tensors_mut()[ti].w[i] = orig + eps;
                let up = loss_of(&params, &stage);
                params.tensors_mut()[ti].w[i] = orig - eps;
                let dn = loss_of(&params, &stage);
                params.tensors_mut()[ti].w[i] = orig;
                let fd = (up - dn) / (2.0 * eps);
                let ana = params.tensors()[ti].g[i];
                let denom = fd.abs().max(ana.abs()).max(1e-6);
                assert!(
                    (fd - ana).abs() / denom < 1e-4,
                    "{} [{}]: analytic {ana} vs fd {fd} ({cfg:?})",
                    params.tensors()[ti].name,
                    i
                );
            }
        }
        // Stage-tensor gradient (spot-check every 7th element for speed).
        for i in (0..stage.len()).step_by(7) {
            let mut s = stage.clone();
            s[i] += eps;
            let up = loss_of(&params, &s);
            s[i] = stage[i] - eps;
            let dn = loss_of(&params, &s);
            let fd = (up - dn) / (2.0 * eps);
            let ana = d_stage[i];
            let denom = fd.abs().max(ana.abs()).max(1e-6);
            assert!(
                (fd - ana).abs() / denom < 1e-4,
                "d_stage[{i}]: analytic {ana} vs fd {fd} ({cfg:?})"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_across_configs() {
        let base = MvpConfig::default();
        let mut seed = 100;
        for operator in [DeltaOperator::Subtract, DeltaOperator::ConcatLinear, DeltaOperator::GatedDiff]
        {
            for pool in [DeltaPool::Mean, DeltaPool::Flatten] {
                for head in [HeadKind::Linear, HeadKind::Mlp] {
                    for loss_kind in [MvpLossKind::Mse, MvpLossKind::Cosine] {
                        let cfg = MvpConfig { operator, pool, head, loss_kind, ..base };
                        seed += 1;
                        fd_check(&cfg, 4, 3, 5, seed);
                    }
                }
            }
        }
    }

    #[test]
    fn backward_scale_multiplies_gradients() {
        // The gradient of λ·L_MVP with respect to head weights is λ times
        // the gradient of L_MVP.
        let cfg = MvpConfig::default();
        let mut rng = Rng::from_seed(77);
        let (t_len, n, d) = (5, 2, 6);
        let stage: Vec<f64> = (0..t_len * n * d).map(|_| rng.gauss()).collect();
        let track: Vec<Vec2> =
            (0..t_len).map(|_| v(rng.range(0.0, 64.0), rng.range(0.0, 64.0))).collect();
        let targets = motion_targets(&track, TARGET_EPS, PAIR_MIN_DISPLACEMENT);
        let mut params = MvpParams::init(&cfg, d, &rng);
        let trace = mvp_forward(&stage, t_len, n, d, &params, &targets, &cfg).unwrap();

        params.zero_grad();
        mvp_backward(&trace, &mut params, &targets, &cfg, 1.0, None);
        let g1: Vec<f64> = params.head_w1.g.clone();
        params.zero_grad();
        mvp_backward(&trace, &mut params, &targets, &cfg, 0.25, None);
        for (a, b) in params.head_w1.g.iter().zip(&g1) {
            assert!((a - 0.25 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn static_clip_backward_is_a_no_op() {
        let cfg = MvpConfig::default();
        let rng = Rng::from_seed(5);
        let (t_len, n, d) = (4, 2, 3);
        let stage = vec![0.7; t_len * n * d];
        let targets = motion_targets(&vec![v(1.0, 1.0); t_len], TARGET_EPS, PAIR_MIN_DISPLACEMENT);
        let mut params = MvpParams::init(&cfg, d, &rng);
        let trace = mvp_forward(&stage, t_len, n, d, &params, &targets, &cfg).unwrap();
        assert!(trace.all_masked);
        assert_eq!(trace.loss, 0.0);
        params.zero_grad();
        let mut d_stage = vec![0.0; stage.len()];
        mvp_backward(&trace, &mut params, &targets, &cfg, 1.0, Some(&mut d_stage));
        assert!(params.head_w1.g.iter().all(|&g| g == 0.0));
        assert!(d_stage.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn default_config_is_the_reference_method() {
        let cfg = MvpConfig::default();
        assert_eq!(cfg.tap, Tap::PostProjector);
        assert_eq!(cfg.operator, DeltaOperator::Subtract);
        assert_eq!(cfg.pool, DeltaPool::Mean);
        assert_eq!(cfg.head, HeadKind::Linear);
        assert_eq!(cfg.loss_kind, MvpLossKind::Mse);
        assert_eq!(cfg.lambda, 1.0);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = MvpConfig {
            tap: Tap::LmVisualTokens(2),
            operator: DeltaOperator::GatedDiff,
            pool: DeltaPool::Flatten,
            head: HeadKind::Mlp,
            loss_kind: MvpLossKind::Cosine,
            lambda: 0.5,
        };
        let s = serde_json::to_string(&cfg).unwrap();
        let back: MvpConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        // Unknown fields are rejected.
        let bad = r#"{"tap":"post-projector","operator":"subtract","pool":"mean","head":"linear","loss_kind":"mse","lambda":1.0,"extra":3}"#;
        assert!(serde_json::from_str::<MvpConfig>(bad).is_err());
    }
}
