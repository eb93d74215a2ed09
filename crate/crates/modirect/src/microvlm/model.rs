//! The trainable model: projector plus causal-attention readout.
//!
//! The frozen encoder (see [`super::encoder`]) turns a clip into visual
//! tokens V. A two-layer projector with a fixed 2×2 spatial mean pool maps
//! them into the readout width, and an L-layer pre-normalized single-head
//! causal attention stack consumes the sequence
//!
//! ```text
//! [T·N visual tokens][question-type token][letter, word]×K[readout token]
//! ```
//!
//! The answer logits are the unembedding rows of the K option letters
//! evaluated at the readout position. All math is f64 and hand-differentiated;
//! the backward pass mirrors the forward buffers exactly so analytic
//! gradients can be validated against finite differences at tight tolerance.
//!
//! At initialization the readout is *slot-symmetric*: every residual branch
//! starts at zero (attention output and MLP output projections), and the
//! nine option-letter rows of both embedding tables start identical. A fresh
//! model therefore scores every option slot identically — permuting the
//! options permutes the answer logits exactly — so any slot preference is
//! learned, never built in.

use super::vocab::{Vocab, MAX_OPTIONS, READOUT_TOKEN};
use crate::qagen::{QARecord, QAType};
use crate::rng::{mix_seed, Rng};
use crate::tensor::{dot, linear_row, linear_row_nobias, softmax, Param};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Epsilon inside every RMS normalization.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MicroVlmError {
    #[error("option word {word:?} is not in the vocabulary")]
    VocabularyMiss { word: String },
    #[error("{qa_type:?} is not a multiple-choice type")]
    NotMultipleChoice { qa_type: QAType },
    #[error("record {clip_id} embeds no clip recipe, cannot materialize frames")]
    MissingClip { clip_id: String },
    #[error("training loss became non-finite at step {step}")]
    DivergenceDetected { step: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("tap layer {layer} outside 1..={layers}")]
    InvalidTapLayer { layer: usize, layers: usize },
    #[error("visual tensor has {got} values, expected {expected}")]
    VisualShape { got: usize, expected: usize },
    #[error(transparent)]
    Scene(#[from] crate::scenegen::SceneGenError),
    #[error(transparent)]
    Delta(#[from] crate::deltadirect::DeltaError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture hyperparameters. The default is the reference model; tests
/// shrink it to keep exhaustive finite-difference sweeps fast.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default = "ModelConfig::default")]
pub struct ModelConfig {
    /// Frames per clip (T).
    pub frames: usize,
    /// Encoder patch grid side; the projector's 2×2 pool halves it.
    pub patch_grid: usize,
    /// Encoder token width (D_v).
    pub d_v: usize,
    /// Readout width (D).
    pub d: usize,
    /// Attention blocks (L).
    pub layers: usize,
    /// MLP hidden width as a multiple of D.
    pub mlp_ratio: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { frames: 8, patch_grid: 8, d_v: 32, d: 32, layers: 4, mlp_ratio: 2 }
    }
}

impl ModelConfig {
    /// Encoder patches per frame (M).
    pub fn patches(&self) -> usize {
        self.patch_grid * self.patch_grid
    }

    /// Visual tokens per frame after the 2×2 pool (N).
    pub fn tokens_per_frame(&self) -> usize {
        assert!(self.patch_grid % 2 == 0, "patch grid must be even for 2×2 pooling");
        (self.patch_grid / 2) * (self.patch_grid / 2)
    }

    /// Visual tokens per clip (T·N).
    pub fn visual_tokens(&self) -> usize {
        self.frames * self.tokens_per_frame()
    }

    /// Longest possible sequence: visual block, type token, nine
    /// letter/word pairs, readout token.
    pub fn max_seq(&self) -> usize {
        self.visual_tokens() + 1 + 2 * MAX_OPTIONS + 1
    }

    /// MLP hidden width.
    pub fn hidden(&self) -> usize {
        self.d * self.mlp_ratio
    }

    /// Sequence length for a K-option record.
    pub fn seq_len(&self, options: usize) -> usize {
        self.visual_tokens() + 1 + 2 * options + 1
    }
}

/// One attention block's parameters.
#[derive(Clone, Debug)]
pub struct BlockParams {
    pub att_norm_g: Param,
    pub wq: Param,
    pub wk: Param,
    pub wv: Param,
    pub wo: Param,
    pub mlp_norm_g: Param,
    pub wm1: Param,
    pub bm1: Param,
    pub wm2: Param,
    pub bm2: Param,
}

/// All trainable tensors of projector + readout.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub proj_w1: Param,
    pub proj_b1: Param,
    pub proj_w2: Param,
    pub proj_b2: Param,
    pub embed: Param,
    pub pos: Param,
    pub blocks: Vec<BlockParams>,
    pub final_norm_g: Param,
    pub unembed: Param,
}

/// Stable per-tensor RNG stream tag from the tensor's name.
fn name_tag(name: &str) -> u64 {
    let parts: Vec<u64> = name.bytes().map(|b| b as u64).collect();
    mix_seed(&parts)
}

fn randn_named(name: &str, rows: usize, cols: usize, std: f64, root: &Rng) -> Param {
    let mut rng = root.derive(name_tag(name));
    Param::randn(name, rows, cols, std, &mut rng)
}

impl ModelParams {
    /// Reference initialization: random content weights, zeroed residual
    /// branches, tied option-letter rows (see module docs).
    pub fn init(cfg: &ModelConfig, seed: u64) -> ModelParams {
        let mut p = ModelParams::init_untied(cfg, seed);
        // Zero the residual branches: a fresh stack is the identity map, so
        // the readout state is option-order independent at step zero.
        p.proj_b1.w.fill(0.0);
        p.proj_b2.w.fill(0.0);
        for b in &mut p.blocks {
            b.wo.w.fill(0.0);
            b.wm2.w.fill(0.0);
        }
        // Tie the option-letter rows in both tables.
        let vocab = Vocab::new();
        let d = cfg.d;
        for table in [&mut p.embed, &mut p.unembed] {
            let base = vocab.letter(0) as usize;
            let src: Vec<f64> = table.w[base * d..(base + 1) * d].to_vec();
            for k in 1..MAX_OPTIONS {
                let row = vocab.letter(k) as usize;
                table.w[row * d..(row + 1) * d].copy_from_slice(&src);
            }
        }
        p
    }

    /// Fully random initialization (no ties, live residual branches): a
    /// diagnostic configuration used to measure chance behavior.
    pub fn init_untied(cfg: &ModelConfig, seed: u64) -> ModelParams {
        let root = Rng::from_seed(seed);
        let vocab = Vocab::new();
        let d = cfg.d;
        let sd = 1.0 / (d as f64).sqrt();
        let h = cfg.hidden();
        let blocks = (0..cfg.layers)
            .map(|l| {
                let nm = |s: &str| format!("block{l}.{s}");
                BlockParams {
                    att_norm_g: Param::full(&nm("att_norm_g"), 1, d, 1.0),
                    wq: randn_named(&nm("wq"), d, d, sd, &root),
                    wk: randn_named(&nm("wk"), d, d, sd, &root),
                    wv: randn_named(&nm("wv"), d, d, sd, &root),
                    wo: randn_named(&nm("wo"), d, d, sd, &root),
                    mlp_norm_g: Param::full(&nm("mlp_norm_g"), 1, d, 1.0),
                    wm1: randn_named(&nm("wm1"), d, h, sd, &root),
                    bm1: Param::zeros(&nm("bm1"), 1, h),
                    wm2: randn_named(&nm("wm2"), h, d, 1.0 / (h as f64).sqrt(), &root),
                    bm2: Param::zeros(&nm("bm2"), 1, d),
                }
            })
            .collect();
        ModelParams {
            cfg: *cfg,
            proj_w1: randn_named("proj_w1", cfg.d_v, d, 1.0 / (cfg.d_v as f64).sqrt(), &root),
            proj_b1: Param::zeros("proj_b1", 1, d),
            proj_w2: randn_named("proj_w2", d, d, sd, &root),
            proj_b2: Param::zeros("proj_b2", 1, d),
            embed: randn_named("embed", vocab.len(), d, 0.5, &root),
            pos: randn_named("pos", cfg.max_seq(), d, 0.1, &root),
            blocks,
            final_norm_g: Param::full("final_norm_g", 1, d, 1.0),
            unembed: randn_named("unembed", vocab.len(), d, 0.5, &root),
        }
    }

    /// All trainable tensors in a fixed, documented order.
    pub fn tensors(&self) -> Vec<&Param> {
        let mut v = vec![&self.proj_w1, &self.proj_b1, &self.proj_w2, &self.proj_b2, &self.embed, &self.pos];
        for b in &self.blocks {
            v.extend([
                &b.att_norm_g,
                &b.wq,
                &b.wk,
                &b.wv,
                &b.wo,
                &b.mlp_norm_g,
                &b.wm1,
                &b.bm1,
                &b.wm2,
                &b.bm2,
            ]);
        }
        v.push(&self.final_norm_g);
        v.push(&self.unembed);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = vec![
            &mut self.proj_w1,
            &mut self.proj_b1,
            &mut self.proj_w2,
            &mut self.proj_b2,
            &mut self.embed,
            &mut self.pos,
        ];
        for b in &mut self.blocks {
            v.extend([
                &mut b.att_norm_g,
                &mut b.wq,
                &mut b.wk,
                &mut b.wv,
                &mut b.wo,
                &mut b.mlp_norm_g,
                &mut b.wm1,
                &mut b.bm1,
                &mut b.wm2,
                &mut b.bm2,
            ]);
        }
        v.push(&mut self.final_norm_g);
        v.push(&mut self.unembed);
        v
    }

    pub fn zero_grad(&mut self) {
        for p in self.tensors_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|p| p.len()).sum()
    }

    /// Logits of the first `letters` option slots for a readout-layer state
    /// `h` (width D): final normalization then the letter unembedding rows.
    /// This is the logit-lens map; at the final layer it reproduces the
    /// model's answer logits bit-for-bit because the forward pass calls this
    /// same function.
    pub fn lens_logits(&self, h: &[f64], letters: usize) -> Vec<f64> {
        let d = self.cfg.d;
        debug_assert_eq!(h.len(), d);
        let vocab = Vocab::new();
        let inv = rms_inv(h);
        let mut hn = vec![0.0; d];
        for k in 0..d {
            hn[k] = self.final_norm_g.w[k] * h[k] * inv;
        }
        (0..letters)
            .map(|i| {
                let row = vocab.letter(i) as usize;
                dot(&self.unembed.w[row * d..(row + 1) * d], &hn)
            })
            .collect()
    }
}

/// Tokenized question side of one MCQ record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleTokens {
    pub qa_type_id: u32,
    pub option_word_ids: Vec<u32>,
    pub gold_slot: usize,
}

impl SampleTokens {
    pub fn options(&self) -> usize {
        self.option_word_ids.len()
    }
}

/// Tokenize an MCQ record against the fixed vocabulary.
pub fn tokenize_record(rec: &QARecord, vocab: &Vocab) -> Result<SampleTokens, MicroVlmError> {
    if !rec.qa_type.is_mcq() {
        return Err(MicroVlmError::NotMultipleChoice { qa_type: rec.qa_type });
    }
    let option_word_ids = rec
        .options
        .iter()
        .map(|w| vocab.id(w).ok_or_else(|| MicroVlmError::VocabularyMiss { word: w.clone() }))
        .collect::<Result<Vec<u32>, _>>()?;
    Ok(SampleTokens {
        qa_type_id: vocab.qa_type(rec.qa_type),
        option_word_ids,
        gold_slot: rec.gold_index,
    })
}

/// Token ids of the text tail ([type][letter, word]×K[readout]), in
/// sequence order starting at position T·N.
pub fn text_tail(toks: &SampleTokens, vocab: &Vocab) -> Vec<u32> {
    let mut tail = Vec::with_capacity(2 + 2 * toks.options());
    tail.push(toks.qa_type_id);
    for (k, &w) in toks.option_word_ids.iter().enumerate() {
        tail.push(vocab.letter(k));
        tail.push(w);
    }
    tail.push(READOUT_TOKEN);
    tail
}

#[inline]
pub(crate) fn rms_inv(x: &[f64]) -> f64 {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    1.0 / (ms + NORM_EPS).sqrt()
}

/// Per-block forward intermediates (sized for the longest sequence, valid
/// up to the current sample's length).
#[derive(Clone, Debug)]
pub struct BlockTrace {
    pub nx1: Vec<f64>,
    pub inv1: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub att: Vec<f64>,
    pub att_out: Vec<f64>,
    pub x_mid: Vec<f64>,
    pub nx2: Vec<f64>,
    pub inv2: Vec<f64>,
    pub mlp_h: Vec<f64>,
}

/// Reusable forward/backward buffers for one sample at a time.
#[derive(Clone, Debug)]
pub struct Workspace {
    /// 2×2-pooled encoder tokens, T×N×D_v.
    pub pooled_v: Vec<f64>,
    /// Projector pre-activation and hidden, T×N×D.
    pub a1: Vec<f64>,
    pub h1: Vec<f64>,
    /// Projector output F, T×N×D.
    pub f: Vec<f64>,
    /// Residual stream: x[0] = inputs, x[l] = after block l. Each S×D.
    pub x: Vec<Vec<f64>>,
    pub blocks: Vec<BlockTrace>,
    /// Final-normalized readout state and answer distribution.
    pub hn: Vec<f64>,
    pub final_inv: f64,
    pub answer_logits: Vec<f64>,
    pub answer_probs: Vec<f64>,
    /// Current sample's sequence length and token tail.
    pub s_len: usize,
    pub tail: Vec<u32>,
    // Backward scratch (one S×D gradient lane per direction of travel).
    pub dx: Vec<f64>,
    pub dmid: Vec<f64>,
    pub dnx: Vec<f64>,
    pub dq: Vec<f64>,
    pub dk: Vec<f64>,
    pub dv: Vec<f64>,
    pub datt_out: Vec<f64>,
    pub dmlp_h: Vec<f64>,
    pub df: Vec<f64>,
    pub dh1: Vec<f64>,
}

impl Workspace {
    pub fn new(cfg: &ModelConfig) -> Workspace {
        let tn = cfg.visual_tokens();
        let s = cfg.max_seq();
        let d = cfg.d;
        let h = cfg.hidden();
        let block = BlockTrace {
            nx1: vec![0.0; s * d],
            inv1: vec![0.0; s],
            q: vec![0.0; s * d],
            k: vec![0.0; s * d],
            v: vec![0.0; s * d],
            att: vec![0.0; s * s],
            att_out: vec![0.0; s * d],
            x_mid: vec![0.0; s * d],
            nx2: vec![0.0; s * d],
            inv2: vec![0.0; s],
            mlp_h: vec![0.0; s * h],
        };
        Workspace {
            pooled_v: vec![0.0; tn * cfg.d_v],
            a1: vec![0.0; tn * d],
            h1: vec![0.0; tn * d],
            f: vec![0.0; tn * d],
            x: vec![vec![0.0; s * d]; cfg.layers + 1],
            blocks: vec![block; cfg.layers],
            hn: vec![0.0; d],
            final_inv: 0.0,
            answer_logits: Vec::new(),
            answer_probs: Vec::new(),
            s_len: 0,
            tail: Vec::new(),
            dx: vec![0.0; s * d],
            dmid: vec![0.0; s * d],
            dnx: vec![0.0; s * d],
            dq: vec![0.0; s * d],
            dk: vec![0.0; s * d],
            dv: vec![0.0; s * d],
            datt_out: vec![0.0; s * d],
            dmlp_h: vec![0.0; s * h],
            df: vec![0.0; tn * d],
            dh1: vec![0.0; tn * d],
        }
    }
}

/// 2×2 spatial mean pool of encoder tokens: (T×M×D_v) → (T×N×D_v), where
/// the patch grid side halves. Token order stays row-major over the pooled
/// grid.
pub fn pool_visual(v: &[f64], cfg: &ModelConfig, out: &mut [f64]) {
    let g = cfg.patch_grid;
    let gp = g / 2;
    let m = cfg.patches();
    let n = cfg.tokens_per_frame();
    let dv = cfg.d_v;
    debug_assert_eq!(v.len(), cfg.frames * m * dv);
    debug_assert_eq!(out.len(), cfg.frames * n * dv);
    for t in 0..cfg.frames {
        for py in 0..gp {
            for px in 0..gp {
                let o = ((t * n) + py * gp + px) * dv;
                let out_tok = &mut out[o..o + dv];
                out_tok.fill(0.0);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let patch = (2 * py + dy) * g + (2 * px + dx);
                        let i = (t * m + patch) * dv;
                        for (ot, vt) in out_tok.iter_mut().zip(&v[i..i + dv]) {
                            *ot += vt;
                        }
                    }
                }
                for ot in out_tok.iter_mut() {
                    *ot *= 0.25;
                }
            }
        }
    }
}

/// Projector forward: F = W2·tanh(W1·pool(V) + b1) + b2, token-wise.
pub fn project(v: &[f64], params: &ModelParams, ws: &mut Workspace) {
    let cfg = &params.cfg;
    pool_visual(v, cfg, &mut ws.pooled_v);
    let tn = cfg.visual_tokens();
    let (dv, d) = (cfg.d_v, cfg.d);
    for s in 0..tn {
        linear_row(
            &ws.pooled_v[s * dv..(s + 1) * dv],
            &params.proj_w1.w,
            &params.proj_b1.w,
            &mut ws.a1[s * d..(s + 1) * d],
        );
    }
    for (h, a) in ws.h1.iter_mut().zip(&ws.a1) {
        *h = a.tanh();
    }
    for s in 0..tn {
        linear_row(
            &ws.h1[s * d..(s + 1) * d],
            &params.proj_w2.w,
            &params.proj_b2.w,
            &mut ws.f[s * d..(s + 1) * d],
        );
    }
}

fn rms_norm_rows(x: &[f64], gain: &[f64], s_len: usize, d: usize, out: &mut [f64], inv: &mut [f64]) {
    for p in 0..s_len {
        let row = &x[p * d..(p + 1) * d];
        let iv = rms_inv(row);
        inv[p] = iv;
        let orow = &mut out[p * d..(p + 1) * d];
        for k in 0..d {
            orow[k] = gain[k] * row[k] * iv;
        }
    }
}

/// Full forward pass of one sample. `v` is the frozen encoder output
/// (T×M×D_v). Fills the workspace and leaves the K answer logits in
/// `ws.answer_logits`. Returns the per-sample answer cross-entropy.
pub fn forward(
    v: &[f64],
    toks: &SampleTokens,
    params: &ModelParams,
    vocab: &Vocab,
    ws: &mut Workspace,
) -> Result<f64, MicroVlmError> {
    let cfg = &params.cfg;
    let expected = cfg.frames * cfg.patches() * cfg.d_v;
    if v.len() != expected {
        return Err(MicroVlmError::VisualShape { got: v.len(), expected });
    }
    let tn = cfg.visual_tokens();
    let d = cfg.d;
    let s_len = cfg.seq_len(toks.options());
    ws.s_len = s_len;
    ws.tail = text_tail(toks, vocab);

    project(v, params, ws);

    // Assemble the input stream: visual tokens then embedded text tokens,
    // all with learned positional embeddings.
    {
        let x0 = &mut ws.x[0];
        for p in 0..tn {
            let row = &mut x0[p * d..(p + 1) * d];
            row.copy_from_slice(&ws.f[p * d..(p + 1) * d]);
            for (r, e) in row.iter_mut().zip(params.pos.row(p)) {
                *r += e;
            }
        }
        for (i, &tok) in ws.tail.iter().enumerate() {
            let p = tn + i;
            let row = &mut x0[p * d..(p + 1) * d];
            row.copy_from_slice(params.embed.row(tok as usize));
            for (r, e) in row.iter_mut().zip(params.pos.row(p)) {
                *r += e;
            }
        }
    }

    let scale = 1.0 / (d as f64).sqrt();
    let h_w = cfg.hidden();
    for l in 0..cfg.layers {
        let (before, after) = ws.x.split_at_mut(l + 1);
        let x_in = &before[l];
        let x_out = &mut after[0];
        let bt = &mut ws.blocks[l];
        let bp = &params.blocks[l];

        rms_norm_rows(x_in, &bp.att_norm_g.w, s_len, d, &mut bt.nx1, &mut bt.inv1);
        for p in 0..s_len {
            let nrow = &bt.nx1[p * d..(p + 1) * d];
            linear_row_nobias(nrow, &bp.wq.w, &mut bt.q[p * d..(p + 1) * d]);
            linear_row_nobias(nrow, &bp.wk.w, &mut bt.k[p * d..(p + 1) * d]);
            linear_row_nobias(nrow, &bp.wv.w, &mut bt.v[p * d..(p + 1) * d]);
        }
        // Causal single-head attention.
        for i in 0..s_len {
            let qi = &bt.q[i * d..(i + 1) * d];
            let arow = &mut bt.att[i * s_len..(i + 1) * s_len];
            for j in 0..=i {
                arow[j] = dot(qi, &bt.k[j * d..(j + 1) * d]) * scale;
            }
            softmax(&mut arow[..=i]);
            let orow = &mut bt.att_out[i * d..(i + 1) * d];
            orow.fill(0.0);
            for j in 0..=i {
                let a = arow[j];
                for (o, vv) in orow.iter_mut().zip(&bt.v[j * d..(j + 1) * d]) {
                    *o += a * vv;
                }
            }
        }
        // Residual add of the attention projection.
        for p in 0..s_len {
            let mid = &mut bt.x_mid[p * d..(p + 1) * d];
            linear_row_nobias(&bt.att_out[p * d..(p + 1) * d], &bp.wo.w, mid);
            for (m, xi) in mid.iter_mut().zip(&x_in[p * d..(p + 1) * d]) {
                *m += xi;
            }
        }
        // MLP with pre-norm and residual.
        rms_norm_rows(&bt.x_mid, &bp.mlp_norm_g.w, s_len, d, &mut bt.nx2, &mut bt.inv2);
        for p in 0..s_len {
            let hrow = &mut bt.mlp_h[p * h_w..(p + 1) * h_w];
            linear_row(&bt.nx2[p * d..(p + 1) * d], &bp.wm1.w, &bp.bm1.w, hrow);
            for hv in hrow.iter_mut() {
                *hv = hv.tanh();
            }
            let out = &mut x_out[p * d..(p + 1) * d];
            linear_row(hrow, &bp.wm2.w, &bp.bm2.w, out);
            for (o, m) in out.iter_mut().zip(&bt.x_mid[p * d..(p + 1) * d]) {
                *o += m;
            }
        }
    }

    // Readout: final norm then letter logits.
    let h_l = &ws.x[cfg.layers][(s_len - 1) * d..s_len * d];
    ws.answer_logits = params.lens_logits(h_l, toks.options());
    ws.final_inv = rms_inv(h_l);
    for k in 0..d {
        ws.hn[k] = params.final_norm_g.w[k] * h_l[k] * ws.final_inv;
    }
    ws.answer_probs = ws.answer_logits.clone();
    softmax(&mut ws.answer_probs);
    Ok(-ws.answer_probs[toks.gold_slot].max(1e-300).ln())
}

/// Backward pass of the answer cross-entropy (scaled by `scale`), starting
/// from the forward state left in `ws`. Accumulates parameter gradients in
/// the params' grad buffers and leaves ∂L/∂F in `ws.df` (visual-token
/// gradient, including any upstream contribution already present when
/// `add_df` is true — used to merge the auxiliary branch's gradient before
/// the projector backward).
///
/// `extra_dx_top`: optional additional gradient on the final residual
/// stream (S×D, e.g. none for plain training), kept for layer-targeted
/// interventions and diagnostics.
pub fn backward_lm(
    toks: &SampleTokens,
    params: &mut ModelParams,
    ws: &mut Workspace,
    scale: f64,
) {
    let cfg = params.cfg;
    let d = cfg.d;
    let s_len = ws.s_len;
    let tn = cfg.visual_tokens();

    // d logits (cross-entropy): p − y, scaled.
    let kopt = toks.options();
    let mut dlogits = ws.answer_probs.clone();
    dlogits[toks.gold_slot] -= 1.0;
    for g in &mut dlogits {
        *g *= scale;
    }

    // Unembedding rows and final norm.
    let vocab = Vocab::new();
    let mut dhn = vec![0.0; d];
    for (i, &dl) in dlogits.iter().enumerate().take(kopt) {
        let row = vocab.letter(i) as usize;
        for (o, u) in dhn.iter_mut().zip(params.unembed.row(row)) {
            *o += dl * u;
        }
        let urow = params.unembed.grad_row_mut(row);
        for (ug, h) in urow.iter_mut().zip(&ws.hn) {
            *ug += dl * h;
        }
    }
    // Final RMS norm backward into the top residual stream.
    ws.dx[..s_len * d].fill(0.0);
    {
        let h_l = &ws.x[cfg.layers][(s_len - 1) * d..s_len * d];
        let iv = ws.final_inv;
        let gw = &params.final_norm_g.w;
        let mut dot_gx = 0.0;
        for k in 0..d {
            params.final_norm_g.g[k] += dhn[k] * h_l[k] * iv;
            dot_gx += dhn[k] * gw[k] * h_l[k];
        }
        let c = dot_gx * iv * iv * iv / d as f64;
        let dxrow = &mut ws.dx[(s_len - 1) * d..s_len * d];
        for k in 0..d {
            dxrow[k] = gw[k] * dhn[k] * iv - h_l[k] * c;
        }
    }

    backward_blocks(params, ws, cfg.layers, true);

    // Split x[0] gradient into visual (→ F) and text (→ embeddings) parts;
    // positional rows catch everything.
    for p in 0..s_len {
        let dxrow = &ws.dx[p * d..(p + 1) * d];
        let prow = params.pos.grad_row_mut(p);
        for (pg, g) in prow.iter_mut().zip(dxrow) {
            *pg += g;
        }
    }
    for (df, dx) in ws.df[..tn * d].iter_mut().zip(&ws.dx[..tn * d]) {
        *df += dx;
    }
    for (i, &tok) in ws.tail.iter().enumerate() {
        let p = tn + i;
        let erow = params.embed.grad_row_mut(tok as usize);
        for (eg, g) in erow.iter_mut().zip(&ws.dx[p * d..(p + 1) * d]) {
            *eg += g;
        }
    }
}

/// Backward through blocks `top..1`, consuming `ws.dx` as the gradient on
/// x[top] and leaving the gradient on x[0] in `ws.dx`. When
/// `accumulate_params` is false the chain rule still runs through every
/// block, but no block parameter gradient is written — the path used by the
/// auxiliary branch, whose gradients must reach the projector without
/// touching readout parameters.
pub fn backward_blocks(
    params: &mut ModelParams,
    ws: &mut Workspace,
    top: usize,
    accumulate_params: bool,
) {
    let cfg = params.cfg;
    let d = cfg.d;
    let h_w = cfg.hidden();
    let s_len = ws.s_len;
    let scale = 1.0 / (d as f64).sqrt();

    for l in (0..top).rev() {
        let bt = &ws.blocks[l];
        let bp = &mut params.blocks[l];
        let x_in = &ws.x[l];

        // ---- MLP residual: dx is the gradient on x_out.
        // Through Wm2 into mlp hidden.
        for p in 0..s_len {
            let dxrow = &ws.dx[p * d..(p + 1) * d];
            let hrow = &bt.mlp_h[p * h_w..(p + 1) * h_w];
            let dhrow = &mut ws.dmlp_h[p * h_w..(p + 1) * h_w];
            for i in 0..h_w {
                dhrow[i] = dot(&bp.wm2.w[i * d..(i + 1) * d], dxrow);
            }
            if accumulate_params {
                for i in 0..h_w {
                    let g = &mut bp.wm2.g[i * d..(i + 1) * d];
                    let hi = hrow[i];
                    for (gk, dk) in g.iter_mut().zip(dxrow) {
                        *gk += hi * dk;
                    }
                }
                for (bg, dk) in bp.bm2.g.iter_mut().zip(dxrow) {
                    *bg += dk;
                }
            }
            // tanh'
            for (dh, hv) in dhrow.iter_mut().zip(hrow) {
                *dh *= 1.0 - hv * hv;
            }
        }
        // Through Wm1 into nx2.
        for p in 0..s_len {
            let dhrow = &ws.dmlp_h[p * h_w..(p + 1) * h_w];
            let nrow = &bt.nx2[p * d..(p + 1) * d];
            let dnrow = &mut ws.dnx[p * d..(p + 1) * d];
            for i in 0..d {
                dnrow[i] = dot(&bp.wm1.w[i * h_w..(i + 1) * h_w], dhrow);
            }
            if accumulate_params {
                for i in 0..d {
                    let g = &mut bp.wm1.g[i * h_w..(i + 1) * h_w];
                    let ni = nrow[i];
                    for (gk, dk) in g.iter_mut().zip(dhrow) {
                        *gk += ni * dk;
                    }
                }
                for (bg, dk) in bp.bm1.g.iter_mut().zip(dhrow) {
                    *bg += dk;
                }
            }
        }
        // RMS norm backward (nx2 ← x_mid), then add the residual path:
        // dmid = norm_bwd(dnx) + dx.
        for p in 0..s_len {
            let xrow = &bt.x_mid[p * d..(p + 1) * d];
            let dnrow = &ws.dnx[p * d..(p + 1) * d];
            let iv = bt.inv2[p];
            let gw = &bp.mlp_norm_g.w;
            let mut dot_gx = 0.0;
            for k in 0..d {
                if accumulate_params {
                    bp.mlp_norm_g.g[k] += dnrow[k] * xrow[k] * iv;
                }
                dot_gx += dnrow[k] * gw[k] * xrow[k];
            }
            let c = dot_gx * iv * iv * iv / d as f64;
            let dmrow = &mut ws.dmid[p * d..(p + 1) * d];
            let dxrow = &ws.dx[p * d..(p + 1) * d];
            for k in 0..d {
                dmrow[k] = gw[k] * dnrow[k] * iv - xrow[k] * c + dxrow[k];
            }
        }

        // ---- Attention residual: dmid is the gradient on x_mid.
        // Through Wo into att_out.
        for p in 0..s_len {
            let dmrow = &ws.dmid[p * d..(p + 1) * d];
            let arow = &bt.att_out[p * d..(p + 1) * d];
            let darow = &mut ws.datt_out[p * d..(p + 1) * d];
            for i in 0..d {
                darow[i] = dot(&bp.wo.w[i * d..(i + 1) * d], dmrow);
            }
            if accumulate_params {
                for i in 0..d {
                    let g = &mut bp.wo.g[i * d..(i + 1) * d];
                    let ai = arow[i];
                    for (gk, dk) in g.iter_mut().zip(dmrow) {
                        *gk += ai * dk;
                    }
                }
            }
        }
        // Attention core backward.
        ws.dq[..s_len * d].fill(0.0);
        ws.dk[..s_len * d].fill(0.0);
        ws.dv[..s_len * d].fill(0.0);
        let mut ds = vec![0.0; s_len];
        for i in 0..s_len {
            let darow = &ws.datt_out[i * d..(i + 1) * d];
            let att_row = &bt.att[i * s_len..(i + 1) * s_len];
            // da_j = ⟨datt_out_i, v_j⟩; dv_j += a_j · datt_out_i.
            let mut da_dot = 0.0;
            for j in 0..=i {
                let vj = &bt.v[j * d..(j + 1) * d];
                let da = dot(darow, vj);
                ds[j] = da;
                da_dot += att_row[j] * da;
                let dvj = &mut ws.dv[j * d..(j + 1) * d];
                let aj = att_row[j];
                for (o, g) in dvj.iter_mut().zip(darow) {
                    *o += aj * g;
                }
            }
            // Softmax backward: dscore_j = a_j (da_j − Σ a·da).
            for j in 0..=i {
                ds[j] = att_row[j] * (ds[j] - da_dot);
            }
            // dq_i += Σ_j ds_j k_j · scale; dk_j += ds_j q_i · scale.
            let qi = bt.q[i * d..(i + 1) * d].to_vec();
            let dqi = &mut ws.dq[i * d..(i + 1) * d];
            for j in 0..=i {
                let sj = ds[j] * scale;
                if sj == 0.0 {
                    continue;
                }
                for (o, kk) in dqi.iter_mut().zip(&bt.k[j * d..(j + 1) * d]) {
                    *o += sj * kk;
                }
                let dkj = &mut ws.dk[j * d..(j + 1) * d];
                for (o, qq) in dkj.iter_mut().zip(&qi) {
                    *o += sj * qq;
                }
            }
        }
        // Through Wq/Wk/Wv into nx1 (accumulated), then norm backward into
        // dx (which becomes the gradient on x[l], including the residual).
        for p in 0..s_len {
            let nrow = &bt.nx1[p * d..(p + 1) * d];
            let dnrow = &mut ws.dnx[p * d..(p + 1) * d];
            for i in 0..d {
                let wq_row = &bp.wq.w[i * d..(i + 1) * d];
                let wk_row = &bp.wk.w[i * d..(i + 1) * d];
                let wv_row = &bp.wv.w[i * d..(i + 1) * d];
                let dqr = &ws.dq[p * d..(p + 1) * d];
                let dkr = &ws.dk[p * d..(p + 1) * d];
                let dvr = &ws.dv[p * d..(p + 1) * d];
                dnrow[i] = dot(wq_row, dqr) + dot(wk_row, dkr) + dot(wv_row, dvr);
            }
            if accumulate_params {
                for i in 0..d {
                    let ni = nrow[i];
                    let gq = &mut bp.wq.g[i * d..(i + 1) * d];
                    for (gk, dk) in gq.iter_mut().zip(&ws.dq[p * d..(p + 1) * d]) {
                        *gk += ni * dk;
                    }
                    let gk_ = &mut bp.wk.g[i * d..(i + 1) * d];
                    for (gk, dk) in gk_.iter_mut().zip(&ws.dk[p * d..(p + 1) * d]) {
                        *gk += ni * dk;
                    }
                    let gv = &mut bp.wv.g[i * d..(i + 1) * d];
                    for (gk, dk) in gv.iter_mut().zip(&ws.dv[p * d..(p + 1) * d]) {
                        *gk += ni * dk;
                    }
                }
            }
        }
        for p in 0..s_len {
            let xrow = &x_in[p * d..(p + 1) * d];
            let dnrow = &ws.dnx[p * d..(p + 1) * d];
            let iv = bt.inv1[p];
            let gw = &bp.att_norm_g.w;
            let mut dot_gx = 0.0;
            for k in 0..d {
                if accumulate_params {
                    bp.att_norm_g.g[k] += dnrow[k] * xrow[k] * iv;
                }
                dot_gx += dnrow[k] * gw[k] * xrow[k];
            }
            let c = dot_gx * iv * iv * iv / d as f64;
            let dxrow = &mut ws.dx[p * d..(p + 1) * d];
            let dmrow = &ws.dmid[p * d..(p + 1) * d];
            for k in 0..d {
                dxrow[k] = gw[k] * dnrow[k] * iv - xrow[k] * c + dmrow[k];
            }
        }
    }
}

/// Projector backward: consumes `ws.df` (gradient on F) and accumulates
/// into the projector parameters. The gradient on the pooled encoder tokens
/// is discarded — the encoder is frozen.
pub fn backward_projector(params: &mut ModelParams, ws: &mut Workspace) {
    let cfg = params.cfg;
    let tn = cfg.visual_tokens();
    let (dv, d) = (cfg.d_v, cfg.d);
    for s in 0..tn {
        let dfrow = &ws.df[s * d..(s + 1) * d];
        let h1row = &ws.h1[s * d..(s + 1) * d];
        // Through W2.
        let dh1row = &mut ws.dh1[s * d..(s + 1) * d];
        for i in 0..d {
            dh1row[i] = dot(&params.proj_w2.w[i * d..(i + 1) * d], dfrow);
        }
        for i in 0..d {
            let g = &mut params.proj_w2.g[i * d..(i + 1) * d];
            let hi = h1row[i];
            for (gk, dk) in g.iter_mut().zip(dfrow) {
                *gk += hi * dk;
            }
        }
        for (bg, dk) in params.proj_b2.g.iter_mut().zip(dfrow) {
            *bg += dk;
        }
        // tanh'
        for (dh, hv) in dh1row.iter_mut().zip(h1row) {
            *dh *= 1.0 - hv * hv;
        }
        // Through W1.
        let prow = &ws.pooled_v[s * dv..(s + 1) * dv];
        let dh1row = &ws.dh1[s * d..(s + 1) * d];
        for i in 0..dv {
            let g = &mut params.proj_w1.g[i * d..(i + 1) * d];
            let pi = prow[i];
            for (gk, dk) in g.iter_mut().zip(dh1row) {
                *gk += pi * dk;
            }
        }
        for (bg, dk) in params.proj_b1.g.iter_mut().zip(dh1row) {
            *bg += dk;
        }
    }
}

/// Per-site hidden states of one sample, exactly as the diagnostics read
/// them.
#[derive(Clone, Debug)]
pub struct ActivationTrace {
    pub frames: usize,
    pub patches: usize,
    pub d_v: usize,
    pub tokens_per_frame: usize,
    pub d: usize,
    pub layers: usize,
    /// Frozen encoder tokens, T×M×D_v.
    pub v: Vec<f64>,
    /// Projector output, T×N×D.
    pub f: Vec<f64>,
    /// Per-layer per-frame mean over that frame's visual-token positions,
    /// L×T×D (layer-major).
    pub z: Vec<f64>,
    /// Per-layer readout-position state, L×D.
    pub h: Vec<f64>,
    /// Answer logits over the record's option slots.
    pub answer_logits: Vec<f64>,
}

impl ActivationTrace {
    /// z^ℓ_t for 1-based layer ℓ.
    pub fn z_at(&self, layer: usize, frame: usize) -> &[f64] {
        let d = self.d;
        let o = ((layer - 1) * self.frames + frame) * d;
        &self.z[o..o + d]
    }

    /// h^ℓ for 1-based layer ℓ.
    pub fn h_at(&self, layer: usize) -> &[f64] {
        let d = self.d;
        &self.h[(layer - 1) * d..layer * d]
    }
}

/// Forward pass returning the answer logits and the populated trace.
pub fn forward_traced(
    v: &[f64],
    toks: &SampleTokens,
    params: &ModelParams,
    vocab: &Vocab,
    ws: &mut Workspace,
) -> Result<(Vec<f64>, ActivationTrace), MicroVlmError> {
    forward(v, toks, params, vocab, ws)?;
    let cfg = &params.cfg;
    let (t_len, n, d) = (cfg.frames, cfg.tokens_per_frame(), cfg.d);
    let s_len = ws.s_len;
    let mut z = vec![0.0; cfg.layers * t_len * d];
    let mut h = vec![0.0; cfg.layers * d];
    for l in 1..=cfg.layers {
        let x = &ws.x[l];
        for t in 0..t_len {
            let zrow = &mut z[((l - 1) * t_len + t) * d..((l - 1) * t_len + t + 1) * d];
            for p in t * n..(t + 1) * n {
                for (o, xv) in zrow.iter_mut().zip(&x[p * d..(p + 1) * d]) {
                    *o += xv;
                }
            }
            let inv = 1.0 / n as f64;
            for o in zrow.iter_mut() {
                *o *= inv;
            }
        }
        h[(l - 1) * d..l * d].copy_from_slice(&x[(s_len - 1) * d..s_len * d]);
    }
    let trace = ActivationTrace {
        frames: t_len,
        patches: cfg.patches(),
        d_v: cfg.d_v,
        tokens_per_frame: n,
        d,
        layers: cfg.layers,
        v: v.to_vec(),
        f: ws.f.clone(),
        z,
        h,
        answer_logits: ws.answer_logits.clone(),
    };
    Ok((ws.answer_logits.clone(), trace))
}
