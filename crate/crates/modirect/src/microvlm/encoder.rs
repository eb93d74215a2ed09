//! Frozen deterministic vision encoder.
//!
//! Each frame is divided into a fixed patch grid. A patch is summarized by an
//! 8-channel descriptor — mean R/G/B, luma standard deviation, mean horizontal
//! and vertical luma gradient, and the patch's normalized grid coordinates —
//! and lifted into a D_v-dimensional token by a fixed, hand-designed feature
//! map. Three structural choices make spatially pooled tokens behave like a
//! real vision backbone's pooled features:
//!
//! 1. **Saliency gating.** Patch tokens are weighted by a softmax over each
//!    frame's appearance-deviation scores, so patches that stand out from the
//!    frame (a foreground object) dominate any spatial mean, the way
//!    attention concentrates a transformer's pooled representation. The gate
//!    is a pure function of the frame — nothing is trained.
//! 2. **Split feature halves.** The first half of each token reads only
//!    appearance channels, the second half only the patch coordinates. Pooled
//!    tokens therefore carry object appearance and object position in near-
//!    additive form: frame-to-frame differences cancel appearance and keep
//!    position, while temporal means keep appearance.
//! 3. **Bump and ramp codes.** Hue is carried by a bank of von Mises bumps
//!    tuned to directions on the opponent-chroma circle, evaluated on the
//!    patch's *normalized* chroma — so each object color activates a small,
//!    contrast-invariant subset of units, and colors a couple of bump
//!    spacings apart produce nearly orthogonal patterns that even a heavily
//!    regularized linear readout separates. The remaining appearance dims
//!    carry chroma magnitude, brightness, and texture units; position dims
//!    form tanh ramps at staggered offsets whose weighted average tracks
//!    the object centroid.
//!
//! Appearance channels are centered on their per-frame means before the lift;
//! since the patch grid tiles the frame exactly, global backgrounds cancel in
//! any spatial pooling while a localized object survives it.

use serde::{Deserialize, Serialize};

pub const DESCRIPTOR_DIM: usize = 8;
/// Channels 0..6 describe patch appearance (color, luma spread, gradients);
/// channels 6..8 are the normalized patch-grid coordinates.
pub const APPEARANCE_CHANNELS: usize = 6;

/// Token layout: hue bumps, chroma magnitude, two offset brightness units,
/// texture, then the two position ramp banks.
pub const HUE_BUMPS: usize = 12;
pub const APPEARANCE_DIMS: usize = HUE_BUMPS + 4;
pub const POS_RAMPS: usize = 8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Patches per side; M = patch_grid².
    pub patch_grid: usize,
    /// Lifted feature width D_v.
    pub d_v: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { patch_grid: 8, d_v: 32 }
    }
}

impl EncoderConfig {
    pub fn patches(&self) -> usize {
        self.patch_grid * self.patch_grid
    }
}

/// Scale parameters of the frozen lift, calibrated so that pooled features
/// keep object position linearly decodable while per-frame deltas suppress
/// object identity.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LiftProfile {
    /// Sharpness of the chroma-magnitude unit.
    pub chroma_gain: f64,
    /// Soft floor on chroma magnitude in the hue normalization, relative
    /// to the frame's strongest patch: bump inputs are scaled by
    /// `‖chroma‖ / (‖chroma‖ + floor·max_frame_‖chroma‖)`, near one for
    /// strongly colored patches and fading out for patches whose color
    /// deviation is weak relative to the frame's.
    pub chroma_floor: f64,
    /// Concentration of the von Mises hue bumps (higher = narrower tuning).
    pub hue_kappa: f64,
    /// Sharpness of the brightness units.
    pub luma_gain: f64,
    /// Offset between the two brightness units' thresholds.
    pub luma_offset: f64,
    /// Sharpness of the texture (luma spread) unit.
    pub std_gain: f64,
    /// Sharpness of the edge-energy unit.
    pub grad_gain: f64,
    /// Sharpness of the position ramps.
    pub pos_gain: f64,
    /// Softmax temperature of the saliency gate (higher = sharper focus).
    pub saliency_beta: f64,
}

impl Default for LiftProfile {
    fn default() -> Self {
        LiftProfile {
            chroma_gain: 2.0,
            chroma_floor: 0.3,
            hue_kappa: 15.0,
            luma_gain: 3.0,
            luma_offset: 0.8,
            std_gain: 8.0,
            grad_gain: 12.0,
            pos_gain: 2.5,
            saliency_beta: 3.0,
        }
    }
}

/// The frozen lift from patch descriptors to encoder tokens.
#[derive(Clone, Debug)]
pub struct EncoderLift {
    d_v: usize,
    /// Unit directions of the hue bump centers: (cos, sin) per bump.
    bumps: [(f64, f64); HUE_BUMPS],
    /// Position ramp offsets, shared by the x and y banks.
    offsets: [f64; POS_RAMPS],
    profile: LiftProfile,
}

impl EncoderLift {
    pub fn new(cfg: &EncoderConfig) -> EncoderLift {
        EncoderLift::with_profile(cfg, &LiftProfile::default())
    }

    pub fn with_profile(cfg: &EncoderConfig, profile: &LiftProfile) -> EncoderLift {
        assert_eq!(
            cfg.d_v,
            APPEARANCE_DIMS + 2 * POS_RAMPS,
            "token width must fit the fixed code layout"
        );
        let mut bumps = [(0.0, 0.0); HUE_BUMPS];
        for (j, b) in bumps.iter_mut().enumerate() {
            let phi = std::f64::consts::TAU * j as f64 / HUE_BUMPS as f64;
            *b = (phi.cos(), phi.sin());
        }
        let mut offsets = [0.0; POS_RAMPS];
        for (i, o) in offsets.iter_mut().enumerate() {
            *o = (i as f64 + 0.5) / POS_RAMPS as f64;
        }
        EncoderLift { d_v: cfg.d_v, bumps, offsets, profile: profile.clone() }
    }

    pub fn appearance_dims(&self) -> usize {
        APPEARANCE_DIMS
    }

    /// Lift one frame's patch descriptors into gated tokens (m × d_v).
    ///
    /// Token p equals `m · g̃_p · code(z_p)` where g̃ is the saliency softmax
    /// over the frame's patches, so the patch-axis mean of the tokens is
    /// exactly the saliency-weighted average of the underlying code.
    pub fn lift_frame(&self, frame_desc: &[f64], m: usize, out: &mut [f64]) {
        debug_assert_eq!(frame_desc.len(), m * DESCRIPTOR_DIM);
        debug_assert_eq!(out.len(), m * self.d_v);
        let pr = &self.profile;
        let mean = frame_channel_means(frame_desc, m);

        // Per-patch derived appearance quantities and saliency.
        let mut chroma = vec![(0.0f64, 0.0f64); m];
        let mut luma_dev = vec![0.0f64; m];
        let mut std_dev = vec![0.0f64; m];
        let mut edge = vec![0.0f64; m];
        let mut saliency = vec![0.0f64; m];
        for p in 0..m {
            let d = &frame_desc[p * DESCRIPTOR_DIM..(p + 1) * DESCRIPTOR_DIM];
            let dr = d[0] - mean[0];
            let dg = d[1] - mean[1];
            let db = d[2] - mean[2];
            // Opponent-color plane: orthonormal complement of the gray axis.
            let u = (dr - dg) / f64::sqrt(2.0);
            let v = (dr + dg - 2.0 * db) / f64::sqrt(6.0);
            chroma[p] = (u, v);
            luma_dev[p] = 0.299 * dr + 0.587 * dg + 0.114 * db;
            std_dev[p] = d[3] - mean[3];
            edge[p] = (d[4] * d[4] + d[5] * d[5]).sqrt();
            let s2 = pr.chroma_gain * pr.chroma_gain * (u * u + v * v)
                + (pr.luma_gain * luma_dev[p]).powi(2)
                + (pr.std_gain * std_dev[p]).powi(2)
                + (pr.grad_gain * edge[p]).powi(2);
            saliency[p] = s2.sqrt();
        }

        // Standardize saliency across the frame, then softmax: the gate
        // concentrates on outlier patches no matter the background's overall
        // contrast level.
        let s_mean = saliency.iter().sum::<f64>() / m as f64;
        let s_var = saliency.iter().map(|s| (s - s_mean) * (s - s_mean)).sum::<f64>() / m as f64;
        let s_std = s_var.sqrt().max(1e-9);
        let mut gate_max = f64::NEG_INFINITY;
        for s in &mut saliency {
            *s = pr.saliency_beta * (*s - s_mean) / s_std;
            gate_max = gate_max.max(*s);
        }
        let mut gate_sum = 0.0;
        for s in &mut saliency {
            *s = (*s - gate_max).exp();
            gate_sum += *s;
        }

        // Frame-relative normalization floor for the chroma direction dims.
        let mag_max = chroma.iter().map(|(u, v)| (u * u + v * v).sqrt()).fold(0.0, f64::max);
        let floor = pr.chroma_floor * mag_max + 1e-12;

        for p in 0..m {
            let weight = m as f64 * saliency[p] / gate_sum;
            let d = &frame_desc[p * DESCRIPTOR_DIM..(p + 1) * DESCRIPTOR_DIM];
            let tok = &mut out[p * self.d_v..(p + 1) * self.d_v];
            let (u, v) = chroma[p];
            let mag = (u * u + v * v).sqrt();
            // Place-cell hue code on the normalized chroma direction: the
            // direction is exact regardless of coverage, so every patch of
            // one object votes for the same few bumps; `sat` fades the code
            // out for patches whose color deviation is weak relative to the
            // frame's strongest.
            let sat = mag / (mag + floor);
            let inv = 1.0 / (mag + 1e-12);
            let (cu, cv) = (u * inv, v * inv);
            for (j, (c, s)) in self.bumps.iter().enumerate() {
                tok[j] = sat * (pr.hue_kappa * (c * cu + s * cv - 1.0)).exp();
            }
            tok[HUE_BUMPS] = (pr.chroma_gain * mag).tanh();
            let l = pr.luma_gain * luma_dev[p];
            tok[HUE_BUMPS + 1] = (l - pr.luma_offset).tanh();
            tok[HUE_BUMPS + 2] = (l + pr.luma_offset).tanh();
            tok[HUE_BUMPS + 3] = (pr.std_gain * std_dev[p]).tanh();
            for (i, o) in self.offsets.iter().enumerate() {
                tok[APPEARANCE_DIMS + i] = (pr.pos_gain * (d[6] - o)).tanh();
                tok[APPEARANCE_DIMS + POS_RAMPS + i] = (pr.pos_gain * (d[7] - o)).tanh();
            }
            for t in tok.iter_mut() {
                *t *= weight;
            }
        }
    }
}

/// Per-frame mean of each descriptor channel across the frame's patches.
pub fn frame_channel_means(frame_desc: &[f64], m: usize) -> [f64; DESCRIPTOR_DIM] {
    debug_assert_eq!(frame_desc.len(), m * DESCRIPTOR_DIM);
    let mut mean = [0.0f64; DESCRIPTOR_DIM];
    for p in 0..m {
        for c in 0..DESCRIPTOR_DIM {
            mean[c] += frame_desc[p * DESCRIPTOR_DIM + c];
        }
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    mean
}

/// Raw patch descriptors of every frame: (t × M × 8), row-major.
///
/// `frames` is clip pixel data in (t, y, x, c) layout with values in [0, 1].
pub fn patch_descriptors(
    frames: &[f32],
    t_len: usize,
    height: usize,
    width: usize,
    cfg: &EncoderConfig,
) -> Vec<f64> {
    let g = cfg.patch_grid;
    assert!(height % g == 0 && width % g == 0, "frame not divisible into patch grid");
    let (ph, pw) = (height / g, width / g);
    let m = cfg.patches();
    let mut out = vec![0.0f64; t_len * m * DESCRIPTOR_DIM];

    // Per-frame luma plane, reused across patches.
    let mut luma = vec![0.0f64; height * width];
    for t in 0..t_len {
        let frame = &frames[t * height * width * 3..(t + 1) * height * width * 3];
        for y in 0..height {
            for x in 0..width {
                let o = (y * width + x) * 3;
                luma[y * width + x] = 0.299 * frame[o] as f64
                    + 0.587 * frame[o + 1] as f64
                    + 0.114 * frame[o + 2] as f64;
            }
        }
        for gy in 0..g {
            for gx in 0..g {
                let mut rgb = [0.0f64; 3];
                let mut lsum = 0.0;
                let mut lsq = 0.0;
                let mut gxs = 0.0;
                let mut gys = 0.0;
                for y in gy * ph..(gy + 1) * ph {
                    for x in gx * pw..(gx + 1) * pw {
                        let o = (y * width + x) * 3;
                        rgb[0] += frame[o] as f64;
                        rgb[1] += frame[o + 1] as f64;
                        rgb[2] += frame[o + 2] as f64;
                        let l = luma[y * width + x];
                        lsum += l;
                        lsq += l * l;
                        // Central differences, clamped at the frame border.
                        let xl = x.saturating_sub(1);
                        let xr = (x + 1).min(width - 1);
                        let yu = y.saturating_sub(1);
                        let yd = (y + 1).min(height - 1);
                        gxs += (luma[y * width + xr] - luma[y * width + xl]) * 0.5;
                        gys += (luma[yd * width + x] - luma[yu * width + x]) * 0.5;
                    }
                }
                let n = (ph * pw) as f64;
                let mean_l = lsum / n;
                let var = (lsq / n - mean_l * mean_l).max(0.0);
                let d = (t * m + gy * g + gx) * DESCRIPTOR_DIM;
                out[d] = rgb[0] / n;
                out[d + 1] = rgb[1] / n;
                out[d + 2] = rgb[2] / n;
                out[d + 3] = var.sqrt();
                out[d + 4] = gxs / n;
                out[d + 5] = gys / n;
                out[d + 6] = (gx as f64 + 0.5) / g as f64;
                out[d + 7] = (gy as f64 + 0.5) / g as f64;
            }
        }
    }
    out
}

/// Encode frames into the frozen feature tensor V: (t × M × D_v), row-major.
pub fn encode_frames(
    frames: &[f32],
    t_len: usize,
    height: usize,
    width: usize,
    cfg: &EncoderConfig,
    lift: &EncoderLift,
) -> Vec<f64> {
    let desc = patch_descriptors(frames, t_len, height, width, cfg);
    lift_descriptors(&desc, t_len, cfg, lift)
}

/// Apply the frozen lift to precomputed descriptors.
pub fn lift_descriptors(
    desc: &[f64],
    t_len: usize,
    cfg: &EncoderConfig,
    lift: &EncoderLift,
) -> Vec<f64> {
    let m = cfg.patches();
    debug_assert_eq!(desc.len(), t_len * m * DESCRIPTOR_DIM);
    let mut v = vec![0.0f64; t_len * m * cfg.d_v];
    for t in 0..t_len {
        lift.lift_frame(
            &desc[t * m * DESCRIPTOR_DIM..(t + 1) * m * DESCRIPTOR_DIM],
            m,
            &mut v[t * m * cfg.d_v..(t + 1) * m * cfg.d_v],
        );
    }
    v
}

/// Mean over the patch axis of one frame's features: V (t×M×d) → (d).
pub fn pool_frame_mean(v: &[f64], t: usize, m: usize, d: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), d);
    out.fill(0.0);
    let base = t * m * d;
    for p in 0..m {
        for k in 0..d {
            out[k] += v[base + p * d + k];
        }
    }
    let inv = 1.0 / m as f64;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::scenegen::{
        generate_clip, sample_clip_spec, BackgroundStyle, Direction8, Domain, MotionType,
    };

    fn test_clip(seed: u64) -> crate::scenegen::VideoClip {
        let mut rng = Rng::from_seed(seed);
        let spec = sample_clip_spec(
            Domain::PSyn,
            BackgroundStyle::Plain,
            MotionType::Linear,
            Some(Direction8::Down),
            seed,
            8,
            64,
            64,
            &mut rng,
        );
        generate_clip(&spec).unwrap()
    }

    #[test]
    fn descriptor_coordinates_are_patch_grid_positions() {
        let clip = test_clip(3);
        let cfg = EncoderConfig::default();
        let d = patch_descriptors(&clip.frames, 8, 64, 64, &cfg);
        // Patch (0,0) has coords (0.0625, 0.0625); patch (7,7) has (0.9375, 0.9375).
        assert_eq!(d[6], 0.0625);
        assert_eq!(d[7], 0.0625);
        let last = (63 * DESCRIPTOR_DIM) + 6;
        assert_eq!(d[last], 0.9375);
        assert_eq!(d[last + 1], 0.9375);
    }

    #[test]
    fn encoding_is_deterministic() {
        let clip = test_clip(9);
        let cfg = EncoderConfig::default();
        let lift = EncoderLift::new(&cfg);
        let a = encode_frames(&clip.frames, 8, 64, 64, &cfg, &lift);
        let b = encode_frames(&clip.frames, 8, 64, 64, &cfg, &lift);
        assert_eq!(a, b);
        assert_eq!(a.len(), 8 * 64 * 32);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn split_halves_read_disjoint_channels() {
        let cfg = EncoderConfig::default();
        let lift = EncoderLift::new(&cfg);
        // Two descriptors differing only in position channels produce
        // identical appearance half-features at equal gate weight, and
        // vice versa. Build a two-patch frame to keep the gate symmetric.
        let mut frame = vec![0.0f64; 2 * DESCRIPTOR_DIM];
        frame[0..8].copy_from_slice(&[0.9, 0.1, 0.2, 0.05, 0.01, -0.01, 0.25, 0.25]);
        frame[8..16].copy_from_slice(&[0.1, 0.9, 0.2, 0.05, -0.01, 0.01, 0.75, 0.75]);
        let mut out = vec![0.0f64; 2 * cfg.d_v];
        lift.lift_frame(&frame, 2, &mut out);
        // Same appearance, different positions:
        let mut frame2 = frame.clone();
        frame2[6] = 0.75; // move patch 0
        frame2[7] = 0.75;
        let mut out2 = vec![0.0f64; 2 * cfg.d_v];
        lift.lift_frame(&frame2, 2, &mut out2);
        let a_dims = lift.appearance_dims();
        for k in 0..a_dims {
            assert!(
                (out[k] - out2[k]).abs() < 1e-12,
                "appearance dim {k} moved when only position changed"
            );
        }
        assert!(
            (a_dims..cfg.d_v).any(|k| (out[k] - out2[k]).abs() > 1e-6),
            "position dims ignored a position change"
        );
    }

    #[test]
    fn pooled_tokens_focus_on_the_object() {
        // The saliency gate should put most pooled mass near the object, so
        // the pooled position half must track the object across frames.
        let clip = test_clip(21);
        let cfg = EncoderConfig::default();
        let lift = EncoderLift::new(&cfg);
        let v = encode_frames(&clip.frames, 8, 64, 64, &cfg, &lift);
        let m = cfg.patches();
        let mut first = vec![0.0; cfg.d_v];
        let mut last = vec![0.0; cfg.d_v];
        pool_frame_mean(&v, 0, m, cfg.d_v, &mut first);
        pool_frame_mean(&v, 7, m, cfg.d_v, &mut last);
        let a = lift.appearance_dims();
        let pos_shift: f64 = (a..cfg.d_v).map(|k| (last[k] - first[k]).abs()).sum();
        let app_shift: f64 = (0..a).map(|k| (last[k] - first[k]).abs()).sum();
        assert!(
            pos_shift > app_shift,
            "moving object: position half moved {pos_shift:.4}, appearance half {app_shift:.4}"
        );
    }

    #[test]
    fn chroma_direction_distinguishes_hues() {
        let cfg = EncoderConfig::default();
        let lift = EncoderLift::new(&cfg);
        // Two-patch frames with a red vs. a green deviation: the normalized
        // chroma-direction dims must point along clearly different rays.
        let red = [0.8, 0.2, 0.2, 0.0, 0.0, 0.0, 0.25, 0.25];
        let green = [0.2, 0.8, 0.2, 0.0, 0.0, 0.0, 0.25, 0.25];
        let other = [0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.75, 0.75];
        let mut frame_r = vec![0.0f64; 2 * DESCRIPTOR_DIM];
        frame_r[0..8].copy_from_slice(&red);
        frame_r[8..16].copy_from_slice(&other);
        let mut frame_g = frame_r.clone();
        frame_g[0..8].copy_from_slice(&green);
        let mut out_r = vec![0.0f64; 2 * cfg.d_v];
        let mut out_g = vec![0.0f64; 2 * cfg.d_v];
        lift.lift_frame(&frame_r, 2, &mut out_r);
        lift.lift_frame(&frame_g, 2, &mut out_g);
        // Compare patch 0's bump patterns: far-apart hues activate nearly
        // disjoint bump subsets.
        let cos = {
            let dot: f64 = (0..HUE_BUMPS).map(|j| out_r[j] * out_g[j]).sum();
            let nr: f64 = (0..HUE_BUMPS).map(|j| out_r[j] * out_r[j]).sum::<f64>().sqrt();
            let ng: f64 = (0..HUE_BUMPS).map(|j| out_g[j] * out_g[j]).sum::<f64>().sqrt();
            dot / (nr * ng)
        };
        assert!(cos < 0.2, "red and green bump patterns too similar: cos={cos:.3}");
    }
}
