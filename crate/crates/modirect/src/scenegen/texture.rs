//! Procedural color and texture primitives.
//!
//! All texture functions are stateless: color at a point is a pure function
//! of (seed, position), built on integer hashing rather than a stateful
//! generator, so any pixel can be evaluated in any order with identical
//! results.

use super::{BackgroundSpec, ForegroundSpec, Shape};
use crate::rng::Rng;

/// Foreground colors are laid out on an opponent-color hue wheel
/// (u = (R−G)/√2, v = (R+G−2B)/√6, both orthogonal to the gray axis) rather
/// than picked by eye: eight chromatic palette slots sit at evenly spaced
/// hue angles, and each shape family rotates its slot's hue by a fixed
/// small angle. Every shape × color identity therefore owns a distinct,
/// evenly separated hue direction, which keeps identities visually
/// separable even at low resolution where boundary geometry blurs away.
/// White and black carry a primary-color tint per shape instead (a hue
/// rotation of zero chroma is undefined); the tinted variants stay far
/// brighter (white) or darker (black) than any background level.
const SLOT_ANGLE0: f32 = 22.5;
const SLOT_STEP: f32 = 45.0;
/// Hue rotation, in degrees, between adjacent shape families of one slot.
const SHAPE_ROT: f32 = 15.0;
/// Chromatic slots as (name, luma, chroma): luma per slot maximizes the
/// chroma that keeps all three shape-rotated variants inside the gamut.
const CHROMATIC: [(&str, f32, f32); 8] = [
    ("red", 0.35, 0.550),
    ("orange", 0.61, 0.535),
    ("yellow", 0.70, 0.550),
    ("green", 0.63, 0.550),
    ("cyan", 0.65, 0.550),
    ("blue", 0.39, 0.535),
    ("purple", 0.30, 0.550),
    ("magenta", 0.37, 0.550),
];
const WHITE_LEVEL: f32 = 0.80;
const BLACK_LEVEL: f32 = 0.11;
/// Additive primary tint applied to the white/black shape variants.
const ACH_TINT: f32 = 0.20;

pub const PALETTE_LEN: usize = 10;

/// RGB from opponent-color chroma (u, v) and Rec. 601 luma.
fn rgb_from_opponent(u: f32, v: f32, y: f32) -> [f32; 3] {
    [
        0.910_754 * u + 0.139_621 * v + y,
        -0.503_460 * u + 0.139_621 * v + y,
        0.203_647 * u - 1.085_124 * v + y,
    ]
}

/// Representative (shape-free) color of a palette entry: the slot-center
/// hue for chromatic entries, the untinted level for white and black.
pub fn palette_color(i: usize) -> [f32; 3] {
    match i {
        0..=7 => {
            let (_, y, c) = CHROMATIC[i];
            let a = (SLOT_ANGLE0 + SLOT_STEP * i as f32).to_radians();
            rgb_from_opponent(c * a.cos(), c * a.sin(), y)
        }
        8 => [WHITE_LEVEL; 3],
        _ => [BLACK_LEVEL; 3],
    }
}

pub fn palette_name(i: usize) -> &'static str {
    match i {
        0..=7 => CHROMATIC[i].0,
        8 => "white",
        _ => "black",
    }
}

/// Effective fill color of a primitive foreground: the palette slot's hue
/// rotated by the shape family's angle (chromatic slots) or the level
/// shifted toward the shape family's primary (white/black).
pub(crate) fn primitive_color(shape: Shape, color: usize) -> [f32; 3] {
    let step = match shape {
        Shape::Circle => -1.0,
        Shape::Square => 0.0,
        Shape::Triangle => 1.0,
    };
    let rgb = if color < 8 {
        let (_, y, c) = CHROMATIC[color];
        let a = (SLOT_ANGLE0 + SLOT_STEP * color as f32 + SHAPE_ROT * step).to_radians();
        rgb_from_opponent(c * a.cos(), c * a.sin(), y)
    } else {
        let base = if color == 8 { WHITE_LEVEL } else { BLACK_LEVEL };
        let t = ACH_TINT;
        let tint = match shape {
            Shape::Circle => [t, -0.5 * t, -0.5 * t],
            Shape::Square => [-0.5 * t, t, -0.5 * t],
            Shape::Triangle => [-0.5 * t, -0.5 * t, t],
        };
        [base + tint[0], base + tint[1], base + tint[2]]
    };
    [
        rgb[0].clamp(0.0, 1.0),
        rgb[1].clamp(0.0, 1.0),
        rgb[2].clamp(0.0, 1.0),
    ]
}

/// 64-bit stateless hash of a seed and 2-D integer coordinates.
#[inline]
fn hash2(seed: u64, x: i64, y: i64) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    h = h.wrapping_add((x as u64).wrapping_mul(0xd134_2543_de82_ef95));
    h ^= h >> 31;
    h = h.wrapping_add((y as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f));
    h = (h ^ (h >> 29)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^ (h >> 32)
}

/// Uniform value in [0, 1) from a hash.
#[inline]
fn hash_unit(seed: u64, x: i64, y: i64) -> f32 {
    (hash2(seed, x, y) >> 40) as f32 * (1.0 / (1u64 << 24) as f32)
}

/// Bilinear value noise on an integer lattice scaled by `cell`.
#[inline]
fn value_noise(seed: u64, x: f32, y: f32, cell: f32) -> f32 {
    let gx = x / cell;
    let gy = y / cell;
    let x0 = gx.floor();
    let y0 = gy.floor();
    let fx = gx - x0;
    let fy = gy - y0;
    // Smoothstep fade for C1 continuity.
    let sx = fx * fx * (3.0 - 2.0 * fx);
    let sy = fy * fy * (3.0 - 2.0 * fy);
    let (xi, yi) = (x0 as i64, y0 as i64);
    let v00 = hash_unit(seed, xi, yi);
    let v10 = hash_unit(seed, xi + 1, yi);
    let v01 = hash_unit(seed, xi, yi + 1);
    let v11 = hash_unit(seed, xi + 1, yi + 1);
    let a = v00 + (v10 - v00) * sx;
    let b = v01 + (v11 - v01) * sx;
    a + (b - a) * sy
}

/// Multi-octave value noise in [0, 1].
#[inline]
pub(crate) fn fractal_noise(seed: u64, x: f32, y: f32, base_cell: f32, octaves: u32) -> f32 {
    let mut sum = 0.0;
    let mut amp = 1.0;
    let mut cell = base_cell;
    let mut total = 0.0;
    for o in 0..octaves {
        sum += amp * value_noise(seed.wrapping_add(o as u64 * 0x9e37), x, y, cell);
        total += amp;
        amp *= 0.5;
        cell *= 0.5;
    }
    sum / total
}

#[inline]
pub(crate) fn lerp3(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn l1_distance(a: [f32; 3], b: [f32; 3]) -> f32 {
    (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()
}

/// Muted background color: a varying pure gray level. Gray carries zero
/// chroma, so foregrounds keep their exact hue against any background, and
/// the level range stays clear of the white and black foreground lumas.
fn muted(rng: &mut Rng) -> [f32; 3] {
    let level = rng.range(0.28, 0.62) as f32;
    [level; 3]
}

/// Ensure a background color keeps visible contrast with the foreground.
fn contrast_guard(bg: [f32; 3], fg: Option<[f32; 3]>) -> [f32; 3] {
    match fg {
        Some(f) if l1_distance(bg, f) < 0.45 => {
            // Push away from the foreground color by darkening or lightening.
            let luma = 0.299 * f[0] + 0.587 * f[1] + 0.114 * f[2];
            let target = if luma > 0.5 { 0.15 } else { 0.8 };
            lerp3(bg, [target, target, target], 0.7)
        }
        _ => bg,
    }
}

/// Draw a synthetic background, guarding contrast against a primitive
/// foreground color. Plain style always yields a single uniform color;
/// textured style mixes the full procedural family.
pub(crate) fn sample_synthetic_background(
    rng: &mut Rng,
    fg: &ForegroundSpec,
    style: super::BackgroundStyle,
) -> BackgroundSpec {
    let fg_color = match fg {
        ForegroundSpec::Primitive { shape, color } => Some(primitive_color(*shape, *color)),
        ForegroundSpec::Cutout { .. } => None,
    };
    let guard = |c: [f32; 3]| contrast_guard(c, fg_color);
    if style == super::BackgroundStyle::Plain {
        return BackgroundSpec::Solid { color: guard(muted(rng)) };
    }
    match rng.below(8) {
        0 => BackgroundSpec::Solid { color: guard(muted(rng)) },
        1 => BackgroundSpec::Gradient {
            from: guard(muted(rng)),
            to: guard(muted(rng)),
            angle: rng.range(0.0, std::f64::consts::TAU),
        },
        2 => BackgroundSpec::Stripes {
            a: guard(muted(rng)),
            b: guard(muted(rng)),
            angle: rng.range(0.0, std::f64::consts::PI),
            width: rng.range(6.0, 14.0),
        },
        3 => BackgroundSpec::Checker {
            a: guard(muted(rng)),
            b: guard(muted(rng)),
            cell: rng.range(8.0, 18.0),
        },
        4 => BackgroundSpec::GaussianNoise {
            base: guard(muted(rng)),
            sigma: rng.range(0.03, 0.09) as f32,
            seed: rng.next_u64(),
        },
        5 => BackgroundSpec::Blobs { base: guard(muted(rng)), seed: rng.next_u64() },
        6 => BackgroundSpec::Speckle {
            base: guard(muted(rng)),
            density: rng.range(0.02, 0.06) as f32,
            seed: rng.next_u64(),
        },
        _ => BackgroundSpec::Vignette {
            base: guard(muted(rng)),
            strength: rng.range(0.3, 0.6) as f32,
        },
    }
}

/// Fixed per-class parameters of a procedurally textured cutout blob.
pub(crate) struct CutoutClassParams {
    /// Boundary radius harmonics: amplitude and phase for harmonics 2..=4.
    pub harmonics: [(f32, f32); 3],
    /// Two-color texture ramp.
    pub color_a: [f32; 3],
    pub color_b: [f32; 3],
    /// Texture noise cell size (pixels) and seed.
    pub noise_cell: f32,
    pub noise_seed: u64,
    /// 0 = noise ramp, 1 = rings, 2 = stripes.
    pub pattern: u8,
}

/// Derive the fixed appearance of a cutout class. Classes are stable across
/// the process lifetime and runs (pure function of the class index).
pub(crate) fn cutout_class_params(class: usize) -> CutoutClassParams {
    let mut rng = Rng::from_seed(0xC1A5_5000 + class as u64);
    let mut harmonics = [(0.0f32, 0.0f32); 3];
    for h in &mut harmonics {
        *h = (
            rng.range(0.04, 0.16) as f32,
            rng.range(0.0, std::f64::consts::TAU) as f32,
        );
    }
    // Saturated, well-spread color pair.
    let a = palette_color(class % PALETTE_LEN);
    let shift = 1 + (class / PALETTE_LEN) % (PALETTE_LEN - 1);
    let b = palette_color((class + shift) % PALETTE_LEN);
    CutoutClassParams {
        harmonics,
        color_a: lerp3(a, [0.2, 0.2, 0.2], rng.range(0.0, 0.3) as f32),
        color_b: lerp3(b, [0.9, 0.9, 0.9], rng.range(0.0, 0.3) as f32),
        noise_cell: rng.range(2.5, 6.0) as f32,
        noise_seed: rng.next_u64(),
        pattern: (class % 3) as u8,
    }
}
