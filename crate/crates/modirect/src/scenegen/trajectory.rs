//! Trajectory sampling.
//!
//! Every sampler produces a per-frame center track that (a) keeps the object
//! fully inside the frame with a margin, (b) for moving tracks, has net
//! displacement of at least the configured minimum so the direction label is
//! unambiguous, and (c) when a direction was requested, classifies to exactly
//! that label. Constraint satisfaction is by bounded rejection sampling; an
//! exhausted budget reports the constraint set as infeasible rather than
//! silently relaxing it.

use super::{direction_label, Direction8, DirectionLabel, DirectionMode, MotionType, SceneGenError};
use crate::geom::Vec2;
use crate::rng::Rng;

/// Geometric constraints a sampled track must satisfy.
#[derive(Clone, Copy, Debug)]
pub struct TrackConstraints {
    pub width: f64,
    pub height: f64,
    /// Minimum distance from any center to every frame edge.
    pub margin: f64,
    /// Minimum net displacement of a moving track, in pixels.
    pub min_displacement: f64,
    /// Maximum sampled net displacement, in pixels.
    pub max_displacement: f64,
    /// Net displacement under this is labeled stationary.
    pub tau_static: f64,
    /// Rejection attempts before giving up.
    pub max_rejects: usize,
}

/// Standard deviation of the orthogonal jitter, in pixels.
pub const JITTER_SIGMA: f64 = 1.0;
/// Fraction of the outbound distance a roundtrip gives back on the return
/// leg. Kept under 1/2 so the net displacement still clears the minimum.
const ROUNDTRIP_RETURN: (f64, f64) = (0.30, 0.42);
/// Zigzag orthogonal amplitude range, in pixels.
const ZIGZAG_AMPLITUDE: (f64, f64) = (3.0, 7.0);
/// Circular arc angular span range, in degrees.
const ARC_SPAN_DEG: (f64, f64) = (100.0, 300.0);

impl TrackConstraints {
    fn valid_rect(&self) -> (Vec2, Vec2) {
        (
            Vec2::new(self.margin, self.margin),
            Vec2::new(self.width - self.margin, self.height - self.margin),
        )
    }

    fn contains(&self, p: Vec2) -> bool {
        let (lo, hi) = self.valid_rect();
        p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y
    }

    fn sample_point(&self, rng: &mut Rng) -> Vec2 {
        let (lo, hi) = self.valid_rect();
        Vec2::new(rng.range(lo.x, hi.x), rng.range(lo.y, hi.y))
    }
}

/// Sample a center track of `frames` positions for the given motion type.
///
/// `direction` constrains the net-displacement heading of moving tracks; when
/// `None`, a heading is drawn uniformly from the eight compass directions.
/// Static tracks ignore it. The result is a pure function of the rng stream
/// and arguments.
pub fn sample_trajectory(
    motion: MotionType,
    direction: Option<Direction8>,
    frames: usize,
    rng: &mut Rng,
    c: &TrackConstraints,
) -> Result<Vec<Vec2>, SceneGenError> {
    assert!(frames >= 2, "tracks need at least two frames");
    let infeasible = |attempts| SceneGenError::InfeasibleConstraints {
        motion,
        attempts,
        width: c.width,
        height: c.height,
        margin: c.margin,
    };
    if c.valid_rect().0.x >= c.valid_rect().1.x || c.valid_rect().0.y >= c.valid_rect().1.y {
        return Err(infeasible(0));
    }

    for _ in 0..c.max_rejects {
        let dir = direction.unwrap_or_else(|| *rng.choose(&Direction8::ALL));
        let candidate = match motion {
            MotionType::Static => propose_static(frames, rng, c),
            MotionType::Linear => propose_linear(dir, frames, rng, c),
            MotionType::PerturbedLinear => propose_perturbed(dir, frames, rng, c),
            MotionType::Zigzag => propose_zigzag(dir, frames, rng, c),
            MotionType::Circular => propose_circular(dir, frames, rng, c),
            MotionType::Roundtrip => propose_roundtrip(dir, frames, rng, c),
        };
        let Some(track) = candidate else { continue };
        if track_is_valid(&track, motion, direction, c) {
            return Ok(track);
        }
    }
    Err(infeasible(c.max_rejects))
}

/// Full validity check used by the sampler (and exposed to tests).
pub(crate) fn track_is_valid(
    track: &[Vec2],
    motion: MotionType,
    requested: Option<Direction8>,
    c: &TrackConstraints,
) -> bool {
    if !track.iter().all(|&p| c.contains(p)) {
        return false;
    }
    let net = (*track.last().unwrap() - track[0]).norm();
    match motion {
        MotionType::Static => net < c.tau_static,
        _ => {
            if net < c.min_displacement {
                return false;
            }
            match requested {
                Some(dir) => {
                    direction_label(track, DirectionMode::EightWay, c.tau_static) == dir.label()
                }
                None => {
                    direction_label(track, DirectionMode::EightWay, c.tau_static)
                        != DirectionLabel::Stationary
                }
            }
        }
    }
}

fn propose_static(frames: usize, rng: &mut Rng, c: &TrackConstraints) -> Option<Vec<Vec2>> {
    let p = c.sample_point(rng);
    Some(vec![p; frames])
}

/// Start point + displacement magnitude along the exact requested axis.
fn propose_linear(
    dir: Direction8,
    frames: usize,
    rng: &mut Rng,
    c: &TrackConstraints,
) -> Option<Vec<Vec2>> {
    let mag = rng.range(c.min_displacement, c.max_displacement);
    let u = dir.unit();
    let start = c.sample_point(rng);
    let end = start + u.scale(mag);
    if !c.contains(end) {
        return None;
    }
    Some(
        (0..frames)
            .map(|t| start + u.scale(mag * t as f64 / (frames - 1) as f64))
            .collect(),
    )
}

/// Linear base plus independent per-frame Gaussian jitter along the
/// orthogonal axis.
fn propose_perturbed(
    dir: Direction8,
    frames: usize,
    rng: &mut Rng,
    c: &TrackConstraints,
) -> Option<Vec<Vec2>> {
    let base = propose_linear(dir, frames, rng, c)?;
    let perp = dir.unit().perp();
    Some(
        base.into_iter()
            .map(|p| p + perp.scale(JITTER_SIGMA * rng.gauss()))
            .collect(),
    )
}

/// Constant main-axis velocity with a piecewise-linear orthogonal sweep that
/// returns to zero, in 2 or 3 segments.
fn propose_zigzag(
    dir: Direction8,
    frames: usize,
    rng: &mut Rng,
    c: &TrackConstraints,
) -> Option<Vec<Vec2>> {
    let base = propose_linear(dir, frames, rng, c)?;
    let segments = 2 + rng.below(2); // 2 or 3
    let amp = rng.range(ZIGZAG_AMPLITUDE.0, ZIGZAG_AMPLITUDE.1)
        * if rng.below(2) == 0 { 1.0 } else { -1.0 };
    // Orthogonal offsets at segment boundaries; interior boundaries alternate
    // +amp/-amp and the ends are pinned to zero so the net heading is exact.
    let mut knots = vec![0.0; segments + 1];
    for (i, k) in knots.iter_mut().enumerate().take(segments).skip(1) {
        *k = if i % 2 == 1 { amp } else { -amp };
    }
    let perp = dir.unit().perp();
    let last = (frames - 1) as f64;
    Some(
        base.into_iter()
            .enumerate()
            .map(|(t, p)| {
                let s = t as f64 / last * segments as f64;
                let seg = (s.floor() as usize).min(segments - 1);
                let frac = s - seg as f64;
                let off = knots[seg] * (1.0 - frac) + knots[seg + 1] * frac;
                p + perp.scale(off)
            })
            .collect(),
    )
}

/// Constant-angular-rate arc whose chord points along the requested heading.
fn propose_circular(
    dir: Direction8,
    frames: usize,
    rng: &mut Rng,
    c: &TrackConstraints,
) -> Option<Vec<Vec2>> {
    let chord = rng.range(c.min_displacement, c.max_displacement);
    let span = rng.range(ARC_SPAN_DEG.0, ARC_SPAN_DEG.1).to_radians();
    let clockwise = rng.below(2) == 0;
    let radius = chord / (2.0 * (span / 2.0).sin());
    // Chord heading in screen coordinates (atan2 over y-down vectors).
    let beta = {
        let u = dir.unit();
        u.y.atan2(u.x)
    };
    // Midpoint angle that aims the chord at `beta`; sign depends on the
    // rotation sense because the chord flips with the sweep direction.
    let half = std::f64::consts::FRAC_PI_2;
    let mid = if clockwise { beta - half } else { beta + half };
    let (phi0, dphi) = if clockwise {
        (mid - span / 2.0, span)
    } else {
        (mid + span / 2.0, -span)
    };
    let center = c.sample_point(rng);
    let last = (frames - 1) as f64;
    let track: Vec<Vec2> = (0..frames)
        .map(|t| {
            let phi = phi0 + dphi * t as f64 / last;
            center + Vec2::new(radius * phi.cos(), radius * phi.sin())
        })
        .collect();
    Some(track)
}

/// Out along the heading at constant speed, then part of the way back, so the
/// net displacement still clears the minimum and labels as the outbound
/// direction.
fn propose_roundtrip(
    dir: Direction8,
    frames: usize,
    rng: &mut Rng,
    c: &TrackConstraints,
) -> Option<Vec<Vec2>> {
    let ret = rng.range(ROUNDTRIP_RETURN.0, ROUNDTRIP_RETURN.1);
    let net = rng.range(c.min_displacement, c.max_displacement * (1.0 - ret));
    let out = net / (1.0 - ret);
    let u = dir.unit();
    let start = c.sample_point(rng);
    if !c.contains(start + u.scale(out)) {
        return None;
    }
    let total_path = out * (1.0 + ret);
    let last = (frames - 1) as f64;
    Some(
        (0..frames)
            .map(|t| {
                let s = total_path * t as f64 / last;
                let along = if s <= out { s } else { out - (s - out) };
                start + u.scale(along)
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{MAX_DISPLACEMENT, MAX_REJECTS, MIN_DISPLACEMENT, TAU_STATIC};

    fn constraints() -> TrackConstraints {
        TrackConstraints {
            width: 64.0,
            height: 64.0,
            margin: 8.0,
            min_displacement: MIN_DISPLACEMENT,
            max_displacement: MAX_DISPLACEMENT,
            tau_static: TAU_STATIC,
            max_rejects: MAX_REJECTS,
        }
    }

    #[test]
    fn linear_right_moves_only_in_x() {
        let mut rng = Rng::from_seed(11);
        let t = sample_trajectory(
            MotionType::Linear,
            Some(Direction8::Right),
            8,
            &mut rng,
            &constraints(),
        )
        .unwrap();
        for w in t.windows(2) {
            assert!(w[1].x > w[0].x);
            assert_eq!(w[1].y, w[0].y);
        }
        // Constant velocity: consecutive displacements equal.
        let d0 = t[1] - t[0];
        for w in t.windows(2) {
            let d = w[1] - w[0];
            assert!((d.x - d0.x).abs() < 1e-9 && (d.y - d0.y).abs() < 1e-9);
        }
    }

    #[test]
    fn every_motion_type_satisfies_its_contract() {
        let c = constraints();
        for (i, motion) in MotionType::ALL.iter().enumerate() {
            for (j, dir) in Direction8::ALL.iter().enumerate() {
                let mut rng = Rng::from_seed(100 + (i * 8 + j) as u64);
                let t =
                    sample_trajectory(*motion, Some(*dir), 8, &mut rng, &c).unwrap();
                assert_eq!(t.len(), 8);
                assert!(track_is_valid(&t, *motion, Some(*dir), &c), "{motion:?} {dir:?}");
            }
        }
    }

    #[test]
    fn static_track_is_a_single_point() {
        let mut rng = Rng::from_seed(3);
        let t =
            sample_trajectory(MotionType::Static, None, 8, &mut rng, &constraints()).unwrap();
        assert!(t.iter().all(|&p| p == t[0]));
    }

    #[test]
    fn roundtrip_turns_back_but_keeps_net_heading() {
        let mut rng = Rng::from_seed(17);
        let t = sample_trajectory(
            MotionType::Roundtrip,
            Some(Direction8::Down),
            8,
            &mut rng,
            &constraints(),
        )
        .unwrap();
        let max_y = t.iter().map(|p| p.y).fold(f64::MIN, f64::max);
        let last = t.last().unwrap();
        // The turn-back point lies beyond the final position.
        assert!(max_y > last.y + 1.0);
        let net = (*last - t[0]).norm();
        assert!(net >= MIN_DISPLACEMENT);
    }

    #[test]
    fn circular_track_has_constant_radius_and_rate() {
        let mut rng = Rng::from_seed(23);
        let t = sample_trajectory(
            MotionType::Circular,
            Some(Direction8::Left),
            8,
            &mut rng,
            &constraints(),
        )
        .unwrap();
        // Step lengths constant for a constant angular rate.
        let steps: Vec<f64> = t.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        for s in &steps {
            assert!((s - steps[0]).abs() < 1e-9, "{steps:?}");
        }
        // And the turning angle per step is constant and nonzero.
        let sense = crate::scenegen::rotation_sense(&t);
        assert!(sense.is_some());
    }

    #[test]
    fn impossible_margin_reports_infeasible() {
        let mut c = constraints();
        c.margin = 40.0; // valid rect is empty
        let mut rng = Rng::from_seed(5);
        let err = sample_trajectory(MotionType::Linear, Some(Direction8::Up), 8, &mut rng, &c)
            .unwrap_err();
        assert!(matches!(err, SceneGenError::InfeasibleConstraints { .. }));
    }

    #[test]
    fn displacement_larger_than_frame_reports_infeasible() {
        let mut c = constraints();
        c.min_displacement = 200.0;
        c.max_displacement = 210.0;
        let mut rng = Rng::from_seed(6);
        let err = sample_trajectory(MotionType::Linear, Some(Direction8::Up), 8, &mut rng, &c)
            .unwrap_err();
        assert!(matches!(
            err,
            SceneGenError::InfeasibleConstraints { attempts, .. } if attempts == MAX_REJECTS
        ));
    }
}
