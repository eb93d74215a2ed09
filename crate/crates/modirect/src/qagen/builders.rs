//! Dataset builders.
//!
//! Two dataset families share one machinery:
//!
//! * the **balanced benchmark** — per domain, linear axis movers with exactly
//!   equal per-direction counts, plain uniform backgrounds, four-way direction
//!   MCQs with the canonical question wording, held-out-split trajectories;
//! * the **instruction mixture** — a large training set mixing all twelve QA
//!   types over all motion patterns and textured backgrounds, with configured
//!   per-type and per-motion counts and a direction marginal kept uniform
//!   across the eight compass headings.
//!
//! Builders are pure functions of (config, rng): identical inputs rebuild
//! identical manifests bit for bit. Only center tracks are sampled here — no
//! pixels are rendered — so building even large manifests is cheap.

use super::{
    make_qa_record, make_qa_record_with_template, split_of_key, trajectory_key, DatasetManifest,
    QAGenError, QARecord, QAType, Split,
};
use crate::rng::Rng;
use crate::scenegen::{
    sample_clip_spec, sample_track_for_spec, BackgroundStyle, CenterTrack, ClipSpec, Direction8,
    Domain, MotionType, DEFAULT_FRAMES, DEFAULT_FRAME_SIZE,
};
use std::collections::{BTreeMap, HashSet};

/// Benchmark size: clips per direction per domain at full scale.
pub const SYNBENCH_PER_DIRECTION: usize = 1_500;

/// Per-100,000 QA-type mixture of the full-scale instruction dataset.
pub const INST_QA_MIX: [(QAType, u32); 12] = [
    (QAType::DirMCQ9, 17_973),
    (QAType::DirMCQ5, 17_903),
    (QAType::DirOpen, 13_953),
    (QAType::Description, 9_885),
    (QAType::Appearance, 10_393),
    (QAType::LocMCQ, 6_461),
    (QAType::LocOpen, 6_386),
    (QAType::MoveMCQ, 5_128),
    (QAType::MoveOpen, 5_168),
    (QAType::TrajMCQ, 4_039),
    (QAType::RotMCQ, 1_294),
    (QAType::RotOpen, 1_417),
];

/// Per-100,000 motion mixture of the full-scale instruction dataset.
pub const INST_MOTION_MIX: [(MotionType, u32); 5] = [
    (MotionType::PerturbedLinear, 29_942),
    (MotionType::Zigzag, 20_126),
    (MotionType::Circular, 19_830),
    (MotionType::Roundtrip, 14_972),
    (MotionType::Static, 15_130),
];

const MIX_BASE: f64 = 100_000.0;

/// Scale the reference QA mixture to a target total, rounding each type
/// independently (so the emitted total can drift by a few records from the
/// request; the per-type counts are exact).
pub fn scaled_qa_counts(total: usize) -> Vec<(QAType, usize)> {
    INST_QA_MIX
        .iter()
        .map(|&(t, per)| (t, (total as f64 * per as f64 / MIX_BASE).round() as usize))
        .collect()
}

/// Partition exactly `total` records over the reference motion mixture
/// (largest-remainder apportionment, deterministic tie order).
pub fn scaled_motion_counts(total: usize) -> Vec<(MotionType, usize)> {
    let weights: Vec<u64> = INST_MOTION_MIX.iter().map(|&(_, w)| w as u64).collect();
    let counts = largest_remainder(total, &weights);
    INST_MOTION_MIX.iter().zip(counts).map(|(&(m, _), c)| (m, c)).collect()
}

/// Apportion `total` into integer counts proportional to `weights`:
/// floor shares first, then one extra to the largest fractional remainders
/// (ties resolve to the lower index).
fn largest_remainder(total: usize, weights: &[u64]) -> Vec<usize> {
    let wsum: u128 = weights.iter().map(|&w| w as u128).sum();
    if wsum == 0 {
        return vec![0; weights.len()];
    }
    let mut counts = Vec::with_capacity(weights.len());
    let mut remainders: Vec<(u128, usize)> = Vec::with_capacity(weights.len());
    let mut assigned = 0usize;
    for (i, &w) in weights.iter().enumerate() {
        let num = total as u128 * w as u128;
        counts.push((num / wsum) as usize);
        remainders.push((num % wsum, i));
        assigned += (num / wsum) as usize;
    }
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Configuration of one balanced-benchmark domain build.
#[derive(Clone, Debug)]
pub struct SynBenchConfig {
    pub domain: Domain,
    pub per_direction: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
}

impl SynBenchConfig {
    pub fn new(domain: Domain) -> SynBenchConfig {
        SynBenchConfig {
            domain,
            per_direction: SYNBENCH_PER_DIRECTION,
            frames: DEFAULT_FRAMES,
            width: DEFAULT_FRAME_SIZE,
            height: DEFAULT_FRAME_SIZE,
        }
    }

    pub fn scaled(domain: Domain, per_direction: usize) -> SynBenchConfig {
        SynBenchConfig { per_direction, ..SynBenchConfig::new(domain) }
    }
}

/// Configuration of one instruction-mixture build.
#[derive(Clone, Debug)]
pub struct InstConfig {
    pub domain: Domain,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Exact per-type record counts to emit.
    pub qa_counts: Vec<(QAType, usize)>,
    /// Exact per-motion counts; must sum to the same total as `qa_counts`.
    pub motion_counts: Vec<(MotionType, usize)>,
}

impl InstConfig {
    /// The reference mixture scaled to roughly `total` records.
    pub fn reference_mix(domain: Domain, total: usize) -> InstConfig {
        let qa_counts = scaled_qa_counts(total);
        let n: usize = qa_counts.iter().map(|&(_, c)| c).sum();
        InstConfig {
            domain,
            frames: DEFAULT_FRAMES,
            width: DEFAULT_FRAME_SIZE,
            height: DEFAULT_FRAME_SIZE,
            qa_counts,
            motion_counts: scaled_motion_counts(n),
        }
    }
}

/// Build one balanced-benchmark domain: `4 × per_direction` linear clips over
/// plain backgrounds, every record a four-way direction MCQ with the
/// canonical question wording, all trajectories on the held-out side of the
/// split partition.
pub fn build_synbench(
    cfg: &SynBenchConfig,
    rng: &mut Rng,
) -> Result<DatasetManifest, QAGenError> {
    let mut dirs: Vec<Direction8> = Direction8::AXES
        .iter()
        .flat_map(|&d| std::iter::repeat_n(d, cfg.per_direction))
        .collect();
    rng.shuffle(&mut dirs);
    let mut used = HashSet::new();
    let mut records = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let (spec, track) = sample_split_clip(
            cfg.domain,
            BackgroundStyle::Plain,
            MotionType::Linear,
            Some(dir),
            Split::HeldOutEval,
            (cfg.frames, cfg.width, cfg.height),
            rng,
            &mut used,
        )?;
        records.push(make_qa_record_with_template(&spec, &track, QAType::DirMCQ4, 0, rng)?);
    }
    Ok(DatasetManifest { split: Split::HeldOutEval, records })
}

/// Build an instruction-mixture dataset on the train side of the split
/// partition. Emitted counts match the config exactly; the direction marginal
/// over moving clips is uniform across the eight compass headings to within
/// one record per direction.
pub fn build_inst_dataset(
    cfg: &InstConfig,
    rng: &mut Rng,
) -> Result<DatasetManifest, QAGenError> {
    let mut slots = plan_slots(cfg)?;
    rng.shuffle(&mut slots);
    let mut used = HashSet::new();
    let mut records = Vec::with_capacity(slots.len());
    for slot in &slots {
        let (spec, track) = sample_split_clip(
            cfg.domain,
            BackgroundStyle::Textured,
            slot.motion,
            slot.direction,
            Split::Train,
            (cfg.frames, cfg.width, cfg.height),
            rng,
            &mut used,
        )?;
        records.push(make_qa_record(&spec, &track, slot.qa, rng)?);
    }
    Ok(DatasetManifest { split: Split::Train, records })
}

/// One planned record: its QA type, motion pattern, and (for moving clips)
/// requested heading.
#[derive(Clone, Copy, Debug)]
struct Slot {
    qa: QAType,
    motion: MotionType,
    direction: Option<Direction8>,
}

const MOVING: [MotionType; 5] = [
    MotionType::Linear,
    MotionType::PerturbedLinear,
    MotionType::Zigzag,
    MotionType::Circular,
    MotionType::Roundtrip,
];

/// Turn the configured count tables into a concrete slot list, or explain why
/// no assignment exists.
///
/// Assignment order:
/// 1. stationary clips — about half of each move-or-not type, the remainder
///    apportioned over the other types whose gold stays honest on a static
///    clip;
/// 2. rotation questions — circular clips only;
/// 3. trajectory-pattern questions — round-robin across the moving patterns
///    so the four gold words stay balanced;
/// 4. every other moving slot — greedily from whichever motion budget is
///    largest, so budgets drain evenly;
/// 5. headings — eight near-equal direction targets; axis-answer types draw
///    from the four axes, everything else round-robins over what remains.
fn plan_slots(cfg: &InstConfig) -> Result<Vec<Slot>, QAGenError> {
    let infeasible = |m: String| Err(QAGenError::InfeasibleMix(m));

    let mut qa: BTreeMap<QAType, usize> = BTreeMap::new();
    for &(t, c) in &cfg.qa_counts {
        if qa.insert(t, c).is_some() {
            return infeasible(format!("duplicate QA-type count for {}", t.name()));
        }
    }
    let mut motion: BTreeMap<MotionType, usize> = BTreeMap::new();
    for &(m, c) in &cfg.motion_counts {
        if motion.insert(m, c).is_some() {
            return infeasible(format!("duplicate motion count for {}", m.name()));
        }
    }
    let n_total: usize = qa.values().sum();
    let m_total: usize = motion.values().sum();
    if n_total != m_total {
        return infeasible(format!(
            "QA counts sum to {n_total} but motion counts sum to {m_total}"
        ));
    }
    if cfg.domain.cutout_foreground() && qa.get(&QAType::Appearance).copied().unwrap_or(0) > 0 {
        return infeasible(format!(
            "appearance questions need primitive foregrounds, domain is {}",
            cfg.domain.name()
        ));
    }

    // 1. Stationary clips.
    let mut static_left = motion.get(&MotionType::Static).copied().unwrap_or(0);
    let mut static_of: BTreeMap<QAType, usize> = BTreeMap::new();
    for t in [QAType::MoveMCQ, QAType::MoveOpen] {
        let take = (qa.get(&t).copied().unwrap_or(0) / 2).min(static_left);
        static_of.insert(t, take);
        static_left -= take;
    }
    let spread: Vec<QAType> = QAType::ALL
        .into_iter()
        .filter(|t| {
            t.accepts_static()
                && !matches!(t, QAType::MoveMCQ | QAType::MoveOpen)
                && qa.contains_key(t)
        })
        .collect();
    if static_left > 0 && !spread.is_empty() {
        let weights: Vec<u64> = spread.iter().map(|t| qa[t] as u64).collect();
        let cap_sum: usize = spread.iter().map(|t| qa[t]).sum();
        let shares = largest_remainder(static_left.min(cap_sum), &weights);
        for (t, share) in spread.iter().zip(shares) {
            let take = share.min(qa[t]);
            *static_of.entry(*t).or_default() += take;
            static_left -= take;
        }
    }
    if static_left > 0 {
        // Top up anywhere with room, in fixed type order.
        for t in QAType::ALL {
            if !t.accepts_static() || !qa.contains_key(&t) {
                continue;
            }
            let have = static_of.get(&t).copied().unwrap_or(0);
            let take = (qa[&t] - have).min(static_left);
            *static_of.entry(t).or_default() += take;
            static_left -= take;
        }
    }
    if static_left > 0 {
        return infeasible(format!(
            "{static_left} stationary clips left over after filling every \
             question type that accepts them"
        ));
    }

    // 2. Rotation questions consume the circular budget first.
    let mut budget: BTreeMap<MotionType, usize> =
        MOVING.iter().map(|&m| (m, motion.get(&m).copied().unwrap_or(0))).collect();
    let rot_need: usize = [QAType::RotMCQ, QAType::RotOpen]
        .iter()
        .map(|t| qa.get(t).copied().unwrap_or(0))
        .sum();
    if rot_need > budget[&MotionType::Circular] {
        return infeasible(format!(
            "{rot_need} rotation questions need circular clips but only {} are budgeted",
            budget[&MotionType::Circular]
        ));
    }
    *budget.get_mut(&MotionType::Circular).unwrap() -= rot_need;

    // 3. + 4. Motion assignment per type.
    let mut motion_of: BTreeMap<QAType, Vec<MotionType>> = BTreeMap::new();
    for (&t, &count) in &qa {
        let moving_slots = count
            - static_of.get(&t).copied().unwrap_or(0)
            - if t.requires_circular() { count } else { 0 };
        let assigned = motion_of.entry(t).or_default();
        if t.requires_circular() {
            assigned.extend(std::iter::repeat_n(MotionType::Circular, count));
            continue;
        }
        if t == QAType::TrajMCQ {
            // Round-robin across patterns for balanced gold words.
            let mut k = 0;
            for _ in 0..moving_slots {
                let mut placed = false;
                for step in 0..MOVING.len() {
                    let m = MOVING[(k + step) % MOVING.len()];
                    if budget[&m] > 0 {
                        *budget.get_mut(&m).unwrap() -= 1;
                        assigned.push(m);
                        k = (k + step + 1) % MOVING.len();
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return infeasible("moving-clip budget exhausted".into());
                }
            }
            continue;
        }
        for _ in 0..moving_slots {
            let m = *MOVING
                .iter()
                .max_by_key(|m| budget[m])
                .expect("non-empty motion list");
            if budget[&m] == 0 {
                return infeasible("moving-clip budget exhausted".into());
            }
            *budget.get_mut(&m).unwrap() -= 1;
            assigned.push(m);
        }
    }
    debug_assert!(budget.values().all(|&b| b == 0));

    // 5. Headings for every moving slot.
    let d_total: usize = motion_of.values().map(|v| v.len()).sum();
    let mut dir_left: BTreeMap<Direction8, usize> = Direction8::ALL
        .iter()
        .zip(largest_remainder(d_total, &[1; 8]))
        .map(|(&d, c)| (d, c))
        .collect();
    let axis_types: Vec<QAType> =
        qa.keys().copied().filter(|t| t.axis_directions_only()).collect();

    let mut slots = Vec::with_capacity(n_total);
    let deal = |order: &[Direction8],
                    cursor: &mut usize,
                    dir_left: &mut BTreeMap<Direction8, usize>|
     -> Option<Direction8> {
        for step in 0..order.len() {
            let d = order[(*cursor + step) % order.len()];
            if dir_left[&d] > 0 {
                *dir_left.get_mut(&d).unwrap() -= 1;
                *cursor = (*cursor + step + 1) % order.len();
                return Some(d);
            }
        }
        None
    };

    // Axis-answer types first so the shared axis budget cannot starve.
    let mut axis_cursor = 0;
    for &t in &axis_types {
        for &m in &motion_of[&t] {
            let Some(d) = deal(&Direction8::AXES, &mut axis_cursor, &mut dir_left) else {
                return infeasible(format!(
                    "axis-answer questions ({}) exceed the per-axis direction budget",
                    t.name()
                ));
            };
            slots.push(Slot { qa: t, motion: m, direction: Some(d) });
        }
    }
    let mut all_cursor = 0;
    for (&t, motions) in &motion_of {
        if t.axis_directions_only() {
            continue;
        }
        for &m in motions {
            let d = deal(&Direction8::ALL, &mut all_cursor, &mut dir_left)
                .expect("direction targets cover every moving slot");
            slots.push(Slot { qa: t, motion: m, direction: Some(d) });
        }
    }
    for (&t, &count) in &static_of {
        slots.extend(std::iter::repeat_n(
            Slot { qa: t, motion: MotionType::Static, direction: None },
            count,
        ));
    }
    debug_assert_eq!(slots.len(), n_total);
    Ok(slots)
}

/// Attempts per slot before declaring the build stuck.
const SLOT_ATTEMPTS: usize = 10_000;

/// Sample a clip spec + track whose trajectory key lands on `want`, with a
/// dataset-unique seed.
#[allow(clippy::too_many_arguments)]
fn sample_split_clip(
    domain: Domain,
    style: BackgroundStyle,
    motion: MotionType,
    direction: Option<Direction8>,
    want: Split,
    (frames, width, height): (usize, usize, usize),
    rng: &mut Rng,
    used: &mut HashSet<u64>,
) -> Result<(ClipSpec, CenterTrack), QAGenError> {
    for _ in 0..SLOT_ATTEMPTS {
        let seed = rng.next_u64();
        if used.contains(&seed) {
            continue;
        }
        let spec =
            sample_clip_spec(domain, style, motion, direction, seed, frames, width, height, rng);
        let track = sample_track_for_spec(&spec)?;
        if split_of_key(trajectory_key(&track)) != want {
            continue;
        }
        used.insert(seed);
        return Ok((spec, track));
    }
    Err(QAGenError::InfeasibleMix(format!(
        "no {want:?}-side {} trajectory found in {SLOT_ATTEMPTS} attempts",
        motion.name()
    )))
}

/// Re-derive a record's trajectory key from its embedded clip recipe.
pub fn record_trajectory_key(rec: &QARecord) -> Result<super::TrajectoryKey, QAGenError> {
    let spec = rec.clip.as_ref().ok_or_else(|| QAGenError::Schema {
        record: 0,
        message: format!("record {} has no embedded clip recipe", rec.clip_id),
    })?;
    Ok(trajectory_key(&sample_track_for_spec(spec)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::DirectionLabel;

    #[test]
    fn reference_mix_scales_by_rounding_each_type() {
        let counts = scaled_qa_counts(1_000);
        let get = |t: QAType| counts.iter().find(|&&(x, _)| x == t).unwrap().1;
        assert_eq!(get(QAType::DirMCQ9), 180);
        assert_eq!(get(QAType::DirMCQ5), 179);
        assert_eq!(get(QAType::RotMCQ), 13);
        // Full scale reproduces the reference table exactly.
        let full = scaled_qa_counts(100_000);
        for (&(t, per), &(t2, c)) in INST_QA_MIX.iter().zip(&full) {
            assert_eq!(t, t2);
            assert_eq!(c, per as usize);
        }
        let motion_full = scaled_motion_counts(100_000);
        for (&(m, per), &(m2, c)) in INST_MOTION_MIX.iter().zip(&motion_full) {
            assert_eq!(m, m2);
            assert_eq!(c, per as usize);
        }
    }

    #[test]
    fn largest_remainder_is_exact_and_deterministic() {
        let counts = largest_remainder(10, &[1, 1, 1]);
        assert_eq!(counts.iter().sum::<usize>(), 10);
        assert_eq!(counts, vec![4, 3, 3]);
        assert_eq!(largest_remainder(0, &[5, 2]), vec![0, 0]);
        assert_eq!(largest_remainder(7, &[0, 0]), vec![0, 0]);
    }

    #[test]
    fn zero_count_config_builds_an_empty_manifest() {
        let cfg = InstConfig::reference_mix(Domain::PSyn, 0);
        let mut rng = Rng::from_seed(1);
        let m = build_inst_dataset(&cfg, &mut rng).unwrap();
        assert!(m.records.is_empty());
        assert_eq!(m.split, Split::Train);
    }

    #[test]
    fn inst_counts_match_config_exactly() {
        let cfg = InstConfig::reference_mix(Domain::PSyn, 1_000);
        let mut rng = Rng::from_seed(7);
        let m = build_inst_dataset(&cfg, &mut rng).unwrap();
        let stats = m.stats();
        for &(t, want) in &cfg.qa_counts {
            assert_eq!(
                stats.by_qa_type.get(&t).copied().unwrap_or(0),
                want,
                "{} count",
                t.name()
            );
        }
        for &(mo, want) in &cfg.motion_counts {
            assert_eq!(
                stats.by_motion.get(&mo).copied().unwrap_or(0),
                want,
                "{} count",
                mo.name()
            );
        }
        assert_eq!(stats.total, cfg.qa_counts.iter().map(|&(_, c)| c).sum::<usize>());
        for (i, r) in m.records.iter().enumerate() {
            super::super::validate_record(r, i).unwrap();
        }
    }

    #[test]
    fn inst_direction_marginal_is_uniform() {
        let cfg = InstConfig::reference_mix(Domain::PSyn, 1_000);
        let mut rng = Rng::from_seed(11);
        let m = build_inst_dataset(&cfg, &mut rng).unwrap();
        let stats = m.stats();
        let directional: usize = DirectionLabel::EIGHT
            .iter()
            .map(|d| stats.by_direction.get(d).copied().unwrap_or(0))
            .sum();
        let target = directional as f64 / 8.0;
        for d in DirectionLabel::EIGHT {
            let c = stats.by_direction.get(&d).copied().unwrap_or(0) as f64;
            assert!(
                (c - target).abs() / directional as f64 <= 0.01,
                "{}: {c} of {directional}",
                d.word()
            );
        }
        // Motion-direction coherence: stationary label exactly for static clips.
        for r in &m.records {
            assert_eq!(
                r.direction == DirectionLabel::Stationary,
                r.motion_type == MotionType::Static,
                "{} {:?}",
                r.clip_id,
                r.motion_type
            );
        }
    }

    #[test]
    fn inst_restricts_golds_to_each_types_answer_set() {
        let cfg = InstConfig::reference_mix(Domain::PSyn, 600);
        let mut rng = Rng::from_seed(13);
        let m = build_inst_dataset(&cfg, &mut rng).unwrap();
        for r in &m.records {
            if r.qa_type.is_mcq() {
                assert!(
                    r.qa_type.option_words().contains(&r.gold_text.as_str()),
                    "{:?} gold {}",
                    r.qa_type,
                    r.gold_text
                );
            }
            if r.qa_type == QAType::RotMCQ || r.qa_type == QAType::RotOpen {
                assert_eq!(r.motion_type, MotionType::Circular);
            }
            if r.qa_type.axis_directions_only() && r.direction != DirectionLabel::Stationary {
                assert!(
                    DirectionLabel::FOUR.contains(&r.direction),
                    "axis-answer type got {:?}",
                    r.direction
                );
            }
        }
    }

    #[test]
    fn infeasible_mixes_are_named() {
        // Motion and QA totals disagree.
        let mut cfg = InstConfig::reference_mix(Domain::PSyn, 500);
        cfg.motion_counts = vec![(MotionType::Static, 3)];
        assert!(matches!(
            build_inst_dataset(&cfg, &mut Rng::from_seed(1)),
            Err(QAGenError::InfeasibleMix(_))
        ));
        // All static but only non-static question types.
        let cfg = InstConfig {
            domain: Domain::PSyn,
            frames: 8,
            width: 64,
            height: 64,
            qa_counts: vec![(QAType::TrajMCQ, 5)],
            motion_counts: vec![(MotionType::Static, 5)],
        };
        assert!(matches!(
            build_inst_dataset(&cfg, &mut Rng::from_seed(1)),
            Err(QAGenError::InfeasibleMix(_))
        ));
        // More rotation questions than circular clips.
        let cfg = InstConfig {
            domain: Domain::PSyn,
            frames: 8,
            width: 64,
            height: 64,
            qa_counts: vec![(QAType::RotMCQ, 5)],
            motion_counts: vec![(MotionType::Zigzag, 5)],
        };
        match build_inst_dataset(&cfg, &mut Rng::from_seed(1)) {
            Err(QAGenError::InfeasibleMix(msg)) => assert!(msg.contains("rotation")),
            other => panic!("expected infeasible mix, got {other:?}"),
        }
    }

    #[test]
    fn synbench_is_balanced_and_canonical() {
        let cfg = SynBenchConfig::scaled(Domain::PSyn, 12);
        let mut rng = Rng::from_seed(3);
        let m = build_synbench(&cfg, &mut rng).unwrap();
        assert_eq!(m.split, Split::HeldOutEval);
        assert_eq!(m.records.len(), 48);
        let stats = m.stats();
        for d in DirectionLabel::FOUR {
            assert_eq!(stats.by_direction.get(&d).copied().unwrap_or(0), 12, "{}", d.word());
        }
        for r in &m.records {
            assert_eq!(r.qa_type, QAType::DirMCQ4);
            assert_eq!(r.motion_type, MotionType::Linear);
            assert_eq!(
                r.question,
                "From the viewer's perspective, in which direction is the object moving in this video?"
            );
            assert_eq!(r.options.len(), 4);
        }
    }

    #[test]
    fn synbench_rebuilds_identically() {
        let cfg = SynBenchConfig::scaled(Domain::CSyn, 6);
        let a = build_synbench(&cfg, &mut Rng::from_seed(99)).unwrap();
        let b = build_synbench(&cfg, &mut Rng::from_seed(99)).unwrap();
        assert_eq!(a, b);
        let c = build_synbench(&cfg, &mut Rng::from_seed(100)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn train_and_heldout_trajectories_never_share_keys() {
        let inst = build_inst_dataset(
            &InstConfig::reference_mix(Domain::PSyn, 400),
            &mut Rng::from_seed(5),
        )
        .unwrap();
        let bench =
            build_synbench(&SynBenchConfig::scaled(Domain::PSyn, 30), &mut Rng::from_seed(6))
                .unwrap();
        let train_keys: HashSet<_> =
            inst.records.iter().map(|r| record_trajectory_key(r).unwrap()).collect();
        let eval_keys: HashSet<_> =
            bench.records.iter().map(|r| record_trajectory_key(r).unwrap()).collect();
        assert!(!train_keys.is_empty() && !eval_keys.is_empty());
        assert!(
            train_keys.is_disjoint(&eval_keys),
            "shared start-end keys: {:?}",
            train_keys.intersection(&eval_keys).take(3).collect::<Vec<_>>()
        );
        for k in &train_keys {
            assert_eq!(split_of_key(*k), Split::Train);
        }
        for k in &eval_keys {
            assert_eq!(split_of_key(*k), Split::HeldOutEval);
        }
    }
}
