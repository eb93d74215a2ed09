//! Question/answer generation over generated clips.
//!
//! Each QA record pairs one clip with one question of a fixed type, a
//! canonical single-word gold answer derived from the clip's ground truth,
//! and (for multiple-choice types) a seeded shuffle of a fixed option list,
//! so the correct answer letter is never a fixed alias of the underlying
//! concept. Records embed the full clip recipe, making manifests
//! self-contained: consumers can re-derive tracks and frames bit-for-bit
//! without shipping rendered video tensors.
//!
//! Train/eval hygiene is enforced structurally: every trajectory is keyed by
//! its start and end cells on a 4-pixel grid, and a seeded hash assigns each
//! key to exactly one split. Builders resample until a clip lands in their
//! split, so no start–end pair can ever appear on both sides, even across
//! independently built datasets.

mod builders;
mod manifest;

pub use builders::{
    build_inst_dataset, build_synbench, record_trajectory_key, scaled_motion_counts,
    scaled_qa_counts, InstConfig, SynBenchConfig, INST_MOTION_MIX, INST_QA_MIX,
    SYNBENCH_PER_DIRECTION,
};
pub use manifest::{load_dataset, serialize_dataset};

use crate::geom::Vec2;
use crate::rng::{mix_seed, Rng};
use crate::scenegen::{
    direction_label, palette_name, region_word, rotation_sense, ClipSpec, DirectionLabel,
    DirectionMode, Domain, ForegroundSpec, MotionType, TAU_STATIC,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum QAGenError {
    #[error("gold answer {gold:?} is not among the options")]
    GoldMissing { gold: String },
    #[error("bad option set: {0}")]
    BadOptions(String),
    #[error("{qa_type:?} does not apply to this clip: {reason}")]
    UnsupportedQAType { qa_type: QAType, reason: String },
    #[error("infeasible dataset mix: {0}")]
    InfeasibleMix(String),
    #[error(transparent)]
    Scene(#[from] crate::scenegen::SceneGenError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest record {record}: {message}")]
    Schema { record: usize, message: String },
}

/// The thirteen question formats: twelve instruction-mixture types plus the
/// four-way direction MCQ used by the balanced benchmark.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum QAType {
    #[serde(rename = "dir-mcq9")]
    DirMCQ9,
    #[serde(rename = "dir-mcq5")]
    DirMCQ5,
    #[serde(rename = "dir-mcq4")]
    DirMCQ4,
    #[serde(rename = "dir-open")]
    DirOpen,
    #[serde(rename = "description")]
    Description,
    #[serde(rename = "appearance")]
    Appearance,
    #[serde(rename = "loc-mcq")]
    LocMCQ,
    #[serde(rename = "loc-open")]
    LocOpen,
    #[serde(rename = "move-mcq")]
    MoveMCQ,
    #[serde(rename = "move-open")]
    MoveOpen,
    #[serde(rename = "traj-mcq")]
    TrajMCQ,
    #[serde(rename = "rot-mcq")]
    RotMCQ,
    #[serde(rename = "rot-open")]
    RotOpen,
}

impl QAType {
    pub const ALL: [QAType; 13] = [
        QAType::DirMCQ9,
        QAType::DirMCQ5,
        QAType::DirMCQ4,
        QAType::DirOpen,
        QAType::Description,
        QAType::Appearance,
        QAType::LocMCQ,
        QAType::LocOpen,
        QAType::MoveMCQ,
        QAType::MoveOpen,
        QAType::TrajMCQ,
        QAType::RotMCQ,
        QAType::RotOpen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QAType::DirMCQ9 => "dir-mcq9",
            QAType::DirMCQ5 => "dir-mcq5",
            QAType::DirMCQ4 => "dir-mcq4",
            QAType::DirOpen => "dir-open",
            QAType::Description => "description",
            QAType::Appearance => "appearance",
            QAType::LocMCQ => "loc-mcq",
            QAType::LocOpen => "loc-open",
            QAType::MoveMCQ => "move-mcq",
            QAType::MoveOpen => "move-open",
            QAType::TrajMCQ => "traj-mcq",
            QAType::RotMCQ => "rot-mcq",
            QAType::RotOpen => "rot-open",
        }
    }

    pub fn parse(s: &str) -> Option<QAType> {
        QAType::ALL.into_iter().find(|t| t.name() == s)
    }

    /// Fixed pre-shuffle option list. Empty for open-answer types.
    pub fn option_words(self) -> &'static [&'static str] {
        match self {
            QAType::DirMCQ9 => &[
                "left",
                "right",
                "up",
                "down",
                "top-left",
                "top-right",
                "bottom-left",
                "bottom-right",
                "stationary",
            ],
            QAType::DirMCQ5 => &["left", "right", "up", "down", "stationary"],
            QAType::DirMCQ4 => &["left", "right", "up", "down"],
            QAType::LocMCQ => &[
                "top-left",
                "top-center",
                "top-right",
                "middle-left",
                "center",
                "middle-right",
                "bottom-left",
                "bottom-center",
                "bottom-right",
            ],
            QAType::MoveMCQ => &["yes", "no"],
            QAType::TrajMCQ => &["straight", "zigzag", "circular", "roundtrip"],
            QAType::RotMCQ => &["clockwise", "counterclockwise"],
            _ => &[],
        }
    }

    pub fn is_mcq(self) -> bool {
        !self.option_words().is_empty()
    }

    /// Whether a stationary clip can carry this question with an honest gold.
    pub fn accepts_static(self) -> bool {
        !matches!(
            self,
            QAType::DirMCQ4 | QAType::TrajMCQ | QAType::RotMCQ | QAType::RotOpen
        )
    }

    /// Whether the gold answer only exists for circular tracks.
    pub fn requires_circular(self) -> bool {
        matches!(self, QAType::RotMCQ | QAType::RotOpen)
    }

    /// Whether the answer set only covers the four axis directions, so the
    /// clip's heading must be requested along an axis (or be stationary).
    pub fn axis_directions_only(self) -> bool {
        matches!(self, QAType::DirMCQ4 | QAType::DirMCQ5)
    }
}

/// Number of fixed question paraphrases per QA type.
pub const TEMPLATES_PER_TYPE: usize = 4;

/// Fixed question template bank. Index 0 of every direction bank is the
/// canonical direction wording used by the balanced benchmark. For location
/// questions, templates 0–1 ask about the first frame and 2–3 about the last;
/// for appearance questions, templates 0–1 ask the object's color and 2–3 its
/// shape — the template choice therefore participates in the gold answer.
pub fn question_templates(qa_type: QAType) -> [&'static str; TEMPLATES_PER_TYPE] {
    const DIR: [&str; TEMPLATES_PER_TYPE] = [
        "From the viewer's perspective, in which direction is the object moving in this video?",
        "In which direction does the object travel over the course of the video?",
        "Watching from the camera's point of view, which way does the object move?",
        "What is the direction of the object's motion in this clip?",
    ];
    match qa_type {
        QAType::DirMCQ9 | QAType::DirMCQ5 | QAType::DirMCQ4 | QAType::DirOpen => DIR,
        QAType::Description => [
            "How would you describe the object's motion in this video?",
            "Which word best describes how the object moves?",
            "Describe the motion pattern of the object in this clip.",
            "What kind of motion does the object exhibit?",
        ],
        QAType::Appearance => [
            "What color is the object in this video?",
            "Which color best matches the moving object?",
            "What shape is the object in this video?",
            "Which shape best matches the object in this clip?",
        ],
        QAType::LocMCQ | QAType::LocOpen => [
            "In which region of the frame is the object at the start of the video?",
            "Where in the frame does the object begin the video?",
            "In which region of the frame is the object at the end of the video?",
            "Where in the frame does the object end up by the last frame?",
        ],
        QAType::MoveMCQ | QAType::MoveOpen => [
            "Is the object moving in this video?",
            "Does the object change its position over the course of the video?",
            "Is there any motion of the object in this clip?",
            "Does the object move at any point in the video?",
        ],
        QAType::TrajMCQ => [
            "Which option best describes the object's trajectory in this video?",
            "What kind of path does the object follow in this clip?",
            "Which pattern best matches the object's movement?",
            "How does the object's path unfold over the video?",
        ],
        QAType::RotMCQ | QAType::RotOpen => [
            "Is the object rotating clockwise or counterclockwise on screen?",
            "In which rotational sense does the object travel along its arc?",
            "Which way does the object's path curve, clockwise or counterclockwise?",
            "From the viewer's perspective, does the object circle clockwise or counterclockwise?",
        ],
    }
}

/// One question/answer pair over one clip.
///
/// `options` and `permutation` are empty and `gold_index` is 0 for
/// open-answer types. `clip` embeds the full generation recipe so manifests
/// are self-contained; `video_path` is where a rendered tensor for this clip
/// lives (or would live) relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QARecord {
    pub clip_id: String,
    pub domain: Domain,
    pub motion_type: MotionType,
    /// Net-displacement label of the clip (eight compass words or stationary).
    pub direction: DirectionLabel,
    pub qa_type: QAType,
    pub question: String,
    pub options: Vec<String>,
    pub gold_index: usize,
    pub gold_text: String,
    /// `permutation[slot]` is the pre-shuffle index of the option now at
    /// `slot`; a bijection over the option slots.
    pub permutation: Vec<usize>,
    pub video_path: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<ClipSpec>,
}

impl QARecord {
    /// Option letter of the gold slot (A..).
    pub fn gold_letter(&self) -> char {
        (b'A' + self.gold_index as u8) as char
    }
}

/// Which side of the trajectory-hygiene partition a dataset lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "held-out-eval")]
    HeldOutEval,
}

/// A dataset: records tagged with the split they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub split: Split,
    pub records: Vec<QARecord>,
}

/// Count tables over a manifest's records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetStats {
    pub total: usize,
    pub by_qa_type: BTreeMap<QAType, usize>,
    pub by_motion: BTreeMap<MotionType, usize>,
    pub by_direction: BTreeMap<DirectionLabel, usize>,
    pub by_triple: BTreeMap<(QAType, DirectionLabel, MotionType), usize>,
}

impl DatasetManifest {
    pub fn stats(&self) -> DatasetStats {
        let mut s = DatasetStats { total: self.records.len(), ..Default::default() };
        for r in &self.records {
            *s.by_qa_type.entry(r.qa_type).or_default() += 1;
            *s.by_motion.entry(r.motion_type).or_default() += 1;
            *s.by_direction.entry(r.direction).or_default() += 1;
            *s.by_triple.entry((r.qa_type, r.direction, r.motion_type)).or_default() += 1;
        }
        s
    }
}

/// Side length of the grid cells used to key trajectories, in pixels.
pub const TRAJECTORY_CELL: f64 = 4.0;

/// Start/end cell signature of a track: (start x, start y, end x, end y) on
/// the [`TRAJECTORY_CELL`] grid.
pub type TrajectoryKey = (i64, i64, i64, i64);

pub fn trajectory_key(track: &[Vec2]) -> TrajectoryKey {
    let cell = |v: f64| (v / TRAJECTORY_CELL).floor() as i64;
    let s = track[0];
    let e = *track.last().expect("empty track");
    (cell(s.x), cell(s.y), cell(e.x), cell(e.y))
}

const SPLIT_SALT: u64 = 0x5911_7bA5_4e57_0c3d; // stable forever: changing it breaks hygiene

/// Deterministic split assignment of one trajectory key. One quarter of all
/// keys belong to the held-out side; builders resample until their clips land
/// on the right side, which makes any train manifest disjoint from any
/// held-out manifest by construction.
pub fn split_of_key(key: TrajectoryKey) -> Split {
    let h = mix_seed(&[SPLIT_SALT, key.0 as u64, key.1 as u64, key.2 as u64, key.3 as u64]);
    if h % 4 == 3 {
        Split::HeldOutEval
    } else {
        Split::Train
    }
}

/// Shuffle an option list, returning the shuffled options, the gold's new
/// slot, and the permutation (`shuffled[i] == options[permutation[i]]`).
pub fn shuffle_options(
    options: &[String],
    gold_text: &str,
    rng: &mut Rng,
) -> Result<(Vec<String>, usize, Vec<usize>), QAGenError> {
    if options.is_empty() {
        return Err(QAGenError::BadOptions("empty option list".into()));
    }
    let gold_count = options.iter().filter(|o| o.as_str() == gold_text).count();
    if gold_count == 0 {
        return Err(QAGenError::GoldMissing { gold: gold_text.to_string() });
    }
    if gold_count > 1 {
        return Err(QAGenError::BadOptions(format!(
            "gold {gold_text:?} appears {gold_count} times"
        )));
    }
    let mut permutation: Vec<usize> = (0..options.len()).collect();
    rng.shuffle(&mut permutation);
    let shuffled: Vec<String> = permutation.iter().map(|&i| options[i].clone()).collect();
    let gold_index = shuffled.iter().position(|o| o == gold_text).expect("gold survives shuffle");
    Ok((shuffled, gold_index, permutation))
}

/// Total distance traveled along a track, in pixels.
fn path_length(track: &[Vec2]) -> f64 {
    track.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Canonical single-word motion description of a clip.
fn description_word(motion: MotionType) -> &'static str {
    match motion {
        MotionType::Static => "stationary",
        m => m.pattern_word(),
    }
}

/// Build a QA record for a clip, drawing the question template seeded.
pub fn make_qa_record(
    spec: &ClipSpec,
    track: &[Vec2],
    qa_type: QAType,
    rng: &mut Rng,
) -> Result<QARecord, QAGenError> {
    let template = rng.below(TEMPLATES_PER_TYPE);
    make_qa_record_with_template(spec, track, qa_type, template, rng)
}

/// [`make_qa_record`] with an explicit template index; the balanced benchmark
/// pins template 0 (the canonical direction wording) for every record.
pub fn make_qa_record_with_template(
    spec: &ClipSpec,
    track: &[Vec2],
    qa_type: QAType,
    template: usize,
    rng: &mut Rng,
) -> Result<QARecord, QAGenError> {
    assert!(template < TEMPLATES_PER_TYPE, "template {template} out of range");
    assert!(!track.is_empty(), "empty track");
    let unsupported = |reason: &str| QAGenError::UnsupportedQAType {
        qa_type,
        reason: reason.to_string(),
    };
    let label8 = direction_label(track, DirectionMode::EightWay, TAU_STATIC);
    let label4 = direction_label(track, DirectionMode::FourWay, TAU_STATIC);
    let (w, h) = (spec.width as f64, spec.height as f64);

    let gold_text: String = match qa_type {
        QAType::DirMCQ9 | QAType::DirOpen => label8.word().to_string(),
        QAType::DirMCQ5 => label4.word().to_string(),
        QAType::DirMCQ4 => {
            if label4 == DirectionLabel::Stationary {
                return Err(unsupported("four-way direction options need a moving clip"));
            }
            label4.word().to_string()
        }
        QAType::Description => description_word(spec.motion).to_string(),
        QAType::Appearance => match &spec.foreground {
            ForegroundSpec::Primitive { shape, color } => {
                if template < 2 {
                    palette_name(*color).to_string()
                } else {
                    shape.word().to_string()
                }
            }
            ForegroundSpec::Cutout { .. } => {
                return Err(unsupported(
                    "color/shape words are defined for primitive foregrounds only",
                ));
            }
        },
        QAType::LocMCQ | QAType::LocOpen => {
            let p = if template < 2 { track[0] } else { *track.last().unwrap() };
            region_word(p, w, h).to_string()
        }
        QAType::MoveMCQ | QAType::MoveOpen => {
            if path_length(track) > TAU_STATIC { "yes" } else { "no" }.to_string()
        }
        QAType::TrajMCQ => {
            if spec.motion == MotionType::Static {
                return Err(unsupported("trajectory-pattern options cover moving clips only"));
            }
            spec.motion.pattern_word().to_string()
        }
        QAType::RotMCQ | QAType::RotOpen => rotation_sense(track)
            .ok_or_else(|| unsupported("track has no consistent rotation sense"))?
            .word()
            .to_string(),
    };

    let (options, gold_index, permutation) = if qa_type.is_mcq() {
        let opts: Vec<String> = qa_type.option_words().iter().map(|s| s.to_string()).collect();
        shuffle_options(&opts, &gold_text, rng)?
    } else {
        (Vec::new(), 0, Vec::new())
    };

    let clip_id = format!("{}-{:016x}", spec.domain.name(), spec.seed);
    let video_path = format!("clips/{clip_id}.mdv");
    Ok(QARecord {
        clip_id,
        domain: spec.domain,
        motion_type: spec.motion,
        direction: label8,
        qa_type,
        question: question_templates(qa_type)[template].to_string(),
        options,
        gold_index,
        gold_text,
        permutation,
        video_path,
        seed: spec.seed,
        clip: Some(spec.clone()),
    })
}

/// Structural validation of one record; `record` names it in errors.
pub fn validate_record(rec: &QARecord, record: usize) -> Result<(), QAGenError> {
    let fail = |message: String| QAGenError::Schema { record, message };
    if rec.gold_text.is_empty() {
        return Err(fail("empty gold_text".into()));
    }
    if rec.qa_type.is_mcq() {
        let n = rec.options.len();
        if n == 0 {
            return Err(fail(format!("{} record has no options", rec.qa_type.name())));
        }
        if rec.gold_index >= n {
            return Err(fail(format!("gold_index {} out of range ({n} options)", rec.gold_index)));
        }
        if rec.options[rec.gold_index] != rec.gold_text {
            return Err(fail(format!(
                "options[{}] = {:?} does not match gold_text {:?}",
                rec.gold_index, rec.options[rec.gold_index], rec.gold_text
            )));
        }
        let gold_count = rec.options.iter().filter(|o| **o == rec.gold_text).count();
        if gold_count != 1 {
            return Err(fail(format!("gold appears {gold_count} times in options")));
        }
        if rec.permutation.len() != n {
            return Err(fail(format!(
                "permutation length {} != option count {n}",
                rec.permutation.len()
            )));
        }
        let mut seen = vec![false; n];
        for &p in &rec.permutation {
            if p >= n || seen[p] {
                return Err(fail("permutation is not a bijection over option slots".into()));
            }
            seen[p] = true;
        }
    } else {
        if !rec.options.is_empty() || !rec.permutation.is_empty() {
            return Err(fail(format!(
                "open type {} must have empty options and permutation",
                rec.qa_type.name()
            )));
        }
        if rec.gold_index != 0 {
            return Err(fail("open type must have gold_index 0".into()));
        }
    }
    if let Some(clip) = &rec.clip {
        if clip.seed != rec.seed || clip.domain != rec.domain || clip.motion != rec.motion_type {
            return Err(fail("embedded clip recipe disagrees with record fields".into()));
        }
    }
    Ok(())
}
