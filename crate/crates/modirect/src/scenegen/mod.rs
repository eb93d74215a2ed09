//! Controlled synthetic video generation.
//!
//! A clip is a short sequence of frames showing a single foreground object
//! moving over a static background along a sampled trajectory. Every degree of
//! freedom — trajectory, object appearance, background texture — is drawn from
//! a seeded generator, so the ground-truth center track, direction label, and
//! appearance labels are known exactly and every clip is reproducible
//! bit-for-bit from its spec.
//!
//! The four domains form a 2×2 grid over foreground and background style:
//!
//! | domain | foreground                    | background                  |
//! |--------|-------------------------------|-----------------------------|
//! | PSyn   | flat geometric primitive      | synthetic texture           |
//! | CSyn   | textured cutout blob          | synthetic texture           |
//! | PReal  | flat geometric primitive      | scene-like procedural noise |
//! | CReal  | textured cutout blob          | scene-like procedural noise |
//!
//! Real-style domains can ingest actual image assets instead of the
//! procedural fallback; see [`AssetCatalog`].

mod render;
mod texture;
mod trajectory;

pub mod clipio;

pub use render::{render_clip_frames, render_frame, AssetCatalog};
pub use texture::{palette_color, palette_name, PALETTE_LEN};
pub use trajectory::{sample_trajectory, TrackConstraints};

use crate::geom::Vec2;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Frame edge length (square frames) used by the default configuration.
pub const DEFAULT_FRAME_SIZE: usize = 64;
/// Frames per clip used by the default configuration.
pub const DEFAULT_FRAMES: usize = 8;
/// Net displacement below this many pixels labels a track stationary.
pub const TAU_STATIC: f64 = 2.0;
/// Minimum net displacement for any moving track, in pixels.
pub const MIN_DISPLACEMENT: f64 = 24.0;
/// Maximum sampled net displacement, in pixels.
pub const MAX_DISPLACEMENT: f64 = 48.0;
/// Extra in-frame clearance beyond the object radius, in pixels.
pub const MARGIN_SLACK: f64 = 2.0;
/// Rejection-sampling attempt cap before reporting infeasibility.
pub const MAX_REJECTS: usize = 1000;
/// Object radius sampling range, in pixels.
pub const RADIUS_RANGE: (f64, f64) = (6.5, 9.5);
/// Number of procedurally textured cutout classes.
pub const CUTOUT_CLASSES: usize = 26;

#[derive(Debug, thiserror::Error)]
pub enum SceneGenError {
    #[error("no valid {motion:?} track within {attempts} attempts (frame {width}x{height}, margin {margin:.1})")]
    InfeasibleConstraints {
        motion: MotionType,
        attempts: usize,
        width: f64,
        height: f64,
        margin: f64,
    },
    #[error("invalid clip spec: {0}")]
    BadSpec(String),
    #[error("asset not found: {0}")]
    AssetNotFound(PathBuf),
    #[error("asset {path}: {source}")]
    AssetDecode {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The 2×2 foreground/background domain grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    /// Primitive foreground, synthetic background.
    PSyn,
    /// Cutout foreground, synthetic background.
    CSyn,
    /// Primitive foreground, real-style background.
    PReal,
    /// Cutout foreground, real-style background.
    CReal,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::PSyn, Domain::CSyn, Domain::PReal, Domain::CReal];

    pub fn name(self) -> &'static str {
        match self {
            Domain::PSyn => "p-syn",
            Domain::CSyn => "c-syn",
            Domain::PReal => "p-real",
            Domain::CReal => "c-real",
        }
    }

    pub fn parse(s: &str) -> Option<Domain> {
        match s {
            "p-syn" => Some(Domain::PSyn),
            "c-syn" => Some(Domain::CSyn),
            "p-real" => Some(Domain::PReal),
            "c-real" => Some(Domain::CReal),
            _ => None,
        }
    }

    pub fn cutout_foreground(self) -> bool {
        matches!(self, Domain::CSyn | Domain::CReal)
    }

    pub fn real_background(self) -> bool {
        matches!(self, Domain::PReal | Domain::CReal)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MotionType {
    Linear,
    PerturbedLinear,
    Zigzag,
    Circular,
    Roundtrip,
    Static,
}

impl MotionType {
    pub const ALL: [MotionType; 6] = [
        MotionType::Linear,
        MotionType::PerturbedLinear,
        MotionType::Zigzag,
        MotionType::Circular,
        MotionType::Roundtrip,
        MotionType::Static,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MotionType::Linear => "linear",
            MotionType::PerturbedLinear => "perturbed-linear",
            MotionType::Zigzag => "zigzag",
            MotionType::Circular => "circular",
            MotionType::Roundtrip => "roundtrip",
            MotionType::Static => "static",
        }
    }

    /// Word used as the gold answer of trajectory-pattern questions.
    pub fn pattern_word(self) -> &'static str {
        match self {
            MotionType::Linear | MotionType::PerturbedLinear => "straight",
            MotionType::Zigzag => "zigzag",
            MotionType::Circular => "circular",
            MotionType::Roundtrip => "roundtrip",
            MotionType::Static => "straight",
        }
    }
}

/// A requestable compass direction (net-displacement heading).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction8 {
    Right,
    UpRight,
    Up,
    UpLeft,
    Left,
    DownLeft,
    Down,
    DownRight,
}

impl Direction8 {
    pub const ALL: [Direction8; 8] = [
        Direction8::Right,
        Direction8::UpRight,
        Direction8::Up,
        Direction8::UpLeft,
        Direction8::Left,
        Direction8::DownLeft,
        Direction8::Down,
        Direction8::DownRight,
    ];

    pub const AXES: [Direction8; 4] = [
        Direction8::Left,
        Direction8::Right,
        Direction8::Up,
        Direction8::Down,
    ];

    /// Unit vector in screen coordinates (y down).
    pub fn unit(self) -> Vec2 {
        let d = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Direction8::Right => Vec2::new(1.0, 0.0),
            Direction8::UpRight => Vec2::new(d, -d),
            Direction8::Up => Vec2::new(0.0, -1.0),
            Direction8::UpLeft => Vec2::new(-d, -d),
            Direction8::Left => Vec2::new(-1.0, 0.0),
            Direction8::DownLeft => Vec2::new(-d, d),
            Direction8::Down => Vec2::new(0.0, 1.0),
            Direction8::DownRight => Vec2::new(d, d),
        }
    }

    pub fn is_axis(self) -> bool {
        matches!(
            self,
            Direction8::Left | Direction8::Right | Direction8::Up | Direction8::Down
        )
    }

    pub fn label(self) -> DirectionLabel {
        match self {
            Direction8::Right => DirectionLabel::Right,
            Direction8::UpRight => DirectionLabel::UpRight,
            Direction8::Up => DirectionLabel::Up,
            Direction8::UpLeft => DirectionLabel::UpLeft,
            Direction8::Left => DirectionLabel::Left,
            Direction8::DownLeft => DirectionLabel::DownLeft,
            Direction8::Down => DirectionLabel::Down,
            Direction8::DownRight => DirectionLabel::DownRight,
        }
    }
}

/// Direction-label granularity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DirectionMode {
    /// Four axis labels; non-stationary tracks take the dominant axis.
    FourWay,
    /// Eight compass labels; a diagonal is used when the heading is more than
    /// 22.5° from the nearest axis.
    EightWay,
}

/// Net-displacement direction label (viewer's perspective, y down).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DirectionLabel {
    Left,
    Right,
    Up,
    Down,
    UpLeft,
    UpRight,
    DownLeft,
    DownRight,
    Stationary,
}

impl DirectionLabel {
    pub const FOUR: [DirectionLabel; 4] = [
        DirectionLabel::Left,
        DirectionLabel::Right,
        DirectionLabel::Up,
        DirectionLabel::Down,
    ];

    pub const EIGHT: [DirectionLabel; 8] = [
        DirectionLabel::Left,
        DirectionLabel::Right,
        DirectionLabel::Up,
        DirectionLabel::Down,
        DirectionLabel::UpLeft,
        DirectionLabel::UpRight,
        DirectionLabel::DownLeft,
        DirectionLabel::DownRight,
    ];

    pub fn word(self) -> &'static str {
        match self {
            DirectionLabel::Left => "left",
            DirectionLabel::Right => "right",
            DirectionLabel::Up => "up",
            DirectionLabel::Down => "down",
            DirectionLabel::UpLeft => "top-left",
            DirectionLabel::UpRight => "top-right",
            DirectionLabel::DownLeft => "bottom-left",
            DirectionLabel::DownRight => "bottom-right",
            DirectionLabel::Stationary => "stationary",
        }
    }

    pub fn parse(s: &str) -> Option<DirectionLabel> {
        let all = [
            DirectionLabel::Left,
            DirectionLabel::Right,
            DirectionLabel::Up,
            DirectionLabel::Down,
            DirectionLabel::UpLeft,
            DirectionLabel::UpRight,
            DirectionLabel::DownLeft,
            DirectionLabel::DownRight,
            DirectionLabel::Stationary,
        ];
        all.into_iter().find(|d| d.word() == s)
    }

    /// The opposite compass label. Stationary is its own opposite.
    pub fn antipode(self) -> DirectionLabel {
        match self {
            DirectionLabel::Left => DirectionLabel::Right,
            DirectionLabel::Right => DirectionLabel::Left,
            DirectionLabel::Up => DirectionLabel::Down,
            DirectionLabel::Down => DirectionLabel::Up,
            DirectionLabel::UpLeft => DirectionLabel::DownRight,
            DirectionLabel::UpRight => DirectionLabel::DownLeft,
            DirectionLabel::DownLeft => DirectionLabel::UpRight,
            DirectionLabel::DownRight => DirectionLabel::UpLeft,
            DirectionLabel::Stationary => DirectionLabel::Stationary,
        }
    }
}

/// Foreground object appearance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ForegroundSpec {
    /// Flat-colored geometric primitive.
    Primitive { shape: Shape, color: usize },
    /// Procedurally textured blob (or ingested cutout asset) of one of
    /// [`CUTOUT_CLASSES`] classes.
    Cutout { class: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Circle,
    Triangle,
    Square,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Triangle, Shape::Square];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
            Shape::Square => "square",
        }
    }
}

/// Background appearance. Synthetic domains draw from the texture kinds;
/// real-style domains use scene noise or an ingested image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BackgroundSpec {
    Solid { color: [f32; 3] },
    Gradient { from: [f32; 3], to: [f32; 3], angle: f64 },
    Stripes { a: [f32; 3], b: [f32; 3], angle: f64, width: f64 },
    Checker { a: [f32; 3], b: [f32; 3], cell: f64 },
    GaussianNoise { base: [f32; 3], sigma: f32, seed: u64 },
    Blobs { base: [f32; 3], seed: u64 },
    Speckle { base: [f32; 3], density: f32, seed: u64 },
    Vignette { base: [f32; 3], strength: f32 },
    /// Multi-octave value-noise "scene" used as the real-background fallback.
    ProceduralScene { seed: u64 },
    /// An actual image resampled to the frame.
    ExternalImage { path: PathBuf },
}

impl BackgroundSpec {
    /// Whether this background is one of the synthetic texture kinds (as
    /// opposed to real-style scenes/images).
    pub fn is_synthetic_texture(&self) -> bool {
        !matches!(
            self,
            BackgroundSpec::ProceduralScene { .. } | BackgroundSpec::ExternalImage { .. }
        )
    }
}

/// Complete, self-contained recipe for one clip. Two identical specs always
/// produce bit-identical clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub seed: u64,
    pub domain: Domain,
    pub motion: MotionType,
    /// Requested net-displacement heading; `None` lets the sampler pick one.
    /// Ignored for static clips.
    pub direction: Option<Direction8>,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Object radius in pixels (primitives: circumscribed size scale).
    pub radius: f64,
    pub foreground: ForegroundSpec,
    pub background: BackgroundSpec,
}

/// Per-frame object center positions, in pixels.
pub type CenterTrack = Vec<Vec2>;

/// A rendered clip: frames plus the ground truth that produced them.
#[derive(Clone, Debug)]
pub struct VideoClip {
    pub spec: ClipSpec,
    pub track: CenterTrack,
    /// Row-major frame data, layout (t, y, x, channel), values in [0, 1].
    pub frames: Vec<f32>,
}

impl VideoClip {
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.spec.height * self.spec.width * 3;
        &self.frames[t * n..(t + 1) * n]
    }
}

/// Classify a track's net displacement into a direction label.
///
/// Net displacement below `tau_static` pixels is stationary. In four-way mode
/// the dominant axis wins, with exact diagonals (|dx| = |dy|) resolving to the
/// horizontal label. In eight-way mode the heading is snapped to the nearest
/// of the eight compass points, so a diagonal label appears exactly when the
/// heading is more than 22.5° from both adjacent axes.
pub fn direction_label(track: &[Vec2], mode: DirectionMode, tau_static: f64) -> DirectionLabel {
    let d = *track.last().expect("empty track") - track[0];
    if d.norm() < tau_static {
        return DirectionLabel::Stationary;
    }
    match mode {
        DirectionMode::FourWay => {
            if d.x.abs() >= d.y.abs() {
                if d.x >= 0.0 {
                    DirectionLabel::Right
                } else {
                    DirectionLabel::Left
                }
            } else if d.y >= 0.0 {
                DirectionLabel::Down
            } else {
                DirectionLabel::Up
            }
        }
        DirectionMode::EightWay => {
            // Heading in screen coords; negate y so angles follow compass
            // intuition (up = +90°).
            let theta = (-d.y).atan2(d.x).to_degrees();
            let k = ((theta / 45.0).round().rem_euclid(8.0)) as usize % 8;
            Direction8::ALL[k].label()
        }
    }
}

/// Rotation sense of a track on screen, if it consistently curves.
///
/// Returns `None` for tracks without a dominant turning direction (straight
/// lines, static points). Derived purely from the track geometry: positive
/// accumulated cross product in y-down coordinates means clockwise on screen.
pub fn rotation_sense(track: &[Vec2]) -> Option<RotationSense> {
    let mut acc = 0.0;
    let mut straight = 0.0;
    for w in track.windows(3) {
        let v1 = w[1] - w[0];
        let v2 = w[2] - w[1];
        acc += v1.cross(v2);
        straight += v1.norm() * v2.norm();
    }
    if straight <= 0.0 || acc.abs() < 1e-3 * straight {
        None
    } else if acc > 0.0 {
        Some(RotationSense::Clockwise)
    } else {
        Some(RotationSense::Counterclockwise)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RotationSense {
    Clockwise,
    Counterclockwise,
}

impl RotationSense {
    pub fn word(self) -> &'static str {
        match self {
            RotationSense::Clockwise => "clockwise",
            RotationSense::Counterclockwise => "counterclockwise",
        }
    }
}

/// 3×3 frame region containing a point, named for location questions.
pub fn region_word(p: Vec2, width: f64, height: f64) -> &'static str {
    let col = ((p.x / (width / 3.0)).floor() as i64).clamp(0, 2);
    let row = ((p.y / (height / 3.0)).floor() as i64).clamp(0, 2);
    const NAMES: [[&str; 3]; 3] = [
        ["top-left", "top-center", "top-right"],
        ["middle-left", "center", "middle-right"],
        ["bottom-left", "bottom-center", "bottom-right"],
    ];
    NAMES[row as usize][col as usize]
}

/// Identity class of a foreground spec: primitives enumerate shape×color,
/// cutouts enumerate their class index.
pub fn foreground_identity(fg: &ForegroundSpec) -> usize {
    match fg {
        ForegroundSpec::Primitive { shape, color } => {
            let s = Shape::ALL.iter().position(|x| x == shape).unwrap();
            s * PALETTE_LEN + color
        }
        ForegroundSpec::Cutout { class } => *class,
    }
}

/// Number of identity classes for a domain's foreground family.
pub fn identity_class_count(domain: Domain) -> usize {
    if domain.cutout_foreground() {
        CUTOUT_CLASSES
    } else {
        Shape::ALL.len() * PALETTE_LEN
    }
}

/// Track-sampling constraints implied by a clip spec.
pub fn constraints_for(spec: &ClipSpec) -> TrackConstraints {
    TrackConstraints {
        width: spec.width as f64,
        height: spec.height as f64,
        margin: spec.radius + MARGIN_SLACK,
        min_displacement: MIN_DISPLACEMENT,
        max_displacement: MAX_DISPLACEMENT,
        tau_static: TAU_STATIC,
        max_rejects: MAX_REJECTS,
    }
}

const TRACK_STREAM: u64 = 0x7261_636b; // "rack"

/// Sample the center track for a spec without rendering any pixels.
///
/// This is the same track `generate_clip` renders, so manifest-only dataset
/// builds stay consistent with later video exports.
pub fn sample_track_for_spec(spec: &ClipSpec) -> Result<CenterTrack, SceneGenError> {
    validate_spec(spec)?;
    let rng = Rng::from_seed(spec.seed);
    sample_trajectory(
        spec.motion,
        spec.direction,
        spec.frames,
        &mut rng.derive(TRACK_STREAM),
        &constraints_for(spec),
    )
}

/// Generate a full clip (track + rendered frames) from its spec.
///
/// Bit-identical across runs and thread counts: the only randomness is the
/// spec seed, and rendering is a pure function of (spec, track).
pub fn generate_clip(spec: &ClipSpec) -> Result<VideoClip, SceneGenError> {
    generate_clip_with_assets(spec, None)
}

/// [`generate_clip`] with an optional catalog of ingested image assets for
/// real-style backgrounds and cutout foregrounds.
pub fn generate_clip_with_assets(
    spec: &ClipSpec,
    assets: Option<&AssetCatalog>,
) -> Result<VideoClip, SceneGenError> {
    let track = sample_track_for_spec(spec)?;
    let frames = render_clip_frames(spec, &track, assets)?;
    Ok(VideoClip { spec: spec.clone(), track, frames })
}

fn validate_spec(spec: &ClipSpec) -> Result<(), SceneGenError> {
    if spec.frames < 2 {
        return Err(SceneGenError::BadSpec(format!(
            "need at least 2 frames, got {}",
            spec.frames
        )));
    }
    if spec.width < 16 || spec.height < 16 {
        return Err(SceneGenError::BadSpec(format!(
            "frame {}x{} too small",
            spec.width, spec.height
        )));
    }
    if !(spec.radius > 0.0) {
        return Err(SceneGenError::BadSpec(format!("radius {} must be positive", spec.radius)));
    }
    if let ForegroundSpec::Cutout { class } = spec.foreground {
        if class >= CUTOUT_CLASSES {
            return Err(SceneGenError::BadSpec(format!(
                "cutout class {class} out of range (have {CUTOUT_CLASSES})"
            )));
        }
    }
    if let ForegroundSpec::Primitive { color, .. } = spec.foreground {
        if color >= PALETTE_LEN {
            return Err(SceneGenError::BadSpec(format!(
                "palette color {color} out of range (have {PALETTE_LEN})"
            )));
        }
    }
    // Domain/background coherence: synthetic domains use texture backgrounds,
    // real domains use scenes or images.
    let syn_bg = spec.background.is_synthetic_texture();
    if spec.domain.real_background() && syn_bg {
        return Err(SceneGenError::BadSpec(format!(
            "domain {:?} requires a real-style background",
            spec.domain
        )));
    }
    if !spec.domain.real_background() && !syn_bg {
        return Err(SceneGenError::BadSpec(format!(
            "domain {:?} requires a synthetic texture background",
            spec.domain
        )));
    }
    let cutout_fg = matches!(spec.foreground, ForegroundSpec::Cutout { .. });
    if spec.domain.cutout_foreground() != cutout_fg {
        return Err(SceneGenError::BadSpec(format!(
            "domain {:?} and foreground {:?} disagree",
            spec.domain, spec.foreground
        )));
    }
    Ok(())
}

/// Background sampling policy for the synthetic-background domains.
///
/// Benchmark clips use a single uniform color behind the object; the larger
/// instruction mixture also draws textured backgrounds (gradients, stripes,
/// noise, ...). Real-background domains ignore the style.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackgroundStyle {
    Plain,
    Textured,
}

/// Sample a complete clip spec for a domain: appearance, background, radius.
///
/// The per-clip `seed` drives everything downstream; `rng` drives only the
/// appearance/background/radius choices made here.
pub fn sample_clip_spec(
    domain: Domain,
    bg_style: BackgroundStyle,
    motion: MotionType,
    direction: Option<Direction8>,
    seed: u64,
    frames: usize,
    width: usize,
    height: usize,
    rng: &mut Rng,
) -> ClipSpec {
    let foreground = if domain.cutout_foreground() {
        ForegroundSpec::Cutout { class: rng.below(CUTOUT_CLASSES) }
    } else {
        ForegroundSpec::Primitive {
            shape: *rng.choose(&Shape::ALL),
            color: rng.below(PALETTE_LEN),
        }
    };
    let background = if domain.real_background() {
        BackgroundSpec::ProceduralScene { seed: rng.next_u64() }
    } else {
        texture::sample_synthetic_background(rng, &foreground, bg_style)
    };
    let radius = rng.range(RADIUS_RANGE.0, RADIUS_RANGE.1);
    ClipSpec {
        seed,
        domain,
        motion,
        direction,
        frames,
        width,
        height,
        radius,
        foreground,
        background,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mk_track(points: &[(f64, f64)]) -> CenterTrack {
        points.iter().map(|&(x, y)| Vec2::new(x, y)).collect()
    }

    #[test]
    fn direction_labels_follow_screen_convention() {
        // y grows downward, so decreasing y is "up".
        let up = mk_track(&[(32.0, 50.0), (32.0, 20.0)]);
        assert_eq!(direction_label(&up, DirectionMode::FourWay, TAU_STATIC), DirectionLabel::Up);
        let down = mk_track(&[(32.0, 10.0), (32.0, 40.0)]);
        assert_eq!(
            direction_label(&down, DirectionMode::FourWay, TAU_STATIC),
            DirectionLabel::Down
        );
        let right = mk_track(&[(10.0, 32.0), (40.0, 32.0)]);
        assert_eq!(
            direction_label(&right, DirectionMode::FourWay, TAU_STATIC),
            DirectionLabel::Right
        );
    }

    #[test]
    fn small_net_displacement_is_stationary() {
        let t = mk_track(&[(32.0, 32.0), (33.0, 32.5)]);
        assert_eq!(
            direction_label(&t, DirectionMode::EightWay, TAU_STATIC),
            DirectionLabel::Stationary
        );
    }

    #[test]
    fn eight_way_splits_at_22_5_degrees() {
        // 20° above horizontal: still "right".
        let a = 20f64.to_radians();
        let t = mk_track(&[(10.0, 32.0), (10.0 + 30.0 * a.cos(), 32.0 - 30.0 * a.sin())]);
        assert_eq!(
            direction_label(&t, DirectionMode::EightWay, TAU_STATIC),
            DirectionLabel::Right
        );
        // 25° above horizontal: diagonal.
        let a = 25f64.to_radians();
        let t = mk_track(&[(10.0, 32.0), (10.0 + 30.0 * a.cos(), 32.0 - 30.0 * a.sin())]);
        assert_eq!(
            direction_label(&t, DirectionMode::EightWay, TAU_STATIC),
            DirectionLabel::UpRight
        );
    }

    #[test]
    fn four_way_prefers_horizontal_on_exact_diagonal() {
        let t = mk_track(&[(10.0, 10.0), (40.0, 40.0)]);
        assert_eq!(
            direction_label(&t, DirectionMode::FourWay, TAU_STATIC),
            DirectionLabel::Right
        );
    }

    #[test]
    fn region_words_cover_the_grid() {
        assert_eq!(region_word(Vec2::new(60.0, 6.0), 64.0, 64.0), "top-right");
        assert_eq!(region_word(Vec2::new(32.0, 32.0), 64.0, 64.0), "center");
        assert_eq!(region_word(Vec2::new(2.0, 62.0), 64.0, 64.0), "bottom-left");
    }

    #[test]
    fn rotation_sense_matches_screen_chirality() {
        // Right then down = clockwise on screen.
        let cw = mk_track(&[(10.0, 10.0), (20.0, 10.0), (20.0, 20.0)]);
        assert_eq!(rotation_sense(&cw), Some(RotationSense::Clockwise));
        let ccw = mk_track(&[(10.0, 20.0), (20.0, 20.0), (20.0, 10.0)]);
        assert_eq!(rotation_sense(&ccw), Some(RotationSense::Counterclockwise));
        let line = mk_track(&[(10.0, 10.0), (20.0, 10.0), (30.0, 10.0)]);
        assert_eq!(rotation_sense(&line), None);
    }

    #[test]
    fn identity_enumerates_shape_color_grid() {
        let fg = ForegroundSpec::Primitive { shape: Shape::Triangle, color: 3 };
        assert_eq!(foreground_identity(&fg), PALETTE_LEN + 3);
        assert_eq!(identity_class_count(Domain::PSyn), 30);
        assert_eq!(identity_class_count(Domain::CReal), 26);
    }
}
