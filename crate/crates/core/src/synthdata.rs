//! Procedural multi-view video clips with exact action/view/subject factors.
//!
//! The action fixes the sprite trajectory, the view fixes an affine camera warp
//! plus a striped background, and the subject fixes sprite shape, size and
//! color. Each factor touches a disjoint part of the renderer, so the ground
//! truth for disentanglement is known exactly.

use std::collections::{BTreeSet, HashSet};
use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

pub const CLIP_MAGIC: &[u8; 8] = b"DVCLIP1\n";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const META_FILE: &str = "meta.json";
pub const SYNTH_CONFIG_FILE: &str = "synth_config.json";

/// Frame-tensor dimensions of a clip, `(T, C, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipDims {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ClipDims {
    pub fn len(&self) -> usize {
        self.frames * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for ClipDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.frames, self.channels, self.height, self.width
        )
    }
}

/// A labelled clip. `frames` is `(T, C, H, W)` row-major with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub clip_id: String,
    pub dims: ClipDims,
    pub frames: Vec<f32>,
    pub action: usize,
    pub view: usize,
    pub subject: usize,
}

impl VideoClip {
    pub fn check_invariants(&self) -> Result<()> {
        let d = self.dims;
        if d.frames == 0 || d.channels == 0 || d.height == 0 || d.width == 0 {
            return Err(Error::Shape(format!(
                "clip {} has empty dims {d}",
                self.clip_id
            )));
        }
        if self.frames.len() != d.len() {
            return Err(Error::Shape(format!(
                "clip {}: {} values for dims {d}",
                self.clip_id,
                self.frames.len()
            )));
        }
        if let Some(i) = self
            .frames
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::Invalid(format!(
                "clip {}: value {} at index {i} outside [0,1]",
                self.clip_id, self.frames[i]
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_actions: usize,
    pub num_views: usize,
    pub num_subjects: usize,
    pub clips_per_combination: usize,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub noise_std: f64,
    /// Amplitude of per-clip trajectory jitter (phase, offset, amplitude). Zero
    /// makes the noise-free render a function of the labels alone.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_actions: 6,
            num_views: 3,
            num_subjects: 8,
            clips_per_combination: 2,
            frames: 16,
            channels: 3,
            height: 32,
            width: 32,
            noise_std: 0.02,
            jitter: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_actions < 2 {
            return Err(Error::config("data.num_actions", "need ≥ 2 actions"));
        }
        if self.num_views < 2 {
            return Err(Error::config("data.num_views", "need ≥ 2 views"));
        }
        if self.num_subjects < 2 {
            return Err(Error::config("data.num_subjects", "need ≥ 2 subjects"));
        }
        if self.clips_per_combination == 0 {
            return Err(Error::config("data.clips_per_combination", "must be ≥ 1"));
        }
        for (key, v) in [
            ("data.frames", self.frames),
            ("data.channels", self.channels),
            ("data.height", self.height),
            ("data.width", self.width),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be ≥ 1"));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("data.noise_std", "must be finite and ≥ 0"));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::config("data.jitter", "must be finite and ≥ 0"));
        }
        Ok(())
    }

    pub fn dims(&self) -> ClipDims {
        ClipDims {
            frames: self.frames,
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }

    fn check_labels(&self, action: usize, view: usize, subject: usize) -> Result<()> {
        for (label, value, limit) in [
            ("action", action, self.num_actions),
            ("view", view, self.num_views),
            ("subject", subject, self.num_subjects),
        ] {
            if value >= limit {
                return Err(Error::LabelOutOfRange {
                    label,
                    value,
                    limit,
                });
            }
        }
        Ok(())
    }

    /// Renders one clip of `t` frames. Pure: identical inputs give identical bits.
    pub fn render_clip(
        &self,
        action: usize,
        view: usize,
        subject: usize,
        t: usize,
        seed: u64,
    ) -> Result<VideoClip> {
        self.check_labels(action, view, subject)?;
        if t == 0 {
            return Err(Error::config("data.frames", "must be ≥ 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Jitter::draw(&mut rng, self.jitter);
        let motion = Motion::for_action(action);
        let sprite = Sprite::for_subject(subject, self.channels);
        let camera = Camera::for_view(view, self.num_views, self.channels);

        let (c, h, w) = (self.channels, self.height, self.width);
        let dims = ClipDims {
            frames: t,
            channels: c,
            height: h,
            width: w,
        };
        let mut frames = vec![0f32; dims.len()];
        let mut coverage = vec![0f64; h * w];
        for f in 0..t {
            let pose = motion.pose(phase_of(f, t), &jitter);
            rasterize(&sprite, &pose, Some(&camera), h, w, &mut coverage);
            let base = f * c * h * w;
            for y in 0..h {
                for x in 0..w {
                    let a = coverage[y * w + x];
                    let (u, v) = pixel_center(x, y, w, h);
                    for ch in 0..c {
                        let bg = camera.background(u, v, ch);
                        let val = a * sprite.color[ch] + (1.0 - a) * bg;
                        frames[base + ch * h * w + y * w + x] = val as f32;
                    }
                }
            }
        }
        if self.noise_std > 0.0 {
            let normal = Normal::new(0.0f64, self.noise_std)
                .map_err(|e| Error::config("data.noise_std", e.to_string()))?;
            for v in frames.iter_mut() {
                *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
            }
        }
        Ok(VideoClip {
            clip_id: format!("a{action:02}_v{view:02}_s{subject:02}"),
            dims,
            frames,
            action,
            view,
            subject,
        })
    }

    /// Sprite coverage before the camera warp, `(T, H, W)` row-major in `[0,1]`.
    /// Background, warp and noise are omitted.
    pub fn render_unwarped_coverage(
        &self,
        action: usize,
        subject: usize,
        t: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        self.check_labels(action, 0, subject)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let jitter = Jitter::draw(&mut rng, self.jitter);
        let motion = Motion::for_action(action);
        let sprite = Sprite::for_subject(subject, self.channels);
        let (h, w) = (self.height, self.width);
        let mut out = vec![0f64; t * h * w];
        let mut coverage = vec![0f64; h * w];
        for f in 0..t {
            let pose = motion.pose(phase_of(f, t), &jitter);
            rasterize(&sprite, &pose, None, h, w, &mut coverage);
            out[f * h * w..(f + 1) * h * w].copy_from_slice(&coverage);
        }
        Ok(out)
    }

    fn clip_name(action: usize, view: usize, subject: usize, replica: usize) -> String {
        format!("a{action:02}_v{view:02}_s{subject:02}_r{replica:02}")
    }

    /// Re-renders a generated clip from its labels and replica index.
    pub fn render_record(
        &self,
        action: usize,
        view: usize,
        subject: usize,
        replica: usize,
    ) -> Result<VideoClip> {
        let seed = clip_seed(self.seed, action, view, subject, replica);
        let mut clip = self.render_clip(action, view, subject, self.frames, seed)?;
        clip.clip_id = Self::clip_name(action, view, subject, replica);
        Ok(clip)
    }
}

/// Per-clip seed derived from the dataset seed and the clip's coordinates.
pub fn clip_seed(seed: u64, action: usize, view: usize, subject: usize, replica: usize) -> u64 {
    [action, view, subject, replica]
        .iter()
        .fold(splitmix64(seed), |acc, &x| splitmix64(acc ^ (x as u64)))
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn phase_of(frame: usize, t: usize) -> f64 {
    if t > 1 {
        frame as f64 / (t - 1) as f64
    } else {
        0.0
    }
}

fn pixel_center(x: usize, y: usize, w: usize, h: usize) -> (f64, f64) {
    ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64)
}

#[derive(Debug, Clone, Copy, Default)]
struct Jitter {
    phase: f64,
    offset: (f64, f64),
    amplitude: f64,
}

impl Jitter {
    fn draw(rng: &mut ChaCha8Rng, amount: f64) -> Self {
        // Always consume the same draws so noise sequences do not depend on `amount`.
        let mut sym = || rng.random::<f64>() * 2.0 - 1.0;
        let (p, ox, oy, a) = (sym(), sym(), sym(), sym());
        Jitter {
            phase: 0.15 * amount * p,
            offset: (0.06 * amount * ox, 0.06 * amount * oy),
            amplitude: 0.15 * amount * a,
        }
    }
}

/// Sprite trajectories, one per action id (cycled with increasing speed past 8).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    TranslateRight,
    TranslateDown,
    OrbitCounterClockwise,
    Zigzag,
    OscillateScale,
    TranslateLeft,
    TranslateUp,
    OrbitClockwise,
}

const MOTIONS: [MotionKind; 8] = [
    MotionKind::TranslateRight,
    MotionKind::TranslateDown,
    MotionKind::OrbitCounterClockwise,
    MotionKind::Zigzag,
    MotionKind::OscillateScale,
    MotionKind::TranslateLeft,
    MotionKind::TranslateUp,
    MotionKind::OrbitClockwise,
];

#[derive(Debug, Clone, Copy)]
struct Motion {
    kind: MotionKind,
    speed: f64,
}

#[derive(Debug, Clone, Copy)]
struct Pose {
    cx: f64,
    cy: f64,
    scale: f64,
}

impl Motion {
    fn for_action(action: usize) -> Self {
        Motion {
            kind: MOTIONS[action % MOTIONS.len()],
            speed: 1.0 + (action / MOTIONS.len()) as f64 * 0.5,
        }
    }

    fn pose(&self, u: f64, j: &Jitter) -> Pose {
        let amp = 1.0 + j.amplitude;
        let (ox, oy) = (0.5 + j.offset.0, 0.5 + j.offset.1);
        // Linear sweeps span 0.56 of the frame; speed variants cover less ground per clip.
        let sweep = 0.56 * amp / self.speed.sqrt();
        let lin = (u - 0.5) * sweep;
        let turn = 2.0 * PI * (self.speed * u + j.phase);
        let (cx, cy, scale) = match self.kind {
            MotionKind::TranslateRight => (ox + lin, oy, 1.0),
            MotionKind::TranslateLeft => (ox - lin, oy, 1.0),
            MotionKind::TranslateDown => (ox, oy + lin, 1.0),
            MotionKind::TranslateUp => (ox, oy - lin, 1.0),
            MotionKind::OrbitCounterClockwise => {
                let r = 0.22 * amp;
                (ox + r * turn.cos(), oy - r * turn.sin(), 1.0)
            }
            MotionKind::OrbitClockwise => {
                let r = 0.22 * amp;
                (ox + r * turn.cos(), oy + r * turn.sin(), 1.0)
            }
            MotionKind::Zigzag => {
                let tri = 2.0 * (2.0 * (self.speed * u + j.phase)).rem_euclid(1.0) - 1.0;
                let tri = 1.0 - 2.0 * tri.abs();
                (ox + lin, oy + 0.16 * amp * tri, 1.0)
            }
            MotionKind::OscillateScale => (ox, oy, 1.0 + 0.55 * amp * (2.0 * turn).sin()),
        };
        Pose { cx, cy, scale }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Disc,
    Square,
    Diamond,
    Triangle,
    Ring,
    Cross,
}

const SHAPES: [Shape; 6] = [
    Shape::Disc,
    Shape::Square,
    Shape::Diamond,
    Shape::Triangle,
    Shape::Ring,
    Shape::Cross,
];

struct Sprite {
    shape: Shape,
    radius: f64,
    color: Vec<f64>,
}

/// Color with `channels` components from a hue in `[0,1)`.
fn hue_color(hue: f64, channels: usize, lo: f64, span: f64) -> Vec<f64> {
    if channels == 1 {
        return vec![lo + span * (0.5 + 0.5 * (2.0 * PI * hue).cos())];
    }
    (0..channels)
        .map(|c| {
            let phase = 2.0 * PI * (hue - c as f64 / channels as f64);
            lo + span * (0.5 + 0.5 * phase.cos())
        })
        .collect()
}

impl Sprite {
    fn for_subject(subject: usize, channels: usize) -> Self {
        let hue = (subject as f64 * 0.618_033_988_75).fract();
        Sprite {
            shape: SHAPES[subject % SHAPES.len()],
            radius: 0.11 * (0.9 + 0.05 * ((subject * 7) % 5) as f64),
            color: hue_color(hue, channels, 0.45, 0.55),
        }
    }

    /// Point test in sprite-local coordinates normalized by the radius.
    fn contains(&self, dx: f64, dy: f64) -> bool {
        match self.shape {
            Shape::Disc => dx * dx + dy * dy <= 1.0,
            Shape::Square => dx.abs() <= 0.85 && dy.abs() <= 0.85,
            Shape::Diamond => dx.abs() + dy.abs() <= 1.1,
            Shape::Triangle => dy <= 0.8 && dy >= -1.0 + 2.0 * dx.abs() * 0.9,
            Shape::Ring => {
                let r2 = dx * dx + dy * dy;
                (0.3..=1.0).contains(&r2)
            }
            Shape::Cross => {
                (dx.abs() <= 0.35 && dy.abs() <= 1.0) || (dy.abs() <= 0.35 && dx.abs() <= 1.0)
            }
        }
    }
}

struct Camera {
    /// Inverse of the image-from-scene linear map, about the frame center.
    inverse: [[f64; 2]; 2],
    stripe_dir: (f64, f64),
    stripe_freq: f64,
    tint: Vec<f64>,
}

impl Camera {
    fn for_view(view: usize, num_views: usize, channels: usize) -> Self {
        let frac = if num_views > 1 {
            view as f64 / (num_views - 1) as f64
        } else {
            0.5
        };
        let theta = (-28.0 + 56.0 * frac).to_radians();
        let sx = 1.0 - 0.12 * (view % 2) as f64;
        let sy = 0.9 + 0.1 * ((view + 1) % 2) as f64;
        let shear = 0.22 * (view as f64 * 2.1).sin();
        let (c, s) = (theta.cos(), theta.sin());
        // forward = R(theta) * [[sx, shear], [0, sy]]
        let m = [[c * sx, c * shear - s * sy], [s * sx, s * shear + c * sy]];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let inverse = [
            [m[1][1] / det, -m[0][1] / det],
            [-m[1][0] / det, m[0][0] / det],
        ];
        let alpha = PI * view as f64 / num_views as f64 + 0.3;
        Camera {
            inverse,
            stripe_dir: (alpha.cos(), alpha.sin()),
            stripe_freq: 2.0 + view as f64,
            tint: hue_color(view as f64 / num_views as f64 + 0.55, channels, 0.2, 0.8),
        }
    }

    fn to_scene(&self, u: f64, v: f64) -> (f64, f64) {
        let (du, dv) = (u - 0.5, v - 0.5);
        (
            0.5 + self.inverse[0][0] * du + self.inverse[0][1] * dv,
            0.5 + self.inverse[1][0] * du + self.inverse[1][1] * dv,
        )
    }

    fn background(&self, u: f64, v: f64, channel: usize) -> f64 {
        let p = u * self.stripe_dir.0 + v * self.stripe_dir.1;
        let stripe = 0.5 + 0.5 * (2.0 * PI * self.stripe_freq * p).sin();
        0.05 + 0.3 * stripe * self.tint[channel]
    }
}

/// Fills `out` (H×W) with 2×2-supersampled sprite coverage.
fn rasterize(
    sprite: &Sprite,
    pose: &Pose,
    camera: Option<&Camera>,
    h: usize,
    w: usize,
    out: &mut [f64],
) {
    const SUB: [f64; 2] = [0.25, 0.75];
    let r = sprite.radius * pose.scale;
    for y in 0..h {
        for x in 0..w {
            let mut hits = 0u32;
            for sy in SUB {
                for sx in SUB {
                    let u = (x as f64 + sx) / w as f64;
                    let v = (y as f64 + sy) / h as f64;
                    let (px, py) = match camera {
                        Some(cam) => cam.to_scene(u, v),
                        None => (u, v),
                    };
                    if sprite.contains((px - pose.cx) / r, (py - pose.cy) / r) {
                        hits += 1;
                    }
                }
            }
            out[y * w + x] = hits as f64 / 4.0;
        }
    }
}

// ---------------------------------------------------------------------------
// Clip files

pub fn write_clip(path: &Path, clip: &VideoClip) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let d = clip.dims;
    let mut bytes = Vec::with_capacity(8 + 16 + 4 * clip.frames.len());
    bytes.extend_from_slice(CLIP_MAGIC);
    for v in [d.frames, d.channels, d.height, d.width] {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in &clip.frames {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a clip file, returning its dims and raw frame values.
pub fn read_clip_file(path: &Path) -> Result<(ClipDims, Vec<f32>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: msg,
    };
    if bytes.len() < 24 || &bytes[..8] != CLIP_MAGIC {
        return Err(bad("not a DVCLIP1 file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    let dims = ClipDims {
        frames: word(0) as usize,
        channels: word(1) as usize,
        height: word(2) as usize,
        width: word(3) as usize,
    };
    let payload = &bytes[24..];
    if payload.len() != 4 * dims.len() {
        return Err(bad(format!(
            "payload has {} bytes, dims {dims} need {}",
            payload.len(),
            4 * dims.len()
        )));
    }
    let frames = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((dims, frames))
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub clip_id: String,
    pub path: String,
    pub action: usize,
    pub view: usize,
    pub subject: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "V")]
    pub num_views: usize,
    #[serde(rename = "S")]
    pub num_subjects: usize,
    #[serde(rename = "C")]
    pub channels: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
}

/// Clip index plus label cardinalities. Relative record paths resolve against `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub meta: DatasetMeta,
    pub records: Vec<ManifestRecord>,
}

/// Anything that can materialize a manifest record into frames.
pub trait ClipSource: Sync {
    fn load(&self, record: &ManifestRecord) -> Result<VideoClip>;
}

impl ClipSource for DatasetManifest {
    fn load(&self, record: &ManifestRecord) -> Result<VideoClip> {
        self.load_clip(record)
    }
}

impl DatasetManifest {
    pub fn new(root: PathBuf, meta: DatasetMeta, records: Vec<ManifestRecord>) -> Result<Self> {
        let m = DatasetManifest {
            root,
            meta,
            records,
        };
        m.validate()?;
        Ok(m)
    }

    /// Checks id uniqueness and label ranges. Coverage gaps are not errors here;
    /// see [`DatasetManifest::missing_pairs`].
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.clip_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate clip_id {}", r.clip_id)));
            }
            for (label, v, limit) in [
                ("action", r.action, self.meta.num_actions),
                ("view", r.view, self.meta.num_views),
                ("subject", r.subject, self.meta.num_subjects),
            ] {
                if v >= limit {
                    return Err(Error::Manifest(format!(
                        "clip {}: {label} {v} outside [0,{limit})",
                        r.clip_id
                    )));
                }
            }
            if r.frames == 0 {
                return Err(Error::Manifest(format!("clip {}: zero frames", r.clip_id)));
            }
        }
        Ok(())
    }

    /// `(action, view)` pairs with no record, in lexicographic order.
    pub fn missing_pairs(&self) -> Vec<(usize, usize)> {
        let present: BTreeSet<(usize, usize)> =
            self.records.iter().map(|r| (r.action, r.view)).collect();
        (0..self.meta.num_actions)
            .flat_map(|a| (0..self.meta.num_views).map(move |v| (a, v)))
            .filter(|p| !present.contains(p))
            .collect()
    }

    pub fn record(&self, clip_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.clip_id == clip_id)
    }

    pub fn clip_path(&self, record: &ManifestRecord) -> PathBuf {
        let p = Path::new(&record.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load_clip(&self, record: &ManifestRecord) -> Result<VideoClip> {
        let path = self.clip_path(record);
        let (dims, frames) = read_clip_file(&path)?;
        let m = &self.meta;
        if (dims.channels, dims.height, dims.width) != (m.channels, m.height, m.width)
            || dims.frames != record.frames
        {
            return Err(Error::Shape(format!(
                "{}: file dims {dims}, manifest expects {}x{}x{}x{}",
                path.display(),
                record.frames,
                m.channels,
                m.height,
                m.width
            )));
        }
        Ok(VideoClip {
            clip_id: record.clip_id.clone(),
            dims,
            frames,
            action: record.action,
            view: record.view,
            subject: record.subject,
        })
    }

    /// Writes `manifest.csv` and `meta.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let meta_path = dir.join(META_FILE);
        let json = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        fs::write(&meta_path, json + "\n").map_err(|e| Error::io(&meta_path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Loads `manifest.csv` (or the given CSV) with its sibling `meta.json`.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let csv_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let root = csv_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let meta_path = root.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Parse {
        path: meta_path.clone(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;

    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| csv_err(&csv_path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(&csv_path, e))?.clone();
    let expected = ["clip_id", "path", "action", "view", "subject", "frames"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            path: csv_path,
            line: 1,
            message: format!("expected header {}", expected.join(",")),
        });
    }
    let mut records = Vec::new();
    for row in reader.deserialize() {
        records.push(row.map_err(|e| csv_err(&csv_path, e))?);
    }
    let manifest = DatasetManifest::new(root, meta, records)?;
    let missing = manifest.missing_pairs();
    if !missing.is_empty() {
        log::warn!(
            "{}: no clips for (action, view) pairs {:?}; triplet sampling will fail",
            csv_path.display(),
            missing
        );
    }
    Ok(manifest)
}

/// Renders and writes `A·V·S·clips_per_combination` clips plus the manifest.
pub fn generate_dataset(config: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    generate_dataset_with(config, out_dir, Exec::default())
}

pub fn generate_dataset_with(
    config: &SynthConfig,
    out_dir: &Path,
    exec: Exec,
) -> Result<DatasetManifest> {
    config.validate()?;
    let clip_dir = out_dir.join("clips");
    fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;

    let mut cells = Vec::new();
    for a in 0..config.num_actions {
        for v in 0..config.num_views {
            for s in 0..config.num_subjects {
                for r in 0..config.clips_per_combination {
                    cells.push((a, v, s, r));
                }
            }
        }
    }
    let records = exec.try_map(&cells, |&(a, v, s, r)| {
        let clip = config.render_record(a, v, s, r)?;
        let rel = format!("clips/{}.dvclip", clip.clip_id);
        write_clip(&out_dir.join(&rel), &clip)?;
        Ok::<_, Error>(ManifestRecord {
            clip_id: clip.clip_id,
            path: rel,
            action: a,
            view: v,
            subject: s,
            frames: config.frames,
        })
    })?;

    let meta = DatasetMeta {
        num_actions: config.num_actions,
        num_views: config.num_views,
        num_subjects: config.num_subjects,
        channels: config.channels,
        height: config.height,
        width: config.width,
    };
    let manifest = DatasetManifest::new(out_dir.to_path_buf(), meta, records)?;
    manifest.write(out_dir)?;
    let cfg_path = out_dir.join(SYNTH_CONFIG_FILE);
    let json = serde_json::to_string_pretty(config).expect("config serializes");
    fs::write(&cfg_path, json + "\n").map_err(|e| Error::io(&cfg_path, e))?;
    Ok(manifest)
}

/// Parses the replica index from a generated clip id (`a00_v00_s00_r01`).
pub fn replica_of(clip_id: &str) -> Option<usize> {
    clip_id.rsplit('_').next()?.strip_prefix('r')?.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_actions: 3,
            num_views: 2,
            num_subjects: 2,
            clips_per_combination: 1,
            frames: 6,
            channels: 3,
            height: 16,
            width: 16,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn render_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = cfg.render_clip(2, 1, 5, 16, 99).unwrap();
        let b = cfg.render_clip(2, 1, 5, 16, 99).unwrap();
        assert_eq!(a.frames, b.frames);
        a.check_invariants().unwrap();
    }

    #[test]
    fn noise_free_render_ignores_seed() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            jitter: 0.0,
            ..SynthConfig::default()
        };
        let a = cfg.render_clip(3, 2, 1, 16, 1).unwrap();
        let b = cfg.render_clip(3, 2, 1, 16, 2).unwrap();
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn seed_changes_noisy_render() {
        let cfg = SynthConfig::default();
        let a = cfg.render_clip(0, 0, 0, 4, 1).unwrap();
        let b = cfg.render_clip(0, 0, 0, 4, 2).unwrap();
        assert_ne!(a.frames, b.frames);
    }

    #[test]
    fn translate_right_centroid_increases() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            ..SynthConfig::default()
        };
        let (h, w, t) = (cfg.height, cfg.width, cfg.frames);
        for seed in 0..5 {
            let cov = cfg.render_unwarped_coverage(0, 3, t, seed).unwrap();
            // brute-force weighted centroid per frame
            let xs: Vec<f64> = (0..t)
                .map(|f| {
                    let (mut m, mut mx) = (0.0, 0.0);
                    for y in 0..h {
                        for x in 0..w {
                            let c = cov[f * h * w + y * w + x];
                            m += c;
                            mx += c * x as f64;
                        }
                    }
                    assert!(m > 0.0, "sprite missing in frame {f}");
                    mx / m
                })
                .collect();
            assert!(xs.windows(2).all(|p| p[1] > p[0]), "{xs:?}");
        }
    }

    #[test]
    fn out_of_range_label_is_named() {
        let err = SynthConfig::default()
            .render_clip(0, 7, 0, 4, 0)
            .unwrap_err();
        assert!(err.to_string().contains("view"), "{err}");
    }

    #[test]
    fn single_action_config_rejected() {
        let cfg = SynthConfig {
            num_actions: 1,
            ..SynthConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("need ≥ 2 actions"));
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_dataset(&cfg, dir.path()).is_err());
    }

    #[test]
    fn actions_views_and_subjects_render_differently() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            jitter: 0.0,
            ..SynthConfig::default()
        };
        let base = cfg.render_clip(0, 0, 0, 8, 0).unwrap().frames;
        for (a, v, s) in [(1, 0, 0), (0, 1, 0), (0, 0, 1)] {
            assert_ne!(base, cfg.render_clip(a, v, s, 8, 0).unwrap().frames);
        }
    }

    #[test]
    fn manifest_round_trip_and_rerender() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let m = generate_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(m.records.len(), 3 * 2 * 2);
        let loaded = load_manifest(dir.path()).unwrap();
        assert_eq!(m, loaded);
        for r in &loaded.records {
            let clip = loaded.load_clip(r).unwrap();
            let again = cfg
                .render_record(r.action, r.view, r.subject, replica_of(&r.clip_id).unwrap())
                .unwrap();
            assert_eq!(clip, again);
        }
    }

    #[test]
    fn regenerate_is_byte_identical() {
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let cfg = small();
        let m = generate_dataset(&cfg, d1.path()).unwrap();
        generate_dataset(&cfg, d2.path()).unwrap();
        for r in &m.records {
            let a = fs::read(d1.path().join(&r.path)).unwrap();
            let b = fs::read(d2.path().join(&r.path)).unwrap();
            assert_eq!(a, b, "{}", r.clip_id);
        }
        for f in [MANIFEST_FILE, META_FILE] {
            assert_eq!(
                fs::read(d1.path().join(f)).unwrap(),
                fs::read(d2.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn clip_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let clip = VideoClip {
            clip_id: "x".into(),
            dims: ClipDims {
                frames: 1,
                channels: 1,
                height: 1,
                width: 2,
            },
            frames: vec![0.25, 1.0],
            action: 0,
            view: 0,
            subject: 0,
        };
        let p = dir.path().join("x.dvclip");
        write_clip(&p, &clip).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], b"DVCLIP1\n");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &2u32.to_le_bytes());
        assert_eq!(&bytes[24..28], &0.25f32.to_le_bytes());
        assert_eq!(bytes.len(), 32);
    }

    fn write_raw_manifest(dir: &Path, rows: &[&str]) -> PathBuf {
        let meta = DatasetMeta {
            num_actions: 2,
            num_views: 3,
            num_subjects: 2,
            channels: 1,
            height: 2,
            width: 2,
        };
        fs::write(dir.join(META_FILE), serde_json::to_string(&meta).unwrap()).unwrap();
        let mut text = String::from("clip_id,path,action,view,subject,frames\n");
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        let p = dir.join(MANIFEST_FILE);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn duplicate_clip_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_raw_manifest(
            dir.path(),
            &["c1,c1.dvclip,0,0,0,4", "c1,c2.dvclip,1,0,0,4"],
        );
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("duplicate clip_id c1"), "{err}");
    }

    #[test]
    fn parse_error_carries_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_raw_manifest(
            dir.path(),
            &["c1,c1.dvclip,0,0,0,4", "c2,c2.dvclip,x,0,0,4"],
        );
        match load_manifest(&p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_pairs_match_enumeration() {
        let dir = tempfile::tempdir().unwrap();
        // action 1 never appears under view 2
        let rows = [
            "a,a,0,0,0,4",
            "b,b,0,1,0,4",
            "c,c,0,2,0,4",
            "d,d,1,0,0,4",
            "e,e,1,1,1,4",
        ];
        let m = load_manifest(&write_raw_manifest(dir.path(), &rows)).unwrap();
        let mut brute = Vec::new();
        for a in 0..2 {
            for v in 0..3 {
                if !m.records.iter().any(|r| r.action == a && r.view == v) {
                    brute.push((a, v));
                }
            }
        }
        assert_eq!(m.missing_pairs(), brute);
        assert_eq!(brute, vec![(1, 2)]);
    }
}
