//! Synthetic moving-shapes benchmark and labeled/unlabeled split management.
//!
//! A class is a (shape, motion) pair. Each clip renders one shape with hard
//! edges over a textured background that is either frozen or scrolling, plus
//! Gaussian noise. Masks are exact renderings of the shape.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::ClassInfo;
use crate::types::{mask_to_box, BBox, FrameAnnotation, Mask, Region, Sample, VideoClip};

pub const DATASET_FORMAT: &str = "stable-teacher-dataset/1";
pub const SPLIT_FORMAT: &str = "stable-teacher-split/1";
pub const CLIP_FORMAT: &str = "stable-teacher-clip/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rect,
    Disc,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    Linear,
    Circular,
    Zigzag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundMode {
    Static,
    Dynamic,
    /// Half of the classes get each background.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

const SHAPES: [ShapeKind; 3] = [ShapeKind::Rect, ShapeKind::Disc, ShapeKind::Triangle];
const MOTIONS: [MotionKind; 3] = [MotionKind::Linear, MotionKind::Circular, MotionKind::Zigzag];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDef {
    pub id: usize,
    pub name: String,
    pub shape: ShapeKind,
    pub motion: MotionKind,
    pub background: Background,
}

impl ClassDef {
    /// The class as seen by evaluation reports.
    pub fn info(&self) -> ClassInfo {
        ClassInfo { id: self.id, name: self.name.clone(), background: serde_name(&self.background) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub background: BackgroundMode,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 6,
            train_per_class: 60,
            val_per_class: 10,
            test_per_class: 10,
            frames: 8,
            height: 32,
            width: 32,
            background: BackgroundMode::Mixed,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let max = SHAPES.len() * MOTIONS.len();
        if !(2..=max).contains(&self.num_classes) {
            return Err(Error::config("data.num_classes", format!("must lie in 2..={max}")));
        }
        if self.frames < 8 {
            return Err(Error::config("data.frames", "need at least 8 frames"));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::config("data.height", "frames must be at least 16×16"));
        }
        if self.train_per_class == 0 {
            return Err(Error::config("data.train_per_class", "must be positive"));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::config("data.noise", "must lie in [0, 0.5)"));
        }
        Ok(())
    }

    /// Classes ordered motion-major: the first three use linear motion.
    pub fn classes(&self) -> Vec<ClassDef> {
        (0..self.num_classes)
            .map(|id| {
                let shape = SHAPES[id % SHAPES.len()];
                let motion = MOTIONS[id / SHAPES.len()];
                let background = match self.background {
                    BackgroundMode::Static => Background::Static,
                    BackgroundMode::Dynamic => Background::Dynamic,
                    BackgroundMode::Mixed if id % 2 == 0 => Background::Static,
                    BackgroundMode::Mixed => Background::Dynamic,
                };
                let name = format!("{}-{}", serde_name(&shape), serde_name(&motion));
                ClassDef { id, name, shape, motion, background }
            })
            .collect()
    }
}

fn serde_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

/// Per-clip generation record, stored as `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub format: String,
    pub sample_id: String,
    pub class_id: usize,
    pub class_name: String,
    pub split: Split,
    pub background: Background,
    pub shape: ShapeKind,
    pub motion: MotionKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Half width and half height of the shape's bounding extent.
    pub half_extent: (f64, f64),
    /// Shape center per frame, `(x, y)` in pixels.
    pub centers: Vec<(f64, f64)>,
    pub boxes: Vec<[f64; 4]>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub meta: ClipMeta,
    pub sample: Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub class_id: usize,
    pub split: Split,
    pub background: Background,
}

/// `dataset.json`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub config: SynthConfig,
    pub classes: Vec<ClassDef>,
    pub clips: Vec<ClipEntry>,
}

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> Vec<String> {
        self.clips.iter().filter(|c| c.split == split).map(|c| c.id.clone()).collect()
    }

    pub fn class_of(&self, id: &str) -> Option<usize> {
        self.clips.iter().find(|c| c.id == id).map(|c| c.class_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub clips: Vec<SynthClip>,
}

impl Dataset {
    pub fn get(&self, id: &str) -> Option<&SynthClip> {
        self.clips.iter().find(|c| c.meta.sample_id == id)
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable seed for one element of a keyed stream.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

/// Folds `p` into `[lo, hi]` by mirror reflection.
pub fn reflect(p: f64, lo: f64, hi: f64) -> f64 {
    let len = hi - lo;
    if len <= 0.0 {
        return lo;
    }
    let q = (p - lo).rem_euclid(2.0 * len);
    lo + if q > len { 2.0 * len - q } else { q }
}

#[derive(Debug, Clone, Copy)]
struct ShapeGeom {
    kind: ShapeKind,
    /// Half extents of the bounding box.
    hw: f64,
    hh: f64,
}

impl ShapeGeom {
    fn sample(kind: ShapeKind, rng: &mut ChaCha8Rng) -> Self {
        match kind {
            ShapeKind::Rect => {
                let (w, h) = (rng.gen_range(5..=9) as f64, rng.gen_range(5..=9) as f64);
                Self { kind, hw: w / 2.0, hh: h / 2.0 }
            }
            ShapeKind::Disc => {
                let r = rng.gen_range(3.0..5.0);
                Self { kind, hw: r, hh: r }
            }
            ShapeKind::Triangle => Self { kind, hw: rng.gen_range(4.0..6.0), hh: rng.gen_range(3.5..5.0) },
        }
    }

    /// Hard-edge coverage test at pixel center `(x, y)` for a shape centered at `(cx, cy)`.
    fn contains(&self, cx: f64, cy: f64, x: f64, y: f64) -> bool {
        match self.kind {
            ShapeKind::Rect => {
                let (x0, y0) = rect_origin(cx, cy, self.hw, self.hh);
                x >= x0 && x < x0 + 2.0 * self.hw && y >= y0 && y < y0 + 2.0 * self.hh
            }
            ShapeKind::Disc => (x - cx).powi(2) + (y - cy).powi(2) <= self.hw * self.hw,
            ShapeKind::Triangle => {
                // Apex up; base at cy + hh.
                let dy = y - (cy - self.hh);
                if !(0.0..=2.0 * self.hh).contains(&dy) {
                    return false;
                }
                (x - cx).abs() <= self.hw * dy / (2.0 * self.hh)
            }
        }
    }
}

/// Integer-aligned top-left corner of a rectangle.
fn rect_origin(cx: f64, cy: f64, hw: f64, hh: f64) -> (f64, f64) {
    ((cx - hw).round(), (cy - hh).round())
}

fn trajectory(motion: MotionKind, frames: usize, lo: (f64, f64), hi: (f64, f64), rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let start = (rng.gen_range(lo.0..=hi.0), rng.gen_range(lo.1..=hi.1));
    let raw: Vec<(f64, f64)> = match motion {
        MotionKind::Linear => {
            let speed = rng.gen_range(1.5..2.5);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            (0..frames).map(|t| (start.0 + speed * angle.cos() * t as f64, start.1 + speed * angle.sin() * t as f64)).collect()
        }
        MotionKind::Circular => {
            let radius = rng.gen_range(4.0..7.0);
            let omega = rng.gen_range(0.6..0.9) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            (0..frames)
                .map(|t| {
                    let a = phase + omega * t as f64;
                    (start.0 + radius * (a.cos() - phase.cos()), start.1 + radius * (a.sin() - phase.sin()))
                })
                .collect()
        }
        MotionKind::Zigzag => {
            let vx = rng.gen_range(1.5..2.5) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let amp = rng.gen_range(2.5..4.0);
            (0..frames)
                .map(|t| {
                    let tri = if t % 2 == 0 { 0.0 } else { amp };
                    (start.0 + vx * t as f64, start.1 + tri)
                })
                .collect()
        }
    };
    raw.into_iter().map(|(x, y)| (reflect(x, lo.0, hi.0), reflect(y, lo.1, hi.1))).collect()
}

struct Wave {
    k: (f64, f64),
    phase: f64,
    amp: [f64; 3],
}

/// Sum of plane waves, optionally translating over time.
struct Texture {
    waves: Vec<Wave>,
    base: [f64; 3],
    velocity: (f64, f64),
}

impl Texture {
    fn sample(dynamic: bool, rng: &mut ChaCha8Rng) -> Self {
        let tau = std::f64::consts::TAU;
        let waves = (0..3)
            .map(|_| {
                let k = tau / rng.gen_range(6.0..14.0);
                let angle = rng.gen_range(0.0..tau);
                Wave {
                    k: (k * angle.cos(), k * angle.sin()),
                    phase: rng.gen_range(0.0..tau),
                    amp: [rng.gen_range(0.0..0.08), rng.gen_range(0.0..0.08), rng.gen_range(0.0..0.08)],
                }
            })
            .collect();
        let base = [rng.gen_range(0.25..0.45), rng.gen_range(0.25..0.45), rng.gen_range(0.25..0.45)];
        let velocity = if dynamic {
            let speed = rng.gen_range(1.0..2.0);
            let a = rng.gen_range(0.0..tau);
            (speed * a.cos(), speed * a.sin())
        } else {
            (0.0, 0.0)
        };
        Self { waves, base, velocity }
    }

    fn value(&self, t: usize, x: f64, y: f64, ch: usize) -> f64 {
        let (sx, sy) = (x - self.velocity.0 * t as f64, y - self.velocity.1 * t as f64);
        self.base[ch] + self.waves.iter().map(|w| w.amp[ch] * (w.k.0 * sx + w.k.1 * sy + w.phase).sin()).sum::<f64>()
    }
}

/// Renders one clip deterministically from `seed`.
pub fn render_clip(cfg: &SynthConfig, class: &ClassDef, split: Split, index: usize, seed: u64) -> Result<SynthClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (f, h, w) = (cfg.frames, cfg.height, cfg.width);
    let geom = ShapeGeom::sample(class.shape, &mut rng);
    let lo = (geom.hw + 1.0, geom.hh + 1.0);
    let hi = (w as f64 - geom.hw - 1.0, h as f64 - geom.hh - 1.0);
    let centers = trajectory(class.motion, f, lo, hi, &mut rng);
    let color = [rng.gen_range(0.7..1.0), rng.gen_range(0.7..1.0), rng.gen_range(0.7..1.0)];
    let texture = Texture::sample(class.background == Background::Dynamic, &mut rng);
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut data = Vec::with_capacity(f * h * w * 3);
    let mut masks = Vec::with_capacity(f);
    for (t, &(cx, cy)) in centers.iter().enumerate() {
        let mask = Mask::from_fn(h, w, |r, c| geom.contains(cx, cy, c as f64 + 0.5, r as f64 + 0.5));
        for r in 0..h {
            for c in 0..w {
                let inside = mask.get(r, c);
                for (ch, &fg) in color.iter().enumerate() {
                    let clean = if inside { fg } else { texture.value(t, c as f64 + 0.5, r as f64 + 0.5, ch) };
                    let n = if cfg.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    data.push((clean + n).clamp(0.0, 1.0) as f32);
                }
            }
        }
        masks.push(mask);
    }
    let clip = VideoClip::new(f, h, w, 3, data)?;
    let boxes = masks.iter().map(|m| mask_to_box(m).map(|b| [b.x0, b.y0, b.x1, b.y1])).collect::<Result<Vec<_>>>()?;
    let sample_id = clip_id(split, class.id, index);
    let annotations: Vec<FrameAnnotation> = masks.into_iter().map(|m| Some(Region::Mask(m))).collect();
    let meta = ClipMeta {
        format: CLIP_FORMAT.into(),
        sample_id: sample_id.clone(),
        class_id: class.id,
        class_name: class.name.clone(),
        split,
        background: class.background,
        shape: class.shape,
        motion: class.motion,
        frames: f,
        height: h,
        width: w,
        channels: 3,
        half_extent: (geom.hw, geom.hh),
        centers,
        boxes,
        seed,
    };
    let sample = Sample { clip, label: Some(class.id), annotations: Some(annotations), sample_id };
    Ok(SynthClip { meta, sample })
}

pub fn clip_id(split: Split, class: usize, index: usize) -> String {
    format!("{}-c{class:02}-{index:04}", split.as_str())
}

/// Generates the whole benchmark in memory.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let classes = cfg.classes();
    let mut clips = Vec::new();
    for (split, per_class) in [(Split::Train, cfg.train_per_class), (Split::Val, cfg.val_per_class), (Split::Test, cfg.test_per_class)] {
        for class in &classes {
            for i in 0..per_class {
                let seed = derive_seed(cfg.seed, &[split as u64, class.id as u64, i as u64]);
                clips.push(render_clip(cfg, class, split, i, seed)?);
            }
        }
    }
    let entries = clips
        .iter()
        .map(|c| ClipEntry { id: c.meta.sample_id.clone(), class_id: c.meta.class_id, split: c.meta.split, background: c.meta.background })
        .collect();
    let manifest = DatasetManifest { format: DATASET_FORMAT.into(), config: cfg.clone(), classes, clips: entries };
    Ok(Dataset { manifest, clips })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn check_format(path: &Path, found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::InvalidInput(format!("{}: format `{found}`, expected `{expected}`", path.display())));
    }
    Ok(())
}

/// Writes `dataset.json` and one directory per clip under `dir/clips`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let clips_dir = dir.join("clips");
    fs::create_dir_all(&clips_dir).map_err(|e| Error::io(&clips_dir, e))?;
    for c in &ds.clips {
        let d = clips_dir.join(&c.meta.sample_id);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        let frames: Vec<u8> = c.sample.clip.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(d.join("frames.bin"), frames).map_err(|e| Error::io(d.join("frames.bin"), e))?;
        let masks = c.sample.gt_masks()?;
        let bytes: Vec<u8> = masks.iter().flat_map(|m| m.bits().iter().map(|&b| b as u8)).collect();
        fs::write(d.join("masks.bin"), bytes).map_err(|e| Error::io(d.join("masks.bin"), e))?;
        write_json(&d.join("meta.json"), &c.meta)?;
    }
    write_json(&dir.join("dataset.json"), &ds.manifest)
}

fn read_clip(dir: &Path, id: &str) -> Result<SynthClip> {
    let d = dir.join("clips").join(id);
    let meta_path = d.join("meta.json");
    let meta: ClipMeta = read_json(&meta_path)?;
    check_format(&meta_path, &meta.format, CLIP_FORMAT)?;
    let (f, h, w, c) = (meta.frames, meta.height, meta.width, meta.channels);
    let raw = fs::read(d.join("frames.bin")).map_err(|e| Error::io(d.join("frames.bin"), e))?;
    if raw.len() != f * h * w * c * 4 {
        return Err(Error::InvalidInput(format!("{}: truncated frames.bin", d.display())));
    }
    let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let clip = VideoClip::new(f, h, w, c, data)?;
    let bits = fs::read(d.join("masks.bin")).map_err(|e| Error::io(d.join("masks.bin"), e))?;
    if bits.len() != f * h * w {
        return Err(Error::InvalidInput(format!("{}: truncated masks.bin", d.display())));
    }
    let annotations = bits
        .chunks_exact(h * w)
        .map(|fr| {
            let m = Mask::new(h, w, fr.iter().map(|&b| b != 0).collect())?;
            Ok((m.count() > 0).then_some(Region::Mask(m)))
        })
        .collect::<Result<Vec<_>>>()?;
    let sample = Sample { clip, label: Some(meta.class_id), annotations: Some(annotations), sample_id: meta.sample_id.clone() };
    Ok(SynthClip { meta, sample })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("dataset.json");
    let manifest: DatasetManifest = read_json(&path)?;
    check_format(&path, &manifest.format, DATASET_FORMAT)?;
    let clips = manifest.clips.iter().map(|e| read_clip(dir, &e.id)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, clips })
}

/// `splits.json`: the labeled/unlabeled/validation/test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format: String,
    pub percent_labeled: f64,
    pub seed: u64,
    pub labeled: Vec<String>,
    pub unlabeled: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = read_json(path)?;
        check_format(path, &m.format, SPLIT_FORMAT)?;
        Ok(m)
    }
}

/// Class-stratified labeled subset of the training clips.
///
/// The labeled total is `round(N·percent/100)`, spread over classes by
/// largest remainder; ties go to the lower class id.
pub fn split_labeled_unlabeled(manifest: &DatasetManifest, percent: f64, seed: u64) -> Result<SplitManifest> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::config("split.percent_labeled", format!("{percent} must lie in (0, 100]")));
    }
    let k = manifest.classes.len();
    let mut by_class: Vec<Vec<String>> = vec![Vec::new(); k];
    for c in manifest.clips.iter().filter(|c| c.split == Split::Train) {
        by_class[c.class_id].push(c.id.clone());
    }
    let n: usize = by_class.iter().map(Vec::len).sum();
    let total = ((n as f64) * percent / 100.0).round() as usize;
    let quotas: Vec<f64> = by_class.iter().map(|ids| ids.len() as f64 * total as f64 / n.max(1) as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    let mut left = total - counts.iter().sum::<usize>();
    for &c in order.iter().cycle().take(k * 2) {
        if left == 0 {
            break;
        }
        if counts[c] < by_class[c].len() {
            counts[c] += 1;
            left -= 1;
        }
    }
    if let Some(c) = (0..k).find(|&c| counts[c] == 0 && !by_class[c].is_empty()) {
        return Err(Error::config(
            "split.percent_labeled",
            format!("{percent}% leaves class {} ({}) with no labeled clips", c, manifest.classes[c].name),
        ));
    }
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for (c, ids) in by_class.iter().enumerate() {
        let mut ids = ids.clone();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[c as u64])));
        let (l, u) = ids.split_at(counts[c]);
        labeled.extend_from_slice(l);
        unlabeled.extend_from_slice(u);
    }
    labeled.sort();
    unlabeled.sort();
    Ok(SplitManifest {
        format: SPLIT_FORMAT.into(),
        percent_labeled: percent,
        seed,
        labeled,
        unlabeled,
        validation: manifest.ids(Split::Val),
        test: manifest.ids(Split::Test),
    })
}

impl SynthConfig {
    /// Short fingerprint used to key the dataset cache.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Resolves the dataset directory: an explicit path, else a per-config entry
/// in the cache named by `STABLE_TEACHER_CACHE`.
pub fn dataset_dir(explicit: Option<&Path>, cfg: &SynthConfig) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os("STABLE_TEACHER_CACHE").map(|p| PathBuf::from(p).join(format!("dataset-{}", cfg.hash()))))
}

/// Box of the generated mask at `frame`.
pub fn frame_box(meta: &ClipMeta, frame: usize) -> BBox {
    let b = meta.boxes[frame];
    BBox::new(b[0], b[1], b[2], b[3])
}
