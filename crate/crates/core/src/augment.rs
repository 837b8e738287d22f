//! Weak and strong views of a clip.
//!
//! Temporal selection happens first and is shared by both views. Spatially the
//! weak view is only flipped; the strong view is photometrically perturbed
//! and then receives the same geometric transform as the weak view, so teacher
//! and student maps stay pixel-aligned.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BBox, FrameAnnotation, Mask, Region, Sample, VideoClip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemporalStrategy {
    /// Contiguous window at a uniform random start.
    Contiguous,
    /// Every second frame from a random start, clamped to the last frame.
    Strided,
    /// Centered window; boundary frames repeat when the clip is too short.
    BoundaryRepeat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalSelection {
    pub strategy: TemporalStrategy,
    pub indices: Vec<usize>,
}

/// Crop window in source pixels, resampled back to full size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GeomTransform {
    pub hflip: bool,
    pub crop: Option<CropWindow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub p: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugConfig {
    pub clip_len: usize,
    pub hflip_p: f64,
    pub contrast: Jitter,
    pub hue: Jitter,
    pub brightness: Jitter,
    pub saturation: Jitter,
    pub grayscale_p: f64,
    pub blur_p: f64,
    pub blur_sigma: (f64, f64),
    pub crop: bool,
    /// Smallest crop side as a fraction of the frame side.
    pub crop_min_scale: f64,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            clip_len: 8,
            hflip_p: 0.5,
            contrast: Jitter { p: 0.7, low: 0.6, high: 1.4 },
            hue: Jitter { p: 0.7, low: -0.1, high: 0.1 },
            brightness: Jitter { p: 0.7, low: 0.6, high: 1.4 },
            saturation: Jitter { p: 0.7, low: 0.6, high: 1.4 },
            grayscale_p: 0.6,
            blur_p: 0.5,
            blur_sigma: (0.1, 2.0),
            crop: false,
            crop_min_scale: 0.8,
        }
    }
}

impl AugConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_len < 2 {
            return Err(Error::config("clip_len", "need at least 2 frames"));
        }
        let probs = [
            ("aug.hflip_p", self.hflip_p),
            ("aug.strong.contrast_p", self.contrast.p),
            ("aug.strong.hue_p", self.hue.p),
            ("aug.strong.brightness_p", self.brightness.p),
            ("aug.strong.saturation_p", self.saturation.p),
            ("aug.strong.grayscale_p", self.grayscale_p),
            ("aug.strong.blur_p", self.blur_p),
        ];
        for (key, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(key, format!("probability {p} outside [0, 1]")));
            }
        }
        if !(self.crop_min_scale > 0.0 && self.crop_min_scale <= 1.0) {
            return Err(Error::config("aug.crop_min_scale", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

pub fn sample_temporal<R: Rng + ?Sized>(frames: usize, len: usize, rng: &mut R) -> Result<TemporalSelection> {
    if frames < 2 {
        return Err(Error::InvalidInput(format!("temporal sampling needs at least 2 source frames, got {frames}")));
    }
    if len < 2 {
        return Err(Error::InvalidInput(format!("temporal sampling needs at least 2 output frames, got {len}")));
    }
    let strategy = match rng.gen_range(0..3) {
        0 => TemporalStrategy::Contiguous,
        1 => TemporalStrategy::Strided,
        _ => TemporalStrategy::BoundaryRepeat,
    };
    let start = match strategy {
        TemporalStrategy::Contiguous if len <= frames => rng.gen_range(0..=frames - len),
        TemporalStrategy::Strided if len <= frames => rng.gen_range(0..=frames.saturating_sub(2 * (len - 1) + 1)),
        _ => 0,
    };
    Ok(select_frames(strategy, frames, len, start))
}

/// Indices for `strategy` with an explicit start; strategies that need more
/// frames than exist fall back to boundary repetition.
pub fn select_frames(strategy: TemporalStrategy, frames: usize, len: usize, start: usize) -> TemporalSelection {
    let last = frames as isize - 1;
    let clamp = |i: isize| i.clamp(0, last) as usize;
    let (strategy, indices) = match strategy {
        TemporalStrategy::Contiguous if len <= frames => (strategy, (0..len).map(|i| clamp((start + i) as isize)).collect()),
        TemporalStrategy::Strided if len <= frames => (strategy, (0..len).map(|i| clamp((start + 2 * i) as isize)).collect()),
        _ => {
            let offset = (frames as isize - len as isize).div_euclid(2);
            (TemporalStrategy::BoundaryRepeat, (0..len).map(|i| clamp(offset + i as isize)).collect())
        }
    };
    TemporalSelection { strategy, indices }
}

pub fn sample_geom<R: Rng + ?Sized>(cfg: &AugConfig, height: usize, width: usize, rng: &mut R) -> GeomTransform {
    let hflip = rng.gen::<f64>() < cfg.hflip_p;
    let crop = cfg.crop.then(|| {
        let s = rng.gen_range(cfg.crop_min_scale..=1.0);
        let ch = ((height as f64 * s).round() as usize).clamp(1, height);
        let cw = ((width as f64 * s).round() as usize).clamp(1, width);
        CropWindow { top: rng.gen_range(0..=height - ch), left: rng.gen_range(0..=width - cw), height: ch, width: cw }
    });
    GeomTransform { hflip, crop }
}

/// Frames of `clip` at `sel.indices`.
pub fn apply_temporal(clip: &VideoClip, sel: &TemporalSelection) -> Result<VideoClip> {
    let [f, h, w, c] = clip.dims();
    if let Some(&bad) = sel.indices.iter().find(|&&i| i >= f) {
        return Err(Error::InvalidInput(format!("frame index {bad} outside clip of {f} frames")));
    }
    let data = sel.indices.iter().flat_map(|&i| clip.frame(i).iter().copied()).collect();
    let mut out = VideoClip::from_raw(sel.indices.len(), h, w, c, data)?;
    out.frame_rate_hint = clip.frame_rate_hint;
    Ok(out)
}

fn crop_source(win: &CropWindow, size: usize, i: usize, vertical: bool) -> usize {
    let (off, len) = if vertical { (win.top, win.height) } else { (win.left, win.width) };
    off + ((2 * i + 1) * len) / (2 * size)
}

fn apply_geom(clip: &VideoClip, geom: &GeomTransform) -> VideoClip {
    let [f, h, w, c] = clip.dims();
    if !geom.hflip && geom.crop.is_none() {
        return clip.clone();
    }
    let src = clip.data();
    let mut data = vec![0.0f32; src.len()];
    for t in 0..f {
        for r in 0..h {
            let sr = geom.crop.map_or(r, |win| crop_source(&win, h, r, true));
            for col in 0..w {
                let dc = if geom.hflip { w - 1 - col } else { col };
                let sc = geom.crop.map_or(col, |win| crop_source(&win, w, col, false));
                let from = clip.index(t, sr, sc, 0);
                let to = clip.index(t, r, dc, 0);
                data[to..to + c].copy_from_slice(&src[from..from + c]);
            }
        }
    }
    let mut out = VideoClip::from_raw(f, h, w, c, data).expect("same shape");
    out.frame_rate_hint = clip.frame_rate_hint;
    out
}

/// Weak view: geometry only.
pub fn apply_weak(clip: &VideoClip, geom: &GeomTransform) -> VideoClip {
    apply_geom(clip, geom)
}

/// Photometric draws for one strong view; `None` means the op does not fire.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StrongParams {
    pub contrast: Option<f64>,
    pub hue: Option<f64>,
    pub brightness: Option<f64>,
    pub saturation: Option<f64>,
    pub grayscale: bool,
    pub blur_sigma: Option<f64>,
}

impl StrongParams {
    pub fn sample<R: Rng + ?Sized>(cfg: &AugConfig, rng: &mut R) -> Self {
        let mut jitter = |j: &Jitter| {
            let fire = rng.gen::<f64>() < j.p;
            let v = rng.gen_range(j.low..j.high);
            fire.then_some(v)
        };
        let contrast = jitter(&cfg.contrast);
        let hue = jitter(&cfg.hue);
        let brightness = jitter(&cfg.brightness);
        let saturation = jitter(&cfg.saturation);
        let grayscale = rng.gen::<f64>() < cfg.grayscale_p;
        let blur = rng.gen::<f64>() < cfg.blur_p;
        let sigma = rng.gen_range(cfg.blur_sigma.0..=cfg.blur_sigma.1);
        Self { contrast, hue, brightness, saturation, grayscale, blur_sigma: blur.then_some(sigma) }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }
}

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

fn luma(px: &[f32]) -> f32 {
    LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2]
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max > 0.0 { d / max } else { 0.0 };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn gaussian_blur(clip: &mut VideoClip, sigma: f64) {
    let [f, h, w, c] = clip.dims();
    let k = [(-1.0 / (2.0 * sigma * sigma)).exp(), 1.0, (-1.0 / (2.0 * sigma * sigma)).exp()];
    let norm: f64 = k.iter().sum();
    let k = k.map(|v| (v / norm) as f32);
    let reflect = |i: isize, n: usize| -> usize {
        if n == 1 {
            0
        } else if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * n - 2 - i as usize
        } else {
            i as usize
        }
    };
    let src = clip.data().to_vec();
    let mut tmp = vec![0.0f32; src.len()];
    let idx = |t: usize, r: usize, col: usize, ch: usize| ((t * h + r) * w + col) * c + ch;
    for t in 0..f {
        for r in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    tmp[idx(t, r, col, ch)] = (0..3)
                        .map(|j| k[j] * src[idx(t, r, reflect(col as isize + j as isize - 1, w), ch)])
                        .sum();
                }
            }
        }
    }
    let out = clip.data_mut();
    for t in 0..f {
        for r in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    out[idx(t, r, col, ch)] = (0..3)
                        .map(|j| k[j] * tmp[idx(t, reflect(r as isize + j as isize - 1, h), col, ch)])
                        .sum();
                }
            }
        }
    }
}

/// Applies photometric draws in fixed order, clamping after each.
pub fn apply_photometric(clip: &VideoClip, params: &StrongParams) -> VideoClip {
    let mut out = clip.clone();
    let [f, h, w, c] = clip.dims();
    let plane = h * w * c;
    let rgb = c == 3;
    let clamp = |v: f32| v.clamp(0.0, 1.0);
    if let Some(factor) = params.contrast {
        let fac = factor as f32;
        for t in 0..f {
            let fr = &mut out.data_mut()[t * plane..(t + 1) * plane];
            let mean = if rgb {
                fr.chunks(3).map(luma).sum::<f32>() / (h * w) as f32
            } else {
                fr.iter().sum::<f32>() / (h * w) as f32
            };
            fr.iter_mut().for_each(|v| *v = clamp(fac * *v + (1.0 - fac) * mean));
        }
    }
    if let (Some(shift), true) = (params.hue, rgb) {
        for px in out.data_mut().chunks_mut(3) {
            let (hh, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
            let (r, g, b) = hsv_to_rgb(hh + shift as f32, s, v);
            px.copy_from_slice(&[clamp(r), clamp(g), clamp(b)]);
        }
    }
    if let Some(factor) = params.brightness {
        out.data_mut().iter_mut().for_each(|v| *v = clamp(*v * factor as f32));
    }
    if let (Some(factor), true) = (params.saturation, rgb) {
        let fac = factor as f32;
        for px in out.data_mut().chunks_mut(3) {
            let g = luma(px);
            px.iter_mut().for_each(|v| *v = clamp(fac * *v + (1.0 - fac) * g));
        }
    }
    if params.grayscale && rgb {
        for px in out.data_mut().chunks_mut(3) {
            let g = clamp(luma(px));
            px.fill(g);
        }
    }
    if let Some(sigma) = params.blur_sigma {
        gaussian_blur(&mut out, sigma);
    }
    out.data_mut().iter_mut().for_each(|v| *v = clamp(*v));
    out
}

/// Strong view: photometric perturbation, then the shared geometry.
pub fn apply_strong<R: Rng + ?Sized>(clip: &VideoClip, geom: &GeomTransform, cfg: &AugConfig, rng: &mut R) -> VideoClip {
    let params = StrongParams::sample(cfg, rng);
    apply_geom(&apply_photometric(clip, &params), geom)
}

fn transform_region(region: &Region, geom: &GeomTransform, height: usize, width: usize) -> FrameAnnotation {
    let cropped = match (geom.crop, region) {
        (None, r) => r.clone(),
        (Some(win), Region::Mask(m)) => {
            let out = Mask::from_fn(height, width, |r, c| {
                m.get(crop_source(&win, height, r, true), crop_source(&win, width, c, false))
            });
            if out.count() == 0 {
                return None;
            }
            Region::Mask(out)
        }
        (Some(win), Region::Box(b)) => {
            let sx = width as f64 / win.width as f64;
            let sy = height as f64 / win.height as f64;
            let bx = BBox::new(
                ((b.x0 - win.left as f64) * sx).clamp(0.0, width as f64),
                ((b.y0 - win.top as f64) * sy).clamp(0.0, height as f64),
                ((b.x1 - win.left as f64) * sx).clamp(0.0, width as f64),
                ((b.y1 - win.top as f64) * sy).clamp(0.0, height as f64),
            );
            if bx.area() <= 0.0 {
                return None;
            }
            Region::Box(bx)
        }
    };
    Some(if geom.hflip { cropped.flip_horizontal(width) } else { cropped })
}

/// Annotations following the same temporal selection and geometry as the clip.
pub fn transform_annotations(
    anns: &[FrameAnnotation],
    sel: &TemporalSelection,
    geom: &GeomTransform,
    height: usize,
    width: usize,
) -> Result<Vec<FrameAnnotation>> {
    sel.indices
        .iter()
        .map(|&i| {
            let a = anns
                .get(i)
                .ok_or_else(|| Error::InvalidInput(format!("annotation for frame {i} missing")))?;
            Ok(a.as_ref().and_then(|r| transform_region(r, geom, height, width)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub weak: VideoClip,
    pub strong: VideoClip,
    pub geom: GeomTransform,
    pub temporal: TemporalSelection,
    pub annotations_t: Option<Vec<FrameAnnotation>>,
}

pub fn make_view_pair<R: Rng + ?Sized>(sample: &Sample, cfg: &AugConfig, rng: &mut R) -> Result<ViewPair> {
    let clip = &sample.clip;
    let temporal = sample_temporal(clip.frames(), cfg.clip_len, rng)?;
    let geom = sample_geom(cfg, clip.height(), clip.width(), rng);
    let selected = apply_temporal(clip, &temporal)?;
    let weak = apply_weak(&selected, &geom);
    let strong = apply_strong(&selected, &geom, cfg, rng);
    let annotations_t = sample
        .annotations
        .as_ref()
        .map(|a| transform_annotations(a, &temporal, &geom, clip.height(), clip.width()))
        .transpose()?;
    Ok(ViewPair { weak, strong, geom, temporal, annotations_t })
}
