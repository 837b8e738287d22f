//! Shared data model: clips, localization maps, annotations and model outputs.
//!
//! Pixel convention: boxes are half-open `[x0, x1) × [y0, y1)` in pixel units and
//! pixel `(r, c)` has its center at `(c + 0.5, r + 0.5)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frames stored `F×H×W×C`, values normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    pub frame_rate_hint: Option<f64>,
}

impl VideoClip {
    /// Builds a clip and checks every invariant.
    pub fn new(frames: usize, height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let clip = Self::from_raw(frames, height, width, channels, data)?;
        if let Some(v) = clip.violations().into_iter().next() {
            return Err(Error::InvalidInput(v.to_string()));
        }
        Ok(clip)
    }

    /// Builds a clip checking only that the buffer length matches the shape.
    pub fn from_raw(frames: usize, height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let expected = frames * height * width * channels;
        if data.len() != expected {
            return Err(Error::shape(&[frames, height, width, channels], &[data.len()]));
        }
        Ok(Self { frames, height, width, channels, data, frame_rate_hint: None })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn index(&self, f: usize, r: usize, c: usize, ch: usize) -> usize {
        ((f * self.height + r) * self.width + c) * self.channels + ch
    }

    pub fn get(&self, f: usize, r: usize, c: usize, ch: usize) -> f32 {
        self.data[self.index(f, r, c, ch)]
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        let n = self.height * self.width * self.channels;
        &self.data[f * n..(f + 1) * n]
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.frames < 2 {
            out.push(Violation::TooFewFrames { frames: self.frames });
        }
        if self.channels != 1 && self.channels != 3 {
            out.push(Violation::BadChannels { channels: self.channels });
        }
        if let Some((i, &v)) = self.data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            out.push(Violation::NonFinite { index: i, value: v });
        }
        if let Some((i, &v)) = self.data.iter().enumerate().find(|(_, v)| v.is_finite() && !(0.0..=1.0).contains(*v)) {
            out.push(Violation::ValueOutOfRange { index: i, value: v });
        }
        out
    }
}

/// Per-frame soft foreground map, `F×H×W` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationMap {
    frames: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl LocalizationMap {
    pub fn new(frames: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != frames * height * width {
            return Err(Error::shape(&[frames, height, width], &[values.len()]));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("localization value {v} outside [0, 1]")));
        }
        Ok(Self { frames, height, width, values })
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        Self { frames, height, width, values: vec![0.0; frames * height * width] }
    }

    pub fn from_fn(frames: usize, height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Result<Self> {
        let mut values = Vec::with_capacity(frames * height * width);
        for t in 0..frames {
            for r in 0..height {
                for c in 0..width {
                    values.push(f(t, r, c));
                }
            }
        }
        Self::new(frames, height, width, values)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.frames, self.height, self.width]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, f: usize, r: usize, c: usize) -> f32 {
        self.values[(f * self.height + r) * self.width + c]
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.values[f * n..(f + 1) * n]
    }
}

/// Normalized class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    probs: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput("class probabilities must be finite and non-negative".into()));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("class probabilities sum to {s}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Softmax of finite logits.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("logits must be finite and non-empty".into()));
        }
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        Ok(Self { probs: exps.into_iter().map(|e| e / s).collect() })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = (0, self.probs[0]);
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > best.1 {
                best = (i, p);
            }
        }
        best
    }
}

/// Axis-aligned half-open box in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn intersection(&self, other: &Self) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        w * h
    }

    pub fn in_bounds(&self, height: usize, width: usize) -> bool {
        self.x0 >= 0.0 && self.y0 >= 0.0 && self.x1 <= width as f64 && self.y1 <= height as f64
    }

    pub fn flip_horizontal(&self, width: usize) -> Self {
        let w = width as f64;
        Self { x0: w - self.x1, y0: self.y0, x1: w - self.x0, y1: self.y1 }
    }
}

/// Binary `H×W` mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(&[height, width], &[bits.len()]));
        }
        Ok(Self { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![false; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.width + c] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn intersection(&self, other: &Self) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    pub fn union(&self, other: &Self) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a || **b).count()
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| self.get(r, self.width - 1 - c))
    }

    /// Run-length encoding, row-major, alternating runs starting with background.
    pub fn to_rle(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_rle(height: usize, width: usize, runs: &[u32]) -> Result<Self> {
        let mut bits = Vec::with_capacity(height * width);
        let mut current = false;
        for &r in runs {
            bits.extend(std::iter::repeat_n(current, r as usize));
            current = !current;
        }
        if bits.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "run-length mask covers {} pixels, expected {}",
                bits.len(),
                height * width
            )));
        }
        Ok(Self { height, width, bits })
    }
}

/// Region of one annotated frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Box(BBox),
    Mask(Mask),
}

/// `None` means the actor is absent from the frame.
pub type FrameAnnotation = Option<Region>;

impl Region {
    pub fn flip_horizontal(&self, width: usize) -> Self {
        match self {
            Region::Box(b) => Region::Box(b.flip_horizontal(width)),
            Region::Mask(m) => Region::Mask(m.flip_horizontal()),
        }
    }

    /// Pixel mask of the region in an `height×width` frame.
    pub fn to_mask(&self, height: usize, width: usize) -> Result<Mask> {
        match self {
            Region::Box(b) => box_to_mask(b, height, width),
            Region::Mask(m) => {
                if m.height != height || m.width != width {
                    return Err(Error::shape(&[height, width], &[m.height, m.width]));
                }
                Ok(m.clone())
            }
        }
    }

    pub fn to_box(&self) -> Result<BBox> {
        match self {
            Region::Box(b) => Ok(*b),
            Region::Mask(m) => mask_to_box(m),
        }
    }
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub clip: VideoClip,
    pub label: Option<usize>,
    pub annotations: Option<Vec<FrameAnnotation>>,
    pub sample_id: String,
}

impl Sample {
    pub fn is_labeled(&self) -> bool {
        self.label.is_some() && self.annotations.is_some()
    }

    /// Drops label and annotations, as done for the unlabeled stream.
    pub fn unlabeled(mut self) -> Self {
        self.label = None;
        self.annotations = None;
        self
    }

    /// Per-frame binary ground-truth masks; absent frames are empty.
    pub fn gt_masks(&self) -> Result<Vec<Mask>> {
        let anns = self
            .annotations
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("sample {} has no annotations", self.sample_id)))?;
        let (h, w) = (self.clip.height(), self.clip.width());
        anns.iter()
            .map(|a| match a {
                Some(r) => r.to_mask(h, w),
                None => Ok(Mask::empty(h, w)),
            })
            .collect()
    }
}

/// Detector output for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub class_logits: Vec<f64>,
    pub loc_map: LocalizationMap,
}

impl ModelOutput {
    pub fn class_distribution(&self) -> Result<ClassDistribution> {
        ClassDistribution::from_logits(&self.class_logits)
    }
}

/// Rasterizes a box: a pixel is set iff its center lies inside the box.
pub fn box_to_mask(b: &BBox, height: usize, width: usize) -> Result<Mask> {
    if !(b.x1 > b.x0 && b.y1 > b.y0) {
        return Err(Error::DegenerateBox { x0: b.x0, y0: b.y0, x1: b.x1, y1: b.y1 });
    }
    if !b.in_bounds(height, width) {
        return Err(Error::BoxOutOfBounds { x0: b.x0, y0: b.y0, x1: b.x1, y1: b.y1, width, height });
    }
    Ok(Mask::from_fn(height, width, |r, c| {
        let (cx, cy) = (c as f64 + 0.5, r as f64 + 0.5);
        cx >= b.x0 && cx < b.x1 && cy >= b.y0 && cy < b.y1
    }))
}

/// Tightest box enclosing every foreground pixel.
pub fn mask_to_box(m: &Mask) -> Result<BBox> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for r in 0..m.height {
        for c in 0..m.width {
            if m.get(r, c) {
                bounds = Some(match bounds {
                    None => (c, r, c, r),
                    Some((c0, r0, c1, r1)) => (c0.min(c), r0.min(r), c1.max(c), r1.max(r)),
                });
            }
        }
    }
    let (c0, r0, c1, r1) = bounds.ok_or(Error::EmptyMask)?;
    Ok(BBox::new(c0 as f64, r0 as f64, (c1 + 1) as f64, (r1 + 1) as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooFewFrames { frames: usize },
    BadChannels { channels: usize },
    NonFinite { index: usize, value: f32 },
    ValueOutOfRange { index: usize, value: f32 },
    LabelOutOfRange { label: usize, num_classes: usize },
    LabeledMissingAnnotations,
    UnlabeledCarriesAnnotations,
    AnnotationCount { expected: usize, actual: usize },
    AnnotationOutOfBounds { frame: usize },
    DegenerateAnnotation { frame: usize },
    EmptyMaskAnnotation { frame: usize },
    MaskShape { frame: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewFrames { frames } => write!(f, "clip has {frames} frames, need at least 2"),
            Violation::BadChannels { channels } => write!(f, "clip has {channels} channels, expected 1 or 3"),
            Violation::NonFinite { index, value } => write!(f, "non-finite value {value} at {index}"),
            Violation::ValueOutOfRange { index, value } => write!(f, "value out of range: {value} at {index}"),
            Violation::LabelOutOfRange { label, num_classes } => {
                write!(f, "label {label} outside [0, {num_classes})")
            }
            Violation::LabeledMissingAnnotations => write!(f, "labeled sample missing annotations"),
            Violation::UnlabeledCarriesAnnotations => write!(f, "unlabeled carries annotations"),
            Violation::AnnotationCount { expected, actual } => {
                write!(f, "expected {expected} frame annotations, found {actual}")
            }
            Violation::AnnotationOutOfBounds { frame } => write!(f, "annotation box outside frame {frame}"),
            Violation::DegenerateAnnotation { frame } => write!(f, "zero-area annotation box at frame {frame}"),
            Violation::EmptyMaskAnnotation { frame } => write!(f, "empty annotation mask at frame {frame}"),
            Violation::MaskShape { frame } => write!(f, "annotation mask shape differs from clip at frame {frame}"),
        }
    }
}

/// Every invariant violation of `sample`; empty when well formed.
pub fn validate_sample(sample: &Sample, num_classes: Option<usize>) -> Vec<Violation> {
    let mut out = sample.clip.violations();
    match (&sample.label, &sample.annotations) {
        (Some(_), None) => out.push(Violation::LabeledMissingAnnotations),
        (None, Some(_)) => out.push(Violation::UnlabeledCarriesAnnotations),
        _ => {}
    }
    if let (Some(label), Some(k)) = (sample.label, num_classes) {
        if label >= k {
            out.push(Violation::LabelOutOfRange { label, num_classes: k });
        }
    }
    if let Some(anns) = &sample.annotations {
        let (f, h, w) = (sample.clip.frames(), sample.clip.height(), sample.clip.width());
        if anns.len() != f {
            out.push(Violation::AnnotationCount { expected: f, actual: anns.len() });
        }
        for (i, a) in anns.iter().enumerate() {
            match a {
                Some(Region::Box(b)) => {
                    if !(b.x1 > b.x0 && b.y1 > b.y0) {
                        out.push(Violation::DegenerateAnnotation { frame: i });
                    } else if !b.in_bounds(h, w) {
                        out.push(Violation::AnnotationOutOfBounds { frame: i });
                    }
                }
                Some(Region::Mask(m)) => {
                    if m.height() != h || m.width() != w {
                        out.push(Violation::MaskShape { frame: i });
                    } else if m.count() == 0 {
                        out.push(Violation::EmptyMaskAnnotation { frame: i });
                    }
                }
                None => {}
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gray_clip(frames: usize, h: usize, w: usize, v: f32) -> VideoClip {
        VideoClip::new(frames, h, w, 3, vec![v; frames * h * w * 3]).unwrap()
    }

    #[test]
    fn box_to_mask_area() {
        let m = box_to_mask(&BBox::new(0.0, 0.0, 4.0, 4.0), 8, 8).unwrap();
        assert_eq!(m.count(), 16);
        let full = box_to_mask(&BBox::new(0.0, 0.0, 8.0, 8.0), 8, 8).unwrap();
        assert!(full.bits().iter().all(|&b| b));
    }

    #[test]
    fn box_to_mask_rejects_degenerate_and_outside() {
        assert!(matches!(box_to_mask(&BBox::new(2.0, 2.0, 2.0, 5.0), 8, 8), Err(Error::DegenerateBox { .. })));
        assert!(matches!(box_to_mask(&BBox::new(2.0, 2.0, 9.0, 5.0), 8, 8), Err(Error::BoxOutOfBounds { .. })));
    }

    #[test]
    fn box_to_mask_matches_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let (h, w) = (rng.gen_range(4..20), rng.gen_range(4..20));
            let x0 = rng.gen_range(0.0..(w as f64 - 1.0));
            let y0 = rng.gen_range(0.0..(h as f64 - 1.0));
            let x1 = rng.gen_range(x0 + 0.01..=w as f64);
            let y1 = rng.gen_range(y0 + 0.01..=h as f64);
            let b = BBox::new(x0, y0, x1, y1);
            let m = box_to_mask(&b, h, w).unwrap();
            let mut count = 0;
            for r in 0..h {
                for c in 0..w {
                    let (cx, cy) = (c as f64 + 0.5, r as f64 + 0.5);
                    if x0 <= cx && cx < x1 && y0 <= cy && cy < y1 {
                        count += 1;
                    }
                }
            }
            assert_eq!(m.count(), count);
        }
    }

    #[test]
    fn mask_to_box_cases() {
        let mut m = Mask::empty(8, 8);
        m.set(3, 5, true);
        assert_eq!(mask_to_box(&m).unwrap(), BBox::new(5.0, 3.0, 6.0, 4.0));
        let full = Mask::from_fn(8, 8, |_, _| true);
        assert_eq!(mask_to_box(&full).unwrap(), BBox::new(0.0, 0.0, 8.0, 8.0));
        assert!(matches!(mask_to_box(&Mask::empty(4, 4)), Err(Error::EmptyMask)));
    }

    #[test]
    fn mask_to_box_matches_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (h, w) = (rng.gen_range(1..16), rng.gen_range(1..16));
            let m = Mask::from_fn(h, w, |_, _| rng.gen_bool(0.1));
            let pts: Vec<(usize, usize)> = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).filter(|&(r, c)| m.get(r, c)).collect();
            match mask_to_box(&m) {
                Err(Error::EmptyMask) => assert!(pts.is_empty()),
                Ok(b) => {
                    let c0 = pts.iter().map(|p| p.1).min().unwrap();
                    let c1 = pts.iter().map(|p| p.1).max().unwrap();
                    let r0 = pts.iter().map(|p| p.0).min().unwrap();
                    let r1 = pts.iter().map(|p| p.0).max().unwrap();
                    assert_eq!(b, BBox::new(c0 as f64, r0 as f64, c1 as f64 + 1.0, r1 as f64 + 1.0));
                }
                Err(e) => panic!("{e}"),
            }
        }
    }

    proptest! {
        #[test]
        fn integer_box_roundtrip(h in 1usize..24, w in 1usize..24, a in 0usize..24, b in 0usize..24, c in 1usize..24, d in 1usize..24) {
            let x0 = a % w;
            let y0 = b % h;
            let x1 = x0 + 1 + (c % (w - x0));
            let y1 = y0 + 1 + (d % (h - y0));
            let x1 = x1.min(w);
            let y1 = y1.min(h);
            let bx = BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64);
            let m = box_to_mask(&bx, h, w).unwrap();
            prop_assert_eq!(m.count(), (x1 - x0) * (y1 - y0));
            prop_assert_eq!(mask_to_box(&m).unwrap(), bx);
        }

        #[test]
        fn logits_make_valid_distribution(logits in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
            let d = ClassDistribution::from_logits(&logits).unwrap();
            prop_assert!(d.probs().iter().all(|&p| p >= 0.0));
            prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(ClassDistribution::new(d.probs().to_vec()).is_ok());
        }

        #[test]
        fn rle_roundtrip(bits in proptest::collection::vec(any::<bool>(), 12)) {
            let m = Mask::new(3, 4, bits).unwrap();
            prop_assert_eq!(Mask::from_rle(3, 4, &m.to_rle()).unwrap(), m);
        }
    }

    #[test]
    fn validate_well_formed_labeled() {
        let clip = gray_clip(4, 8, 8, 0.5);
        let anns = vec![Some(Region::Box(BBox::new(1.0, 1.0, 4.0, 4.0))); 4];
        let s = Sample { clip, label: Some(1), annotations: Some(anns), sample_id: "a".into() };
        assert!(validate_sample(&s, Some(3)).is_empty());
    }

    #[test]
    fn validate_reports_unlabeled_with_annotations() {
        let clip = gray_clip(4, 8, 8, 0.5);
        let anns = vec![None; 4];
        let s = Sample { clip, label: None, annotations: Some(anns), sample_id: "b".into() };
        let v = validate_sample(&s, None);
        assert!(v.iter().any(|v| v.to_string() == "unlabeled carries annotations"));
    }

    #[test]
    fn validate_reports_out_of_range_value() {
        let mut data = vec![0.5f32; 2 * 4 * 4 * 3];
        data[7] = 1.5;
        let clip = VideoClip::from_raw(2, 4, 4, 3, data).unwrap();
        let s = Sample { clip, label: None, annotations: None, sample_id: "c".into() };
        let v = validate_sample(&s, None);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("value out of range"));
    }

    #[test]
    fn validate_collects_every_violation() {
        let clip = VideoClip::from_raw(1, 2, 2, 2, vec![0.0; 8]).unwrap();
        let s = Sample { clip, label: Some(9), annotations: None, sample_id: "d".into() };
        let v = validate_sample(&s, Some(3));
        assert_eq!(v.len(), 4, "{v:?}");
    }
}
