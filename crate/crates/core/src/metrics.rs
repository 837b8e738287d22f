//! Spatio-temporal detection scoring.
//!
//! Maps become tubes by binarizing and keeping the largest 4-connected blob per
//! frame. Frame-level AP pools per-frame detections of a class across videos;
//! video-level AP scores whole tubes with 3D IoU.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::temporal_difference;
use crate::types::{box_to_mask, BBox, FrameAnnotation, LocalizationMap, Mask, ModelOutput, Region, Sample};

/// Frame-level thresholds reported individually.
pub const THRESHOLDS: [f64; 5] = [0.2, 0.3, 0.4, 0.5, 0.6];

/// `0.5, 0.55, ..., 0.95`
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    #[default]
    Box,
    Mask,
}

/// Scored tube for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTube {
    pub sample_id: String,
    pub class_id: usize,
    pub score: f64,
    pub frames: Vec<FrameAnnotation>,
}

impl DetectionTube {
    pub fn is_empty(&self) -> bool {
        self.frames.iter().all(Option::is_none)
    }
}

/// Ground-truth tube of a labeled video.
pub fn ground_truth_tube(sample: &Sample) -> Result<DetectionTube> {
    let class_id = sample
        .label
        .ok_or_else(|| Error::InvalidInput(format!("sample {} has no label", sample.sample_id)))?;
    let frames = sample
        .annotations
        .clone()
        .ok_or_else(|| Error::InvalidInput(format!("sample {} has no annotations", sample.sample_id)))?;
    Ok(DetectionTube { sample_id: sample.sample_id.clone(), class_id, score: 1.0, frames })
}

/// Largest 4-connected component of `mask`; ties go to the component found first in raster order.
pub fn largest_component(mask: &Mask) -> Option<Mask> {
    let (h, w) = (mask.height(), mask.width());
    let mut label = vec![0u32; h * w];
    let mut best: Option<(usize, u32)> = None;
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask.bits()[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if mask.bits()[j] && label[j] == 0 {
                    label[j] = next;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        if best.is_none_or(|(s, _)| size > s) {
            best = Some((size, next));
        }
    }
    best.map(|(_, id)| Mask::new(h, w, label.iter().map(|&l| l == id).collect()).expect("same size"))
}

/// Tube from a model output: per frame, binarize and keep the largest blob.
pub fn extract_tube(sample_id: &str, output: &ModelOutput, binarize_thresh: f64) -> Result<DetectionTube> {
    let dist = output.class_distribution()?;
    let (class_id, score) = dist.argmax();
    let map = &output.loc_map;
    let [f, h, w] = map.dims();
    let frames = (0..f)
        .map(|t| {
            let bin = Mask::new(h, w, map.frame(t).iter().map(|&v| v as f64 >= binarize_thresh).collect()).expect("frame size");
            largest_component(&bin).map(Region::Mask)
        })
        .collect();
    Ok(DetectionTube { sample_id: sample_id.to_string(), class_id, score, frames })
}

fn as_mask(r: &Region, dims: Option<(usize, usize)>) -> Result<Mask> {
    match (r, dims) {
        (Region::Mask(m), _) => Ok(m.clone()),
        (Region::Box(b), Some((h, w))) => box_to_mask(b, h, w),
        (Region::Box(_), None) => {
            Err(Error::InvalidInput("mask IoU between two boxes needs a frame size; use box mode".into()))
        }
    }
}

fn mask_dims(a: &Region, b: &Region) -> Option<(usize, usize)> {
    [a, b].iter().find_map(|r| match r {
        Region::Mask(m) => Some((m.height(), m.width())),
        Region::Box(_) => None,
    })
}

/// `(intersection, union)` of two present regions.
fn overlap(a: &Region, b: &Region, mode: IouMode) -> Result<(f64, f64)> {
    match mode {
        IouMode::Box => {
            let (ba, bb): (BBox, BBox) = (a.to_box()?, b.to_box()?);
            let inter = ba.intersection(&bb);
            Ok((inter, ba.area() + bb.area() - inter))
        }
        IouMode::Mask => {
            let dims = mask_dims(a, b);
            let (ma, mb) = (as_mask(a, dims)?, as_mask(b, dims)?);
            if (ma.height(), ma.width()) != (mb.height(), mb.width()) {
                return Err(Error::shape(&[ma.height(), ma.width()], &[mb.height(), mb.width()]));
            }
            Ok((ma.intersection(&mb) as f64, ma.union(&mb) as f64))
        }
    }
}

fn region_size(r: &Region, mode: IouMode) -> Result<f64> {
    Ok(match (mode, r) {
        (IouMode::Box, r) => r.to_box()?.area(),
        (IouMode::Mask, Region::Mask(m)) => m.count() as f64,
        (IouMode::Mask, Region::Box(b)) => b.area(),
    })
}

/// IoU of two frame annotations; `None` when both are absent.
pub fn frame_iou(a: &FrameAnnotation, b: &FrameAnnotation, mode: IouMode) -> Result<Option<f64>> {
    match (a, b) {
        (None, None) => Ok(None),
        (Some(_), None) | (None, Some(_)) => Ok(Some(0.0)),
        (Some(a), Some(b)) => {
            let (i, u) = overlap(a, b, mode)?;
            Ok(Some(if u > 0.0 { i / u } else { 0.0 }))
        }
    }
}

/// Summed intersections over summed unions across frames where either tube is present.
pub fn tube_iou_3d(pred: &DetectionTube, gt: &DetectionTube, mode: IouMode) -> Result<f64> {
    let n = pred.frames.len().max(gt.frames.len());
    let (mut inter, mut union) = (0.0, 0.0);
    for f in 0..n {
        let a = pred.frames.get(f).and_then(Option::as_ref);
        let b = gt.frames.get(f).and_then(Option::as_ref);
        match (a, b) {
            (Some(a), Some(b)) => {
                let (i, u) = overlap(a, b, mode)?;
                inter += i;
                union += u;
            }
            (Some(r), None) | (None, Some(r)) => union += region_size(r, mode)?,
            (None, None) => {}
        }
    }
    Ok(if union > 0.0 { inter / union } else { 0.0 })
}

/// All-points interpolated average precision with greedy matching.
///
/// Detections are visited by descending score; equal scores keep input order.
/// Each claims the unmatched ground truth of highest IoU provided that IoU
/// exceeds `thresh`. Returns `None` without ground truth.
pub fn average_precision(scores: &[f64], num_gt: usize, iou: impl Fn(usize, usize) -> f64, thresh: f64) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut taken = vec![false; num_gt];
    let mut tp = Vec::with_capacity(order.len());
    for &d in &order {
        let best = (0..num_gt)
            .filter(|&g| !taken[g])
            .map(|g| (g, iou(d, g)))
            .filter(|&(_, v)| v > thresh)
            .fold(None, |acc: Option<(usize, f64)>, (g, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((g, v)),
            });
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        tp.push(best.is_some());
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &hit) in tp.iter().enumerate() {
        hits += hit as usize;
        precision.push(hits as f64 / (i + 1) as f64);
        recall.push(hits as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev) * p;
        prev = *r;
    }
    Some(ap)
}

/// Per-class AP (`None` for classes without ground truth) and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

fn mean_present(v: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = v.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

fn sorted_by_id(tubes: &[DetectionTube]) -> Vec<&DetectionTube> {
    let mut v: Vec<&DetectionTube> = tubes.iter().collect();
    v.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    v
}

/// Frame-level mAP.
pub fn f_map(preds: &[DetectionTube], gts: &[DetectionTube], num_classes: usize, thresh: f64, mode: IouMode) -> Result<ClassAp> {
    let preds = sorted_by_id(preds);
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let dets: Vec<(&str, usize, &Region, f64)> = preds
            .iter()
            .filter(|t| t.class_id == c)
            .flat_map(|t| t.frames.iter().enumerate().filter_map(move |(f, r)| r.as_ref().map(|r| (t.sample_id.as_str(), f, r, t.score))))
            .collect();
        let truths: Vec<(&str, usize, &Region)> = gts
            .iter()
            .filter(|t| t.class_id == c)
            .flat_map(|t| t.frames.iter().enumerate().filter_map(move |(f, r)| r.as_ref().map(|r| (t.sample_id.as_str(), f, r))))
            .collect();
        let mut by_key: HashMap<(&str, usize), Vec<usize>> = HashMap::new();
        for (g, (id, f, _)) in truths.iter().enumerate() {
            by_key.entry((id, *f)).or_default().push(g);
        }
        let mut ious: HashMap<(usize, usize), f64> = HashMap::new();
        for (d, (id, f, r, _)) in dets.iter().enumerate() {
            for &g in by_key.get(&(*id, *f)).map(Vec::as_slice).unwrap_or(&[]) {
                let (i, u) = overlap(r, truths[g].2, mode)?;
                ious.insert((d, g), if u > 0.0 { i / u } else { 0.0 });
            }
        }
        let scores: Vec<f64> = dets.iter().map(|d| d.3).collect();
        per_class.push(average_precision(&scores, truths.len(), |d, g| ious.get(&(d, g)).copied().unwrap_or(0.0), thresh));
    }
    let mean = mean_present(&per_class);
    Ok(ClassAp { per_class, mean })
}

/// Video-level mAP with 3D IoU.
pub fn v_map(preds: &[DetectionTube], gts: &[DetectionTube], num_classes: usize, thresh: f64, mode: IouMode) -> Result<ClassAp> {
    let preds = sorted_by_id(preds);
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let dets: Vec<&DetectionTube> = preds.iter().copied().filter(|t| t.class_id == c).collect();
        let truths: Vec<&DetectionTube> = gts.iter().filter(|t| t.class_id == c).collect();
        let mut ious = HashMap::new();
        for (d, p) in dets.iter().enumerate() {
            for (g, t) in truths.iter().enumerate() {
                if p.sample_id == t.sample_id {
                    ious.insert((d, g), tube_iou_3d(p, t, mode)?);
                }
            }
        }
        let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
        per_class.push(average_precision(&scores, truths.len(), |d, g| ious.get(&(d, g)).copied().unwrap_or(0.0), thresh));
    }
    let mean = mean_present(&per_class);
    Ok(ClassAp { per_class, mean })
}

/// Mean absolute frame-to-frame change of a map; lower is smoother.
pub fn coherence_score(map: &LocalizationMap) -> Result<f64> {
    let d = temporal_difference(map)?;
    Ok(d.iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: usize,
    pub name: String,
    /// `static` or `dynamic`
    pub background: String,
}

/// One metric family (frame or video) across the threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    /// `[class][threshold]`
    pub per_class: Vec<Vec<Option<f64>>>,
    pub mean: Vec<f64>,
    pub per_class_50_95: Vec<Option<f64>>,
    pub mean_50_95: f64,
    /// Mean over static-background classes, per threshold.
    pub static_mean: Vec<Option<f64>>,
    pub dynamic_mean: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub split: String,
    pub iou_mode: IouMode,
    pub thresholds: Vec<f64>,
    pub classes: Vec<ClassInfo>,
    pub num_videos: usize,
    pub frame_map: MetricTable,
    pub video_map: MetricTable,
    /// Mean coherence score over predicted maps, when maps were available.
    pub coherence: Option<f64>,
}

pub const REPORT_FORMAT: &str = "stable-teacher-eval/1";

type MapFn = fn(&[DetectionTube], &[DetectionTube], usize, f64, IouMode) -> Result<ClassAp>;

fn table(preds: &[DetectionTube], gts: &[DetectionTube], classes: &[ClassInfo], mode: IouMode, f: MapFn) -> Result<MetricTable> {
    let k = classes.len();
    let sweep = THRESHOLDS.iter().map(|&t| f(preds, gts, k, t, mode)).collect::<Result<Vec<_>>>()?;
    let coco = coco_thresholds().iter().map(|&t| f(preds, gts, k, t, mode)).collect::<Result<Vec<_>>>()?;
    let per_class = (0..k).map(|c| sweep.iter().map(|s| s.per_class[c]).collect()).collect();
    let mean = sweep.iter().map(|s| s.mean).collect();
    let per_class_50_95: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let v: Vec<f64> = coco.iter().filter_map(|s| s.per_class[c]).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    let mean_50_95 = coco.iter().map(|s| s.mean).sum::<f64>() / coco.len() as f64;
    let sub = |bg: &str| -> Vec<Option<f64>> {
        sweep
            .iter()
            .map(|s| {
                let v: Vec<f64> = classes.iter().filter(|c| c.background == bg).filter_map(|c| s.per_class[c.id]).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    };
    Ok(MetricTable { per_class, mean, per_class_50_95, mean_50_95, static_mean: sub("static"), dynamic_mean: sub("dynamic") })
}

/// Full report over one split.
pub fn evaluate(
    split: &str,
    preds: &[DetectionTube],
    gts: &[DetectionTube],
    classes: &[ClassInfo],
    mode: IouMode,
    coherence: Option<f64>,
) -> Result<EvalReport> {
    Ok(EvalReport {
        format: REPORT_FORMAT.into(),
        split: split.into(),
        iou_mode: mode,
        thresholds: THRESHOLDS.to_vec(),
        classes: classes.to_vec(),
        num_videos: gts.len(),
        frame_map: table(preds, gts, classes, mode, f_map)?,
        video_map: table(preds, gts, classes, mode, v_map)?,
        coherence,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl EvalReport {
    /// AP at one of the reported thresholds.
    pub fn frame_map_at(&self, thresh: f64) -> Option<f64> {
        self.thresholds.iter().position(|t| (t - thresh).abs() < 1e-9).map(|i| self.frame_map.mean[i])
    }

    pub fn video_map_at(&self, thresh: f64) -> Option<f64> {
        self.thresholds.iter().position(|t| (t - thresh).abs() < 1e-9).map(|i| self.video_map.mean[i])
    }

    /// One row per (metric, population) with a column per threshold.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,population,background");
        for t in &self.thresholds {
            let _ = write!(out, ",@{t:.1}");
        }
        out.push_str(",@0.5:0.95\n");
        for (name, tab) in [("f-mAP", &self.frame_map), ("v-mAP", &self.video_map)] {
            let _ = write!(out, "{name},mean,all");
            for v in &tab.mean {
                let _ = write!(out, ",{}", cell(Some(*v)));
            }
            let _ = writeln!(out, ",{}", cell(Some(tab.mean_50_95)));
            for (label, sub) in [("static", &tab.static_mean), ("dynamic", &tab.dynamic_mean)] {
                let _ = write!(out, "{name},{label}-mean,{label}");
                for v in sub {
                    let _ = write!(out, ",{}", cell(*v));
                }
                out.push_str(",-\n");
            }
            for c in &self.classes {
                let _ = write!(out, "{name},{},{}", c.name, c.background);
                for v in &tab.per_class[c.id] {
                    let _ = write!(out, ",{}", cell(*v));
                }
                let _ = writeln!(out, ",{}", cell(tab.per_class_50_95[c.id]));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameRecord {
    index: usize,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask_rle: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TubeRecord {
    sample_id: String,
    class_id: usize,
    score: f64,
    height: usize,
    width: usize,
    frames: Vec<FrameRecord>,
    num_frames: usize,
}

/// One JSON record per tube.
pub fn tubes_to_jsonl(tubes: &[DetectionTube], height: usize, width: usize) -> Result<String> {
    let mut out = String::new();
    for t in tubes {
        let frames = t
            .frames
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().map(|r| (i, r)))
            .map(|(index, r)| {
                let b = r.to_box()?;
                let mask_rle = match r {
                    Region::Mask(m) => Some(m.to_rle()),
                    Region::Box(_) => None,
                };
                Ok(FrameRecord { index, bbox: [b.x0, b.y0, b.x1, b.y1], mask_rle })
            })
            .collect::<Result<Vec<_>>>()?;
        let rec = TubeRecord {
            sample_id: t.sample_id.clone(),
            class_id: t.class_id,
            score: t.score,
            height,
            width,
            frames,
            num_frames: t.frames.len(),
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| Error::InvalidInput(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn tubes_from_jsonl(text: &str) -> Result<Vec<DetectionTube>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, line)| {
            let rec: TubeRecord =
                serde_json::from_str(line).map_err(|e| Error::InvalidInput(format!("detections line {}: {e}", n + 1)))?;
            let mut frames: Vec<FrameAnnotation> = vec![None; rec.num_frames];
            for fr in rec.frames {
                let slot = frames
                    .get_mut(fr.index)
                    .ok_or_else(|| Error::InvalidInput(format!("detections line {}: frame {} out of range", n + 1, fr.index)))?;
                *slot = Some(match fr.mask_rle {
                    Some(runs) => Region::Mask(Mask::from_rle(rec.height, rec.width, &runs)?),
                    None => Region::Box(BBox::new(fr.bbox[0], fr.bbox[1], fr.bbox[2], fr.bbox[3])),
                });
            }
            Ok(DetectionTube { sample_id: rec.sample_id, class_id: rec.class_id, score: rec.score, frames })
        })
        .collect()
}

pub fn write_tubes(path: &Path, tubes: &[DetectionTube], height: usize, width: usize) -> Result<()> {
    fs::write(path, tubes_to_jsonl(tubes, height, width)?).map_err(|e| Error::io(path, e))
}

pub fn read_tubes(path: &Path) -> Result<Vec<DetectionTube>> {
    tubes_from_jsonl(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
