//! Independent scalar-loop references and shared fixtures.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stable_teacher::synth::{generate_dataset, split_labeled_unlabeled, SynthConfig};
use stable_teacher::trainer::{TrainConfig, TrainData};
use stable_teacher::types::{BBox, LocalizationMap, Mask, Region};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_map(r: &mut ChaCha8Rng, f: usize, h: usize, w: usize) -> LocalizationMap {
    LocalizationMap::new(f, h, w, (0..f * h * w).map(|_| r.gen::<f32>()).collect()).unwrap()
}

pub fn random_probs(r: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| r.gen::<f64>() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

pub fn oracle_jsd(p: &[f64], q: &[f64]) -> f64 {
    let mut kl_p = 0.0;
    let mut kl_q = 0.0;
    for i in 0..p.len() {
        let m = (p[i] + q[i]) / 2.0;
        if p[i] > 0.0 {
            kl_p += p[i] * (p[i].ln() - m.ln());
        }
        if q[i] > 0.0 {
            kl_q += q[i] * (q[i].ln() - m.ln());
        }
    }
    (kl_p + kl_q) / 2.0
}

pub fn oracle_mse(a: &LocalizationMap, b: &LocalizationMap) -> f64 {
    let [f, h, w] = a.dims();
    let mut s = 0.0;
    for t in 0..f {
        for r in 0..h {
            for c in 0..w {
                let d = a.get(t, r, c) as f64 - b.get(t, r, c) as f64;
                s += d * d;
            }
        }
    }
    s / (f * h * w) as f64
}

/// `[f][r][c]` nested differences.
pub fn oracle_diff(m: &LocalizationMap) -> Vec<Vec<Vec<f64>>> {
    let [f, h, w] = m.dims();
    (0..f - 1)
        .map(|t| (0..h).map(|r| (0..w).map(|c| m.get(t + 1, r, c) as f64 - m.get(t, r, c) as f64).collect()).collect())
        .collect()
}

pub fn oracle_dop(t: &LocalizationMap, s: &LocalizationMap) -> f64 {
    let (dt, ds) = (oracle_diff(t), oracle_diff(s));
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in dt.iter().flatten().flatten().zip(ds.iter().flatten().flatten()) {
        sum += (a - b) * (a - b);
        n += 1;
    }
    sum / n as f64
}

fn pixel_counts(a: Option<[u8; 4]>, b: Option<[u8; 4]>) -> (usize, usize) {
    let inside = |bx: Option<[u8; 4]>, x: u8, y: u8| bx.is_some_and(|bx| x >= bx[0] && x < bx[2] && y >= bx[1] && y < bx[3]);
    let (mut i, mut u) = (0, 0);
    for y in 0..32u8 {
        for x in 0..32u8 {
            let (pa, pb) = (inside(a, x, y), inside(b, x, y));
            i += (pa && pb) as usize;
            u += (pa || pb) as usize;
        }
    }
    (i, u)
}

/// Pixel-count IoU of two integer-cornered boxes.
pub fn oracle_box_iou(a: [u8; 4], b: [u8; 4]) -> f64 {
    let (i, u) = pixel_counts(Some(a), Some(b));
    if u == 0 { 0.0 } else { i as f64 / u as f64 }
}

pub fn box_region(b: [u8; 4]) -> Region {
    Region::Box(BBox::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64))
}

/// Normalizes a corner pair so the box has positive area.
pub fn proper_box(b: [u8; 4]) -> [u8; 4] {
    let (x0, x1) = (b[0].min(b[2]), b[0].max(b[2]) + 1);
    let (y0, y1) = (b[1].min(b[3]), b[1].max(b[3]) + 1);
    [x0, y0, x1, y1]
}

pub fn oracle_mask_iou(a: &Mask, b: &Mask) -> f64 {
    let (mut i, mut u) = (0, 0);
    for r in 0..a.height() {
        for c in 0..a.width() {
            i += (a.get(r, c) && b.get(r, c)) as usize;
            u += (a.get(r, c) || b.get(r, c)) as usize;
        }
    }
    if u == 0 { 0.0 } else { i as f64 / u as f64 }
}

/// Summed per-frame pixel intersections over summed unions, boxes only.
pub fn oracle_tube_iou(a: &[Option<[u8; 4]>], b: &[Option<[u8; 4]>]) -> f64 {
    let (mut i, mut u) = (0, 0);
    for f in 0..a.len().max(b.len()) {
        let (fi, fu) = pixel_counts(a.get(f).copied().flatten(), b.get(f).copied().flatten());
        i += fi;
        u += fu;
    }
    if u == 0 { 0.0 } else { i as f64 / u as f64 }
}

/// Greedy matching followed by the interpolated precision envelope, evaluated
/// as a sum over true positives of the best precision at or beyond each.
pub fn oracle_ap(scores: &[f64], num_gt: usize, iou: &[Vec<f64>], thresh: f64) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Insertion sort: stable, descending by score.
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && scores[order[j - 1]] < scores[order[j]] {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut used = vec![false; num_gt];
    let mut hit = Vec::new();
    for &d in &order {
        let mut best: Option<usize> = None;
        for g in 0..num_gt {
            if used[g] || iou[d][g] <= thresh {
                continue;
            }
            if best.is_none_or(|b| iou[d][g] > iou[d][b]) {
                best = Some(g);
            }
        }
        if let Some(g) = best {
            used[g] = true;
        }
        hit.push(best.is_some());
    }
    let prec_at = |k: usize| hit[..=k].iter().filter(|&&h| h).count() as f64 / (k + 1) as f64;
    let mut ap = 0.0;
    for k in 0..hit.len() {
        if hit[k] {
            let best = (k..hit.len()).map(prec_at).fold(0.0, f64::max);
            ap += best / num_gt as f64;
        }
    }
    Some(ap)
}

pub fn tiny_synth() -> SynthConfig {
    SynthConfig { num_classes: 2, train_per_class: 6, val_per_class: 2, test_per_class: 2, height: 16, width: 16, ..SynthConfig::default() }
}

pub fn tiny_data() -> TrainData {
    let ds = generate_dataset(&tiny_synth()).unwrap();
    let split = split_labeled_unlabeled(&ds.manifest, 50.0, 0).unwrap();
    TrainData::from_dataset(&ds, &split).unwrap()
}

pub fn tiny_train(mode: stable_teacher::trainer::Mode) -> TrainConfig {
    use stable_teacher::detector::DetectorConfig;
    use stable_teacher::eor::EoRConfig;
    TrainConfig {
        mode,
        epochs: 1,
        batch_size: 4,
        detector: DetectorConfig { num_classes: 2, clip_len: 8, height: 16, width: 16, widths: vec![4, 8], ..DetectorConfig::default() },
        eor: EoRConfig { channels: vec![4, 8], ..EoRConfig::default() },
        ..TrainConfig::default()
    }
}

/// Relative agreement used by the finite-difference checks.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-3)
}
