//! Training objectives, both as plain values and as graph nodes.
//!
//! Value-level functions work on [`LocalizationMap`] and [`ClassDistribution`]
//! in `f64` and are what reports and tests use. The `graph_*` functions build
//! the same quantities on a [`Graph`] for training; teacher-side arguments
//! must be constants there.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Scalar;
use crate::types::{ClassDistribution, LocalizationMap, Mask, ModelOutput};

/// Probability clamp used by value-level binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Per-step loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sup_cls: f64,
    pub sup_loc: f64,
    pub sup_eor: f64,
    pub base_cls_cons: f64,
    pub base_loc_cons: f64,
    pub eor_cons: f64,
    pub dop_u: f64,
    pub dop_eor: f64,
    pub lambda_t: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str =
        "sup_cls,sup_loc,sup_eor,base_cls_cons,base_loc_cons,eor_cons,dop_u,dop_eor,lambda_t,total";

    pub fn supervised_sum(&self) -> f64 {
        self.sup_cls + self.sup_loc + self.sup_eor
    }

    pub fn unsupervised_sum(&self) -> f64 {
        self.base_cls_cons + self.base_loc_cons + self.eor_cons + self.dop_u + self.dop_eor
    }

    pub fn components(&self) -> [(&'static str, f64); 10] {
        [
            ("sup_cls", self.sup_cls),
            ("sup_loc", self.sup_loc),
            ("sup_eor", self.sup_eor),
            ("base_cls_cons", self.base_cls_cons),
            ("base_loc_cons", self.base_loc_cons),
            ("eor_cons", self.eor_cons),
            ("dop_u", self.dop_u),
            ("dop_eor", self.dop_eor),
            ("lambda_t", self.lambda_t),
            ("total", self.total),
        ]
    }

    pub fn csv_row(&self) -> String {
        self.components().iter().map(|(_, v)| format!("{v:.9e}")).collect::<Vec<_>>().join(",")
    }
}

/// Assembles the weighted total, rejecting any non-finite component.
pub fn total_loss(mut parts: LossBreakdown, lambda_t: f64) -> Result<LossBreakdown> {
    parts.lambda_t = lambda_t;
    for (name, v) in parts.components().iter().take(9) {
        if !v.is_finite() {
            return Err(Error::NonFinite { component: (*name).to_string() });
        }
    }
    parts.total = parts.supervised_sum() + lambda_t * parts.unsupervised_sum();
    Ok(parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RampShape {
    #[default]
    Linear,
    /// `exp(-5 (1 - t)^2)`
    Sigmoid,
}

/// Weight of the unsupervised terms at `epoch`.
pub fn lambda_schedule(epoch: usize, lambda_max: f64, ramp_epochs: usize, shape: RampShape) -> f64 {
    if ramp_epochs == 0 {
        return lambda_max;
    }
    let t = (epoch as f64 / ramp_epochs as f64).min(1.0);
    match shape {
        RampShape::Linear => lambda_max * t,
        RampShape::Sigmoid => lambda_max * (-5.0 * (1.0 - t) * (1.0 - t)).exp(),
    }
}

/// `0.5·KL(p‖m) + 0.5·KL(q‖m)` with natural log.
pub fn jsd(p: &ClassDistribution, q: &ClassDistribution) -> Result<f64> {
    let (p, q) = (p.probs(), q.probs());
    if p.len() != q.len() {
        return Err(Error::shape(&[p.len()], &[q.len()]));
    }
    // a / m written as 2a / (a + b) so subnormal inputs cannot divide by zero.
    let term = |a: f64, b: f64| if a > 0.0 { a * ((a + a) / (a + b)).ln() } else { 0.0 };
    Ok(p.iter()
        .zip(q)
        .map(|(&a, &b)| 0.5 * term(a, b) + 0.5 * term(b, a))
        .sum::<f64>()
        .max(0.0))
}

fn mse_values(a: &LocalizationMap, b: &LocalizationMap) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::shape(&a.dims(), &b.dims()));
    }
    let n = a.values().len() as f64;
    Ok(a.values().iter().zip(b.values()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / n)
}

/// Mean squared error between teacher and student maps.
pub fn loc_consistency(t_map: &LocalizationMap, s_map: &LocalizationMap) -> Result<f64> {
    mse_values(t_map, s_map)
}

/// Mean squared error between the refined teacher map and the raw student map.
pub fn eor_consistency(t_loc_eor: &LocalizationMap, s_loc: &LocalizationMap) -> Result<f64> {
    mse_values(t_loc_eor, s_loc)
}

/// `out[f] = map[f+1] - map[f]`, shaped `(F-1)×H×W`, row-major.
pub fn temporal_difference(map: &LocalizationMap) -> Result<Vec<f64>> {
    let [f, h, w] = map.dims();
    if f < 2 {
        return Err(Error::InvalidInput(format!("temporal difference needs at least 2 frames, got {f}")));
    }
    let plane = h * w;
    let v = map.values();
    Ok((0..(f - 1) * plane).map(|i| v[i + plane] as f64 - v[i] as f64).collect())
}

/// `(MSE(φ(t_loc), φ(s_loc)), MSE(φ(t_loc_eor), φ(s_loc)))`.
pub fn dop_loss(t_loc: &LocalizationMap, t_loc_eor: &LocalizationMap, s_loc: &LocalizationMap) -> Result<(f64, f64)> {
    for m in [t_loc, t_loc_eor] {
        if m.dims() != s_loc.dims() {
            return Err(Error::shape(&s_loc.dims(), &m.dims()));
        }
    }
    let ds = temporal_difference(s_loc)?;
    let mse = |d: Vec<f64>| d.iter().zip(&ds).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / ds.len() as f64;
    Ok((mse(temporal_difference(t_loc)?), mse(temporal_difference(t_loc_eor)?)))
}

fn bce_map(map: &LocalizationMap, gt: &[Mask]) -> Result<f64> {
    let [f, h, w] = map.dims();
    if gt.len() != f || gt.iter().any(|m| m.height() != h || m.width() != w) {
        return Err(Error::InvalidInput(format!("expected {f} ground-truth masks of {h}×{w}")));
    }
    let mut total = 0.0;
    for (t, mask) in gt.iter().enumerate() {
        for (&p, &y) in map.frame(t).iter().zip(mask.bits()) {
            let p = (p as f64).clamp(BCE_EPS, 1.0 - BCE_EPS);
            total -= if y { p.ln() } else { (1.0 - p).ln() };
        }
    }
    Ok(total / (f * h * w) as f64)
}

/// `(sup_cls, sup_loc, sup_eor)` for one labeled sample.
pub fn supervised_loss(
    output: &ModelOutput,
    eor_out: &LocalizationMap,
    label: usize,
    gt_masks: &[Mask],
) -> Result<(f64, f64, f64)> {
    let logits = &output.class_logits;
    if label >= logits.len() {
        return Err(Error::InvalidInput(format!("label {label} outside {} classes", logits.len())));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln() + m;
    let sup_cls = lse - logits[label];
    Ok((sup_cls, bce_map(&output.loc_map, gt_masks)?, bce_map(eor_out, gt_masks)?))
}

/// Mean JSD between `softmax(s_logits)` rows and constant teacher probabilities.
pub fn graph_cls_consistency<'g, T: Scalar>(s_logits: Var<'g, T>, t_probs: Var<'g, T>) -> Var<'g, T> {
    s_logits.softmax().jsd(t_probs)
}

/// Mean squared error between student maps and constant targets.
pub fn graph_map_mse<'g, T: Scalar>(s_map: Var<'g, T>, target: Var<'g, T>) -> Var<'g, T> {
    s_map.mse(target)
}

/// Difference-of-pixels term on `N×1×T×H×W` maps.
pub fn graph_dop<'g, T: Scalar>(s_map: Var<'g, T>, target: Var<'g, T>) -> Var<'g, T> {
    s_map.temporal_diff(2).mse(target.temporal_diff(2))
}
