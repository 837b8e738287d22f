//! Student-teacher training.
//!
//! Each step runs the teachers on weak views, the students on strong views,
//! takes one Adam step over both students and then moves both teachers by EMA.
//! All randomness is derived from `(seed, step, slot)` so runs and resumed runs
//! are reproducible.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{apply_temporal, make_view_pair, select_frames, AugConfig, TemporalStrategy, ViewPair};
use crate::autograd::{Graph, Var};
use crate::checkpoint;
use crate::detector::{clips_to_tensor, ActionDetector, ConvDetector, DetectorConfig};
use crate::eor::{EoRConfig, ErrorRecovery};
use crate::error::{Error, Result};
use crate::losses::{graph_cls_consistency, graph_dop, graph_map_mse, lambda_schedule, total_loss, LossBreakdown, RampShape};
use crate::metrics::{coherence_score, evaluate, extract_tube, ground_truth_tube, ClassInfo, EvalReport, IouMode};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParameterSet;
use crate::synth::{derive_seed, Dataset, SplitManifest};
use crate::tensor::{Scalar, Tensor};
use crate::types::{FrameAnnotation, Mask, ModelOutput, Sample, VideoClip};

/// Ablation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "supervised")]
    Supervised,
    #[serde(rename = "mean-teacher")]
    MeanTeacher,
    #[serde(rename = "+eor")]
    PlusEoR,
    #[serde(rename = "+dop")]
    PlusDoP,
    #[serde(rename = "full")]
    Full,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Supervised, Mode::MeanTeacher, Mode::PlusEoR, Mode::PlusDoP, Mode::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Supervised => "supervised",
            Mode::MeanTeacher => "mean-teacher",
            Mode::PlusEoR => "+eor",
            Mode::PlusDoP => "+dop",
            Mode::Full => "full",
        }
    }

    pub fn uses_unlabeled(self) -> bool {
        self != Mode::Supervised
    }

    pub fn uses_eor(self) -> bool {
        matches!(self, Mode::PlusEoR | Mode::Full)
    }

    pub fn uses_dop(self) -> bool {
        matches!(self, Mode::PlusDoP | Mode::Full)
    }

    /// Loss terms that enter the objective.
    pub fn terms(self) -> LossTerms {
        let cons = self.uses_unlabeled();
        LossTerms {
            sup_eor: self.uses_eor(),
            base_cls_cons: cons,
            base_loc_cons: cons,
            eor_cons: self.uses_eor(),
            dop_u: self.uses_dop(),
            dop_eor: self.uses_dop() && self.uses_eor(),
            ..LossTerms::supervised_only()
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config("train.mode", format!("unknown mode `{s}`; expected supervised, mean-teacher, +eor, +dop or full")))
    }
}

/// Which model is scored during validation and by `evaluate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalModel {
    #[default]
    Teacher,
    Student,
}

/// Switches for the individual objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub sup_cls: bool,
    pub sup_loc: bool,
    pub sup_eor: bool,
    pub base_cls_cons: bool,
    pub base_loc_cons: bool,
    pub eor_cons: bool,
    pub dop_u: bool,
    pub dop_eor: bool,
}

impl LossTerms {
    pub fn supervised_only() -> Self {
        Self {
            sup_cls: true,
            sup_loc: true,
            sup_eor: false,
            base_cls_cons: false,
            base_loc_cons: false,
            eor_cons: false,
            dop_u: false,
            dop_eor: false,
        }
    }

    pub fn none() -> Self {
        Self { sup_cls: false, sup_loc: false, ..Self::supervised_only() }
    }

    fn needs_teacher(&self) -> bool {
        self.base_cls_cons || self.base_loc_cons || self.eor_cons || self.dop_u || self.dop_eor
    }

    fn needs_eor_teacher(&self) -> bool {
        self.eor_cons || self.dop_eor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    /// Half labeled, half unlabeled.
    pub batch_size: usize,
    pub beta: f64,
    pub lambda_max: f64,
    pub ramp_epochs: usize,
    pub ramp_shape: RampShape,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Supervised epochs before consistency starts; the teacher tracks the student exactly meanwhile.
    pub burn_in_epochs: usize,
    pub eval_model: EvalModel,
    pub stop_eor_gradient: bool,
    pub eval_every: usize,
    pub binarize_thresh: f64,
    pub iou_mode: IouMode,
    pub detector: DetectorConfig,
    pub eor: EoRConfig,
    pub aug: AugConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            epochs: 50,
            batch_size: 8,
            beta: 0.99,
            lambda_max: 0.1,
            ramp_epochs: 15,
            ramp_shape: RampShape::Linear,
            adam: AdamConfig::default(),
            seed: 0,
            burn_in_epochs: 0,
            eval_model: EvalModel::Teacher,
            stop_eor_gradient: true,
            eval_every: 1,
            binarize_thresh: 0.5,
            iou_mode: IouMode::Box,
            detector: DetectorConfig::default(),
            eor: EoRConfig::default(),
            aug: AugConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be positive"));
        }
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::config("train.batch_size", "must be an even number of at least 2"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("train.beta", format!("{} outside [0, 1]", self.beta)));
        }
        if !(self.lambda_max >= 0.0 && self.lambda_max.is_finite()) {
            return Err(Error::config("train.lambda_max", "must be a non-negative number"));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("train.eval_every", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.binarize_thresh) {
            return Err(Error::config("eval.binarize_thresh", "must lie in [0, 1]"));
        }
        if self.aug.clip_len != self.detector.clip_len {
            return Err(Error::config(
                "aug.clip_len",
                format!("{} differs from model.clip_len {}", self.aug.clip_len, self.detector.clip_len),
            ));
        }
        self.detector.validate()?;
        self.eor.validate()?;
        self.aug.validate()
    }

    /// Fingerprint of everything that shapes the trajectory; the epoch budget is excluded so runs can be extended.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.epochs = 0;
        c.eval_every = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn lambda_at(&self, epoch: usize) -> f64 {
        if epoch < self.burn_in_epochs {
            0.0
        } else {
            lambda_schedule(epoch - self.burn_in_epochs, self.lambda_max, self.ramp_epochs, self.ramp_shape)
        }
    }
}

/// `beta·teacher + (1 − beta)·student`, elementwise.
pub fn ema_update<T: Scalar>(teacher: &ParameterSet<T>, student: &ParameterSet<T>, beta: f64) -> Result<ParameterSet<T>> {
    let mut out = teacher.clone();
    ema_update_in_place(&mut out, student, beta)?;
    Ok(out)
}

pub fn ema_update_in_place<T: Scalar>(teacher: &mut ParameterSet<T>, student: &ParameterSet<T>, beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidInput(format!("ema decay {beta} outside [0, 1]")));
    }
    teacher.check_layout(student)?;
    let (b, one_b) = (T::lit(beta), T::lit(1.0 - beta));
    for (name, t) in teacher.iter_mut() {
        let s = student.get(name).expect("layout checked");
        for (tv, &sv) in t.data_mut().iter_mut().zip(s.data()) {
            *tv = b * *tv + one_b * sv;
        }
    }
    Ok(())
}

/// Samples available to one run.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub labeled: Vec<Sample>,
    /// Annotations and labels stripped.
    pub unlabeled: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub classes: Vec<ClassInfo>,
}

impl TrainData {
    pub fn from_dataset(ds: &Dataset, split: &SplitManifest) -> Result<Self> {
        let fetch = |ids: &[String]| -> Result<Vec<Sample>> {
            ids.iter()
                .map(|id| {
                    ds.get(id)
                        .map(|c| c.sample.clone())
                        .ok_or_else(|| Error::InvalidInput(format!("split names unknown clip `{id}`")))
                })
                .collect()
        };
        Ok(Self {
            labeled: fetch(&split.labeled)?,
            unlabeled: fetch(&split.unlabeled)?.into_iter().map(Sample::unlabeled).collect(),
            validation: fetch(&split.validation)?,
            classes: ds.manifest.classes.iter().map(|c| c.info()).collect(),
        })
    }
}

/// A labeled view pair with targets aligned to the augmented clip.
#[derive(Debug, Clone)]
pub struct LabeledView {
    pub view: ViewPair,
    pub label: usize,
    pub masks: Vec<Mask>,
}

#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub labeled: Vec<LabeledView>,
    pub unlabeled: Vec<ViewPair>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn labeled_view(sample: &Sample, aug: &AugConfig, rng: &mut ChaCha8Rng) -> Result<LabeledView> {
    let label = sample
        .label
        .ok_or_else(|| Error::InvalidInput(format!("labeled sample {} has no label", sample.sample_id)))?;
    let view = make_view_pair(sample, aug, rng)?;
    let anns = view
        .annotations_t
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("labeled sample {} has no annotations", sample.sample_id)))?;
    let (h, w) = (view.strong.height(), view.strong.width());
    let masks = anns
        .iter()
        .map(|a| a.as_ref().map_or_else(|| Ok(Mask::empty(h, w)), |r| r.to_mask(h, w)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledView { view, label, masks })
}

/// Steps in one epoch: the unlabeled stream sets the length.
pub fn steps_per_epoch(num_labeled: usize, num_unlabeled: usize, batch_size: usize) -> usize {
    let half = batch_size / 2;
    let n = if num_unlabeled > 0 { num_unlabeled } else { num_labeled };
    (n / half).max(1)
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

/// Labeled indices for a global step; the stream cycles through fresh permutations.
pub fn labeled_indices(seed: u64, n: usize, global_step: u64, half: usize) -> Vec<usize> {
    (0..half)
        .map(|j| {
            let k = global_step as usize * half + j;
            permutation(n, derive_seed(seed, &[1, (k / n) as u64]))[k % n]
        })
        .collect()
}

/// Unlabeled indices for step `step` of `epoch`; one permutation per epoch.
pub fn unlabeled_indices(seed: u64, n: usize, epoch: usize, step: usize, half: usize) -> Vec<usize> {
    let perm = permutation(n, derive_seed(seed, &[2, epoch as u64]));
    (0..half).map(|j| perm[(step * half + j) % n]).collect()
}

fn slot_rng(seed: u64, stream: u64, global_step: u64, slot: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream, global_step, slot as u64]))
}

/// Parameters, optimizer and position of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub student: ParameterSet<f32>,
    pub teacher: ParameterSet<f32>,
    pub eor_student: Option<ParameterSet<f32>>,
    pub eor_teacher: Option<ParameterSet<f32>>,
    /// Moments keyed `base.<name>` and `eor.<name>`.
    pub optimizer: Adam<f32>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub config_hash: String,
}

fn merged(base: &ParameterSet<f32>, eor: Option<&ParameterSet<f32>>) -> ParameterSet<f32> {
    let b = base.iter().map(|(k, v)| (format!("base.{k}"), v.clone()));
    let e = eor.into_iter().flat_map(|p| p.iter().map(|(k, v)| (format!("eor.{k}"), v.clone())));
    b.chain(e).collect()
}

fn unmerge(all: ParameterSet<f32>, prefix: &str) -> ParameterSet<f32> {
    all.iter().filter_map(|(k, v)| k.strip_prefix(prefix).map(|n| (n.to_string(), v.clone()))).collect()
}

/// Gradients of one objective evaluation.
#[derive(Debug, Clone)]
pub struct StepGradients {
    pub breakdown: LossBreakdown,
    pub base: ParameterSet<f32>,
    pub eor: Option<ParameterSet<f32>>,
    /// Teacher parameters the backward pass reached; empty when isolation holds.
    pub teacher_reached: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub lambda_t: f64,
    pub mean_loss: LossBreakdown,
    pub val_f_map_50: f64,
    pub val_v_map_20: f64,
    pub val_v_map_50: f64,
    pub val_coherence: f64,
}

#[derive(Debug)]
pub struct Trainer {
    config: TrainConfig,
    detector: ConvDetector,
    eor: Option<ErrorRecovery>,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let detector = ConvDetector::new(config.detector.clone())?;
        let eor = config.mode.uses_eor().then(|| ErrorRecovery::new(config.eor.clone())).transpose()?;
        let student: ParameterSet<f32> = detector.init_params();
        let eor_student: Option<ParameterSet<f32>> = eor.as_ref().map(|e| e.init_params());
        let optimizer = Adam::new(config.adam, &merged(&student, eor_student.as_ref()));
        let state = TrainState {
            teacher: student.clone(),
            student,
            eor_teacher: eor_student.clone(),
            eor_student,
            optimizer,
            epoch: 0,
            step: 0,
            config_hash: config.hash(),
        };
        Ok(Self { config, detector, eor, state })
    }

    /// Resumes from a checkpoint written with the same configuration.
    pub fn resume(config: TrainConfig, path: &Path) -> Result<Self> {
        let mut t = Self::new(config)?;
        let (saved_cfg, state) = checkpoint::load(path)?;
        if state.config_hash != t.state.config_hash {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!(
                    "config hash {} does not match the current configuration ({})",
                    state.config_hash, t.state.config_hash
                ),
            });
        }
        debug_assert_eq!(saved_cfg.hash(), t.config.hash());
        checkpoint::check_compatible(path, &t.state, &state)?;
        t.state = state;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn detector(&self) -> &ConvDetector {
        &self.detector
    }

    pub fn eor(&self) -> Option<&ErrorRecovery> {
        self.eor.as_ref()
    }

    /// Parameters used for inference.
    pub fn eval_params(&self) -> &ParameterSet<f32> {
        match self.config.eval_model {
            EvalModel::Teacher => &self.state.teacher,
            EvalModel::Student => &self.state.student,
        }
    }

    /// Assembles the batch for step `step` of `epoch`.
    pub fn batch(&self, data: &TrainData, epoch: usize, step: usize) -> Result<Batch> {
        let half = self.config.batch_size / 2;
        let seed = self.config.seed;
        let steps = steps_per_epoch(data.labeled.len(), data.unlabeled.len(), self.config.batch_size);
        let global = (epoch * steps + step) as u64;
        if data.labeled.is_empty() {
            return Err(Error::InvalidInput("no labeled samples".into()));
        }
        let labeled = labeled_indices(seed, data.labeled.len(), global, half)
            .into_iter()
            .enumerate()
            .map(|(j, i)| labeled_view(&data.labeled[i], &self.config.aug, &mut slot_rng(seed, 3, global, j)))
            .collect::<Result<Vec<_>>>()?;
        let unlabeled = if self.config.mode.uses_unlabeled() && !data.unlabeled.is_empty() {
            unlabeled_indices(seed, data.unlabeled.len(), epoch, step, half)
                .into_iter()
                .enumerate()
                .map(|(j, i)| make_view_pair(&data.unlabeled[i], &self.config.aug, &mut slot_rng(seed, 4, global, j)))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Batch { labeled, unlabeled })
    }

    /// Evaluates the objective restricted to `terms` and backpropagates it.
    pub fn gradients(&self, batch: &Batch, lambda_t: f64, terms: LossTerms) -> Result<StepGradients> {
        if batch.labeled.is_empty() {
            return Err(Error::InvalidInput("a step needs at least one labeled sample".into()));
        }
        let terms = LossTerms {
            sup_eor: terms.sup_eor && self.eor.is_some(),
            eor_cons: terms.eor_cons && self.eor.is_some(),
            dop_eor: terms.dop_eor && self.eor.is_some(),
            ..terms
        };
        let g = Graph::<f32>::new();
        let n_l = batch.labeled.len();
        let lab_rows: Vec<usize> = (0..n_l).collect();
        let views: Vec<&ViewPair> = batch.labeled.iter().map(|l| &l.view).chain(&batch.unlabeled).collect();
        let labels: Vec<usize> = batch.labeled.iter().map(|l| l.label).collect();
        let [t, h, w, _] = views[0].strong.dims();
        let gt_data = batch
            .labeled
            .iter()
            .flat_map(|l| l.masks.iter().flat_map(|m| m.bits().iter().map(|&b| if b { 1.0f32 } else { 0.0 })))
            .collect();
        let gt = g.constant(Tensor::from_vec(vec![n_l, 1, t, h, w], gt_data));

        // Student on strong views.
        let sp = self.state.student.bind(&g, true);
        let strong: Vec<&VideoClip> = views.iter().map(|v| &v.strong).collect();
        let s = self.detector.forward_graph(&sp, g.constant(clips_to_tensor(&strong)));
        let sup_cls = s.class_logits.select(&lab_rows).cross_entropy(&labels);
        let sup_loc = s.loc_logits.select(&lab_rows).bce_with_logits(gt);

        // Student refinement of its own labeled maps.
        let mut ep = None;
        let mut sup_eor = None;
        if let (Some(eor), Some(params), true) = (&self.eor, &self.state.eor_student, terms.sup_eor) {
            let bound = params.bind(&g, true);
            let raw = s.loc_map.select(&lab_rows);
            let raw = if self.config.stop_eor_gradient { raw.detach() } else { raw };
            sup_eor = Some(eor.forward_graph(&bound, raw)?.logits.bce_with_logits(gt));
            ep = Some(bound);
        }

        // Teachers on weak views. Bound as trainable so the audit below can observe leaks.
        let mut unsup: Vec<(usize, Var<'_, f32>)> = Vec::new();
        let mut teacher_bounds = Vec::new();
        if terms.needs_teacher() {
            let tp = self.state.teacher.bind(&g, true);
            let weak: Vec<&VideoClip> = views.iter().map(|v| &v.weak).collect();
            let tout = self.detector.forward_graph(&tp, g.constant(clips_to_tensor(&weak)));
            let t_probs = tout.class_logits.softmax().detach();
            let t_loc = tout.loc_map.detach();
            teacher_bounds.push(tp);
            if terms.base_cls_cons {
                unsup.push((0, graph_cls_consistency(s.class_logits, t_probs)));
            }
            if terms.base_loc_cons {
                unsup.push((1, graph_map_mse(s.loc_map, t_loc)));
            }
            if terms.dop_u {
                unsup.push((3, graph_dop(s.loc_map, t_loc)));
            }
            if let (Some(eor), Some(params), true) = (&self.eor, &self.state.eor_teacher, terms.needs_eor_teacher()) {
                let etp = params.bind(&g, true);
                let t_loc_eor = eor.forward_graph(&etp, t_loc)?.map.detach();
                teacher_bounds.push(etp);
                if terms.eor_cons {
                    unsup.push((2, graph_map_mse(s.loc_map, t_loc_eor)));
                }
                if terms.dop_eor {
                    unsup.push((4, graph_dop(s.loc_map, t_loc_eor)));
                }
            }
        }

        let mut parts = LossBreakdown::default();
        let mut sup_vars = Vec::new();
        if terms.sup_cls {
            parts.sup_cls = sup_cls.value().item() as f64;
            sup_vars.push(sup_cls);
        }
        if terms.sup_loc {
            parts.sup_loc = sup_loc.value().item() as f64;
            sup_vars.push(sup_loc);
        }
        if let Some(v) = sup_eor {
            parts.sup_eor = v.value().item() as f64;
            sup_vars.push(v);
        }
        for (slot, v) in &unsup {
            let x = v.value().item() as f64;
            match slot {
                0 => parts.base_cls_cons = x,
                1 => parts.base_loc_cons = x,
                2 => parts.eor_cons = x,
                3 => parts.dop_u = x,
                _ => parts.dop_eor = x,
            }
        }
        let breakdown = total_loss(parts, lambda_t).map_err(|e| match e {
            Error::NonFinite { component } => {
                Error::Diverged { step: self.state.step, component, snapshot: format!("{parts:?}") }
            }
            other => other,
        })?;

        let sup_sum = sup_vars.into_iter().reduce(|a, b| a.add(b));
        let unsup_sum = unsup.iter().map(|(_, v)| *v).reduce(|a, b| a.add(b));
        let total = match (sup_sum, unsup_sum.map(|u| u.scale(lambda_t))) {
            (Some(a), Some(b)) => Some(a.add(b)),
            (a, b) => a.or(b),
        };
        let grads = total.map(|root| g.backward(root));
        let base = grads.as_ref().map_or_else(|| self.state.student.zeros_like(), |gr| sp.grads(gr));
        let eor = self.state.eor_student.as_ref().map(|p| match (&ep, &grads) {
            (Some(b), Some(gr)) => b.grads(gr),
            _ => p.zeros_like(),
        });
        let teacher_reached = grads
            .as_ref()
            .map(|gr| teacher_bounds.iter().flat_map(|b| b.reached(gr)).collect())
            .unwrap_or_default();
        Ok(StepGradients { breakdown, base, eor, teacher_reached })
    }

    /// One optimizer step followed by both EMA updates.
    pub fn train_step(&mut self, batch: &Batch, epoch: usize) -> Result<LossBreakdown> {
        let lambda_t = self.config.lambda_at(epoch);
        let grads = self.gradients(batch, lambda_t, self.config.mode.terms())?;
        let mut params = merged(&self.state.student, self.state.eor_student.as_ref());
        let g = merged(&grads.base, grads.eor.as_ref());
        self.state.optimizer.step(&mut params, &g)?;
        self.state.student = unmerge(params.clone(), "base.");
        let beta = if epoch < self.config.burn_in_epochs { 0.0 } else { self.config.beta };
        ema_update_in_place(&mut self.state.teacher, &self.state.student, beta)?;
        if let Some(es) = &mut self.state.eor_student {
            *es = unmerge(params, "eor.");
            let et = self.state.eor_teacher.as_mut().expect("eor pair");
            ema_update_in_place(et, es, beta)?;
        }
        self.state.step += 1;
        Ok(grads.breakdown)
    }

    /// Runs every step of `epoch`, reporting each breakdown to `on_step`.
    pub fn run_epoch(
        &mut self,
        data: &TrainData,
        epoch: usize,
        mut on_step: impl FnMut(usize, &LossBreakdown) -> Result<()>,
    ) -> Result<LossBreakdown> {
        let steps = steps_per_epoch(data.labeled.len(), data.unlabeled.len(), self.config.batch_size);
        let mut mean = [0.0f64; 10];
        for step in 0..steps {
            let batch = self.batch(data, epoch, step)?;
            let b = self.train_step(&batch, epoch)?;
            for (m, (_, v)) in mean.iter_mut().zip(b.components()) {
                *m += v / steps as f64;
            }
            on_step(step, &b)?;
        }
        self.state.epoch = epoch + 1;
        let [sup_cls, sup_loc, sup_eor, base_cls_cons, base_loc_cons, eor_cons, dop_u, dop_eor, lambda_t, total] = mean;
        Ok(LossBreakdown { sup_cls, sup_loc, sup_eor, base_cls_cons, base_loc_cons, eor_cons, dop_u, dop_eor, lambda_t, total })
    }
}

/// Clip and annotations seen at evaluation: the centered `clip_len` window.
pub fn eval_view(sample: &Sample, clip_len: usize) -> Result<Sample> {
    let f = sample.clip.frames();
    if f == clip_len {
        return Ok(sample.clone());
    }
    let start = f.saturating_sub(clip_len) / 2;
    let sel = select_frames(TemporalStrategy::Contiguous, f, clip_len, start);
    let clip = apply_temporal(&sample.clip, &sel)?;
    let annotations = sample
        .annotations
        .as_ref()
        .map(|a| sel.indices.iter().map(|&i| a.get(i).cloned().flatten()).collect::<Vec<FrameAnnotation>>());
    Ok(Sample { clip, label: sample.label, annotations, sample_id: sample.sample_id.clone() })
}

/// Batched inference in sample order.
pub fn predict<D: ActionDetector>(detector: &D, params: &ParameterSet<f32>, samples: &[Sample]) -> Result<Vec<ModelOutput>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(8) {
        let clips: Vec<&VideoClip> = chunk.iter().map(|s| &s.clip).collect();
        out.extend(detector.forward_batch(params, &clips)?);
    }
    Ok(out)
}

/// Scores model outputs against labeled samples.
pub fn evaluate_outputs(
    split: &str,
    samples: &[Sample],
    outputs: &[ModelOutput],
    classes: &[ClassInfo],
    binarize_thresh: f64,
    mode: IouMode,
) -> Result<EvalReport> {
    let gts = samples.iter().map(ground_truth_tube).collect::<Result<Vec<_>>>()?;
    let preds = samples
        .iter()
        .zip(outputs)
        .map(|(s, o)| extract_tube(&s.sample_id, o, binarize_thresh))
        .collect::<Result<Vec<_>>>()?;
    let coherence = if outputs.is_empty() {
        None
    } else {
        let sum = outputs.iter().map(|o| coherence_score(&o.loc_map)).sum::<Result<f64>>()?;
        Some(sum / outputs.len() as f64)
    };
    evaluate(split, &preds, gts.as_slice(), classes, mode, coherence)
}

/// Inference plus scoring with the configured evaluation model.
pub fn evaluate_model(trainer: &Trainer, split: &str, samples: &[Sample], classes: &[ClassInfo]) -> Result<(EvalReport, Vec<ModelOutput>)> {
    let cfg = trainer.config();
    let views = samples.iter().map(|s| eval_view(s, cfg.detector.clip_len)).collect::<Result<Vec<_>>>()?;
    let outputs = predict(trainer.detector(), trainer.eval_params(), &views)?;
    let report = evaluate_outputs(split, &views, &outputs, classes, cfg.binarize_thresh, cfg.iou_mode)?;
    Ok((report, outputs))
}

/// Files written by [`train`].
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn losses(&self) -> PathBuf {
        self.dir.join("losses.csv")
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.json")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }

    pub fn log(&self) -> PathBuf {
        self.dir.join("train.log")
    }
}

fn append(path: &Path, text: &str) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn log_line(paths: &RunPaths, msg: &str) -> Result<()> {
    let secs = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
    log::info!("{msg}");
    append(&paths.log(), &format!("[{secs}] {msg}\n"))
}

/// Trains to `config.epochs`, continuing `trainer` from wherever its state stands.
///
/// Writes the loss log, per-epoch metrics and a checkpoint after every epoch.
pub fn train(trainer: &mut Trainer, data: &TrainData, out: &RunPaths) -> Result<Vec<EpochRecord>> {
    fs::create_dir_all(&out.dir).map_err(|e| Error::io(&out.dir, e))?;
    let mut history: Vec<EpochRecord> =
        if trainer.state.epoch > 0 && out.metrics().exists() { crate::synth::read_json(&out.metrics())? } else { Vec::new() };
    history.retain(|r| r.epoch < trainer.state.epoch);
    if trainer.state.epoch == 0 {
        fs::write(out.losses(), format!("epoch,step,{}\n", LossBreakdown::CSV_HEADER)).map_err(|e| Error::io(out.losses(), e))?;
    }
    let epochs = trainer.config().epochs;
    let eval_every = trainer.config().eval_every;
    let steps = steps_per_epoch(data.labeled.len(), data.unlabeled.len(), trainer.config().batch_size);
    log_line(out, &format!("mode {} from epoch {} to {epochs}, {steps} steps per epoch", trainer.config().mode, trainer.state.epoch))?;
    for epoch in trainer.state.epoch..epochs {
        let mut rows = String::new();
        let mean = trainer.run_epoch(data, epoch, |step, b| {
            rows.push_str(&format!("{epoch},{step},{}\n", b.csv_row()));
            Ok(())
        })?;
        append(&out.losses(), &rows)?;
        if (epoch + 1) % eval_every == 0 || epoch + 1 == epochs {
            let (report, _) = evaluate_model(trainer, "validation", &data.validation, &data.classes)?;
            let rec = EpochRecord {
                epoch,
                steps,
                lambda_t: mean.lambda_t,
                mean_loss: mean,
                val_f_map_50: report.frame_map_at(0.5).unwrap_or(0.0),
                val_v_map_20: report.video_map_at(0.2).unwrap_or(0.0),
                val_v_map_50: report.video_map_at(0.5).unwrap_or(0.0),
                val_coherence: report.coherence.unwrap_or(0.0),
            };
            log_line(
                out,
                &format!(
                    "epoch {epoch}: loss {:.4}, f-mAP@0.5 {:.4}, v-mAP@0.5 {:.4}",
                    mean.total, rec.val_f_map_50, rec.val_v_map_50
                ),
            )?;
            history.push(rec);
            let text = serde_json::to_string_pretty(&history).expect("records serialize") + "\n";
            fs::write(out.metrics(), text).map_err(|e| Error::io(out.metrics(), e))?;
        }
        checkpoint::save(&out.checkpoint(), trainer.config(), &trainer.state)?;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, split_labeled_unlabeled, SynthConfig};

    fn tiny_config(mode: Mode) -> TrainConfig {
        TrainConfig {
            mode,
            epochs: 1,
            batch_size: 4,
            detector: DetectorConfig { num_classes: 2, clip_len: 8, height: 16, width: 16, widths: vec![4, 8], ..DetectorConfig::default() },
            eor: EoRConfig { channels: vec![4, 8], ..EoRConfig::default() },
            ..TrainConfig::default()
        }
    }

    fn tiny_data() -> TrainData {
        let cfg = SynthConfig {
            num_classes: 2,
            train_per_class: 6,
            val_per_class: 2,
            test_per_class: 1,
            height: 16,
            width: 16,
            ..SynthConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        let split = split_labeled_unlabeled(&ds.manifest, 50.0, 0).unwrap();
        TrainData::from_dataset(&ds, &split).unwrap()
    }

    #[test]
    fn defaults_echo_reference_values() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.beta, c.lambda_max, c.ramp_epochs, c.adam.lr), (50, 8, 0.99, 0.1, 15, 1e-4));
        assert_eq!(c.mode, Mode::Full);
    }

    #[test]
    fn ema_reference_values() {
        let t: ParameterSet<f64> = [("w".to_string(), Tensor::from_vec(vec![2], vec![0.0, 3.0]))].into_iter().collect();
        let s: ParameterSet<f64> = [("w".to_string(), Tensor::from_vec(vec![2], vec![1.0, 3.0]))].into_iter().collect();
        let out = ema_update(&t, &s, 0.99).unwrap();
        assert!((out.get("w").unwrap().data()[0] - 0.01).abs() < 1e-15);
        assert_eq!(out.get("w").unwrap().data()[1], 3.0);
        assert_eq!(ema_update(&t, &s, 0.0).unwrap(), s);
        let bad: ParameterSet<f64> = [("v".to_string(), Tensor::from_vec(vec![2], vec![1.0, 3.0]))].into_iter().collect();
        assert!(ema_update(&t, &bad, 0.5).is_err());
    }

    #[test]
    fn mode_names_roundtrip() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("semi".parse::<Mode>().is_err());
    }

    #[test]
    fn streams_are_balanced_and_deterministic() {
        assert_eq!(steps_per_epoch(32, 292, 8), 73);
        assert_eq!(steps_per_epoch(12, 0, 4), 6);
        let a = labeled_indices(5, 7, 3, 4);
        assert_eq!(a, labeled_indices(5, 7, 3, 4));
        // One full pass over the labeled set visits every sample once.
        let mut seen: Vec<usize> = (0..7u64).flat_map(|s| labeled_indices(1, 4, s, 4)).take(4).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        let mut u: Vec<usize> = (0..3).flat_map(|s| unlabeled_indices(1, 12, 0, s, 4)).collect();
        u.sort();
        assert_eq!(u, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn step_updates_teacher_by_ema_and_keeps_teachers_gradient_free() {
        let data = tiny_data();
        let mut tr = Trainer::new(tiny_config(Mode::Full)).unwrap();
        let batch = tr.batch(&data, 0, 0).unwrap();
        assert_eq!((batch.labeled.len(), batch.unlabeled.len()), (2, 2));
        let g = tr.gradients(&batch, 0.1, Mode::Full.terms()).unwrap();
        assert!(g.teacher_reached.is_empty());
        let before = tr.state.clone();
        tr.train_step(&batch, 3).unwrap();
        let replay = ema_update(&before.teacher, &tr.state.student, 0.99).unwrap();
        assert!(replay.max_abs_diff(&tr.state.teacher) < 1e-6);
        let replay = ema_update(before.eor_teacher.as_ref().unwrap(), tr.state.eor_student.as_ref().unwrap(), 0.99).unwrap();
        assert!(replay.max_abs_diff(tr.state.eor_teacher.as_ref().unwrap()) < 1e-6);
        assert_eq!(tr.state.step, 1);
    }

    #[test]
    fn supervised_mode_logs_zero_consistency() {
        let data = tiny_data();
        let mut tr = Trainer::new(tiny_config(Mode::Supervised)).unwrap();
        let batch = tr.batch(&data, 0, 0).unwrap();
        assert!(batch.unlabeled.is_empty());
        let b = tr.train_step(&batch, 20).unwrap();
        assert_eq!(b.unsupervised_sum(), 0.0);
        assert!(b.sup_cls > 0.0 && b.sup_loc > 0.0);
        assert!(tr.state.eor_student.is_none());
    }
}
