//! Flat `key = value` run configuration with dotted namespaces.
//!
//! ```text
//! # comments run to end of line
//! train.mode = full
//! train.beta = 0.99
//! data.background = mixed
//! ```
//!
//! Later assignments win, so command-line overrides are simply applied after
//! the file. [`RunConfig::to_text`] writes every key and parses back to an
//! equal configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::Jitter;
use crate::eor::EoRVariant;
use crate::error::{Error, Result};
use crate::losses::RampShape;
use crate::metrics::IouMode;
use crate::synth::{
    dataset_dir, generate_dataset, load_dataset, split_labeled_unlabeled, write_dataset, BackgroundMode, Dataset, DatasetManifest,
    SplitManifest, SynthConfig,
};
use crate::types::Sample;
use crate::trainer::{EvalModel, Mode, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub percent_labeled: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { percent_labeled: 10.0, seed: 0 }
    }
}

/// Everything one command needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: SynthConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    /// Split scored by `evaluate` unless overridden.
    pub eval_split: String,
    pub dataset: Option<PathBuf>,
    pub split_manifest: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = Self {
            data: SynthConfig::default(),
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            eval_split: "test".into(),
            dataset: None,
            split_manifest: None,
        };
        c.sync();
        c
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn enum_value<T: serde::de::DeserializeOwned>(key: &str, value: &str, choices: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.into()))
        .map_err(|_| Error::config(key, format!("unknown value `{value}`; expected one of {choices}")))
}

fn enum_name<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

/// `(key, value)` pairs of a config text, in order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", n + 1), format!("expected `key = value`, got `{line}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses one `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::config(s, "override must look like key=value"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl RunConfig {
    /// Defaults, then the file (if any), then `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut c = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::config("--config", format!("cannot read {}: {e}", p.display())))?;
            for (k, v) in parse_pairs(&text)? {
                c.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in parse_pairs(text)? {
            c.set(&k, &v)?;
        }
        Ok(c)
    }

    /// Copies shared dimensions from the data section into the model.
    fn sync(&mut self) {
        let d = &mut self.train.detector;
        d.num_classes = self.data.num_classes;
        d.height = self.data.height;
        d.width = self.data.width;
        d.clip_len = self.train.aug.clip_len;
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if !(self.split.percent_labeled > 0.0 && self.split.percent_labeled <= 100.0) {
            return Err(Error::config(
                "split.percent_labeled",
                format!("{} must lie in (0, 100]", self.split.percent_labeled),
            ));
        }
        if self.train.aug.clip_len > self.data.frames {
            return Err(Error::config("aug.clip_len", format!("longer than data.frames = {}", self.data.frames)));
        }
        if !["train", "validation", "test"].contains(&self.eval_split.as_str()) {
            return Err(Error::config("eval.split", "expected train, validation or test"));
        }
        self.train.validate()
    }

    fn jitter(j: &mut Jitter, field: &str, key: &str, value: &str) -> Result<()> {
        match field {
            "p" => j.p = parse(key, value)?,
            "low" => j.low = parse(key, value)?,
            "high" => j.high = parse(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (d, t) = (&mut self.data, &mut self.train);
        match key {
            "data.num_classes" => d.num_classes = parse(key, value)?,
            "data.train_per_class" => d.train_per_class = parse(key, value)?,
            "data.val_per_class" => d.val_per_class = parse(key, value)?,
            "data.test_per_class" => d.test_per_class = parse(key, value)?,
            "data.frames" => d.frames = parse(key, value)?,
            "data.height" => d.height = parse(key, value)?,
            "data.width" => d.width = parse(key, value)?,
            "data.background" => d.background = enum_value::<BackgroundMode>(key, value, "static, dynamic, mixed")?,
            "data.noise" => d.noise = parse(key, value)?,
            "data.seed" => d.seed = parse(key, value)?,
            "split.percent_labeled" => self.split.percent_labeled = parse(key, value)?,
            "split.seed" => self.split.seed = parse(key, value)?,
            "train.mode" => t.mode = value.parse::<Mode>()?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.beta" => t.beta = parse(key, value)?,
            "train.lambda_max" => t.lambda_max = parse(key, value)?,
            "train.ramp_epochs" => t.ramp_epochs = parse(key, value)?,
            "train.ramp_shape" => t.ramp_shape = enum_value::<RampShape>(key, value, "linear, sigmoid")?,
            "train.lr" => t.adam.lr = parse(key, value)?,
            "train.adam_beta1" => t.adam.beta1 = parse(key, value)?,
            "train.adam_beta2" => t.adam.beta2 = parse(key, value)?,
            "train.adam_eps" => t.adam.eps = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "train.burn_in_epochs" => t.burn_in_epochs = parse(key, value)?,
            "train.eval_model" => t.eval_model = enum_value::<EvalModel>(key, value, "teacher, student")?,
            "train.stop_eor_gradient" => t.stop_eor_gradient = parse_bool(key, value)?,
            "train.eval_every" => t.eval_every = parse(key, value)?,
            "model.widths" => t.detector.widths = parse_list(key, value)?,
            "model.seed" => t.detector.seed = parse(key, value)?,
            "eor.channels" => t.eor.channels = parse_list(key, value)?,
            "eor.variant" => t.eor.variant = enum_value::<EoRVariant>(key, value, "volumetric, planar")?,
            "eor.pad_inputs" => t.eor.pad_inputs = parse_bool(key, value)?,
            "eor.seed" => t.eor.seed = parse(key, value)?,
            "aug.clip_len" => t.aug.clip_len = parse(key, value)?,
            "aug.hflip_p" => t.aug.hflip_p = parse(key, value)?,
            "aug.crop" => t.aug.crop = parse_bool(key, value)?,
            "aug.crop_min_scale" => t.aug.crop_min_scale = parse(key, value)?,
            "aug.strong.grayscale_p" => t.aug.grayscale_p = parse(key, value)?,
            "aug.strong.blur_p" => t.aug.blur_p = parse(key, value)?,
            "aug.strong.blur_sigma_min" => t.aug.blur_sigma.0 = parse(key, value)?,
            "aug.strong.blur_sigma_max" => t.aug.blur_sigma.1 = parse(key, value)?,
            "eval.split" => self.eval_split = value.to_string(),
            "eval.binarize_thresh" => t.binarize_thresh = parse(key, value)?,
            "eval.iou_mode" => t.iou_mode = enum_value::<IouMode>(key, value, "box, mask")?,
            "paths.dataset" => self.dataset = (!value.is_empty()).then(|| PathBuf::from(value)),
            "paths.split_manifest" => self.split_manifest = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => {
                let jitter = key.strip_prefix("aug.strong.").and_then(|rest| rest.rsplit_once('_'));
                match jitter {
                    Some(("contrast", f)) => Self::jitter(&mut t.aug.contrast, f, key, value)?,
                    Some(("hue", f)) => Self::jitter(&mut t.aug.hue, f, key, value)?,
                    Some(("brightness", f)) => Self::jitter(&mut t.aug.brightness, f, key, value)?,
                    Some(("saturation", f)) => Self::jitter(&mut t.aug.saturation, f, key, value)?,
                    _ => return Err(Error::config(key, "unknown key")),
                }
            }
        }
        self.sync();
        Ok(())
    }

    /// Every key with its current value, one per line.
    pub fn to_text(&self) -> String {
        let (d, t) = (&self.data, &self.train);
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut pairs: Vec<(String, String)> = [
            ("data.num_classes", d.num_classes.to_string()),
            ("data.train_per_class", d.train_per_class.to_string()),
            ("data.val_per_class", d.val_per_class.to_string()),
            ("data.test_per_class", d.test_per_class.to_string()),
            ("data.frames", d.frames.to_string()),
            ("data.height", d.height.to_string()),
            ("data.width", d.width.to_string()),
            ("data.background", enum_name(&d.background)),
            ("data.noise", d.noise.to_string()),
            ("data.seed", d.seed.to_string()),
            ("split.percent_labeled", self.split.percent_labeled.to_string()),
            ("split.seed", self.split.seed.to_string()),
            ("train.mode", t.mode.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.beta", t.beta.to_string()),
            ("train.lambda_max", t.lambda_max.to_string()),
            ("train.ramp_epochs", t.ramp_epochs.to_string()),
            ("train.ramp_shape", enum_name(&t.ramp_shape)),
            ("train.lr", t.adam.lr.to_string()),
            ("train.adam_beta1", t.adam.beta1.to_string()),
            ("train.adam_beta2", t.adam.beta2.to_string()),
            ("train.adam_eps", t.adam.eps.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.burn_in_epochs", t.burn_in_epochs.to_string()),
            ("train.eval_model", enum_name(&t.eval_model)),
            ("train.stop_eor_gradient", t.stop_eor_gradient.to_string()),
            ("train.eval_every", t.eval_every.to_string()),
            ("model.widths", list(&t.detector.widths)),
            ("model.seed", t.detector.seed.to_string()),
            ("eor.channels", list(&t.eor.channels)),
            ("eor.variant", enum_name(&t.eor.variant)),
            ("eor.pad_inputs", t.eor.pad_inputs.to_string()),
            ("eor.seed", t.eor.seed.to_string()),
            ("aug.clip_len", t.aug.clip_len.to_string()),
            ("aug.hflip_p", t.aug.hflip_p.to_string()),
            ("aug.crop", t.aug.crop.to_string()),
            ("aug.crop_min_scale", t.aug.crop_min_scale.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        for (name, j) in [("contrast", &t.aug.contrast), ("hue", &t.aug.hue), ("brightness", &t.aug.brightness), ("saturation", &t.aug.saturation)] {
            for (f, v) in [("p", j.p), ("low", j.low), ("high", j.high)] {
                pairs.push((format!("aug.strong.{name}_{f}"), v.to_string()));
            }
        }
        let tail = [
            ("aug.strong.grayscale_p", t.aug.grayscale_p.to_string()),
            ("aug.strong.blur_p", t.aug.blur_p.to_string()),
            ("aug.strong.blur_sigma_min", t.aug.blur_sigma.0.to_string()),
            ("aug.strong.blur_sigma_max", t.aug.blur_sigma.1.to_string()),
            ("eval.split", self.eval_split.clone()),
            ("eval.binarize_thresh", t.binarize_thresh.to_string()),
            ("eval.iou_mode", enum_name(&t.iou_mode)),
            ("paths.dataset", path(&self.dataset)),
            ("paths.split_manifest", path(&self.split_manifest)),
        ];
        pairs.extend(tail.into_iter().map(|(k, v)| (k.to_string(), v)));
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

impl RunConfig {
    /// Loads the dataset from `paths.dataset` or the cache, generating and
    /// caching it when absent. Without either location it is generated in memory.
    pub fn dataset(&self) -> Result<Dataset> {
        let Some(dir) = dataset_dir(self.dataset.as_deref(), &self.data) else {
            return generate_dataset(&self.data);
        };
        if dir.join("dataset.json").exists() {
            let ds = load_dataset(&dir)?;
            if ds.manifest.config != self.data {
                return Err(Error::config(
                    "paths.dataset",
                    format!("{} was generated from a different data configuration", dir.display()),
                ));
            }
            return Ok(ds);
        }
        let ds = generate_dataset(&self.data)?;
        write_dataset(&ds, &dir)?;
        Ok(ds)
    }

    /// The split named by `paths.split_manifest`, else a fresh one from `split.*`.
    pub fn splits(&self, manifest: &DatasetManifest) -> Result<SplitManifest> {
        match &self.split_manifest {
            Some(p) => SplitManifest::read(p),
            None => split_labeled_unlabeled(manifest, self.split.percent_labeled, self.split.seed),
        }
    }
}

/// Samples of one named split in manifest order.
pub fn split_samples(ds: &Dataset, splits: &SplitManifest, name: &str) -> Result<Vec<Sample>> {
    let ids: Vec<String> = match name {
        "train" => {
            let mut v = [splits.labeled.clone(), splits.unlabeled.clone()].concat();
            v.sort();
            v
        }
        "validation" => splits.validation.clone(),
        "test" => splits.test.clone(),
        other => return Err(Error::config("eval.split", format!("unknown split `{other}`; expected train, validation or test"))),
    };
    ids.iter()
        .map(|id| {
            ds.get(id)
                .map(|c| c.sample.clone())
                .ok_or_else(|| Error::InvalidInput(format!("split names unknown clip `{id}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_roundtrip_through_text() {
        let c = RunConfig::default();
        let text = c.to_text();
        assert!(text.contains("train.beta = 0.99\n"));
        assert!(text.contains("train.lambda_max = 0.1\n"));
        assert_eq!(RunConfig::from_text(&text).unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn later_assignments_win_and_errors_name_the_key() {
        let text = "train.beta = 0.9  # first\n\ntrain.beta=0.95\ndata.num_classes = 4\n";
        let c = RunConfig::from_text(text).unwrap();
        assert_eq!(c.train.beta, 0.95);
        assert_eq!(c.train.detector.num_classes, 4);
        let err = RunConfig::from_text("train.nope = 1").unwrap_err();
        assert!(err.to_string().contains("train.nope"));
        let err = RunConfig::from_text("train.epochs = many").unwrap_err();
        assert!(err.to_string().contains("train.epochs"));
        assert!(RunConfig::from_text("just words").is_err());
        let c = RunConfig::from_text("split.percent_labeled = 0").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("split.percent_labeled"));
    }

    #[test]
    fn overrides_apply_after_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "train.mode = +dop\ntrain.epochs = 3\n").unwrap();
        let c = RunConfig::load(Some(&p), &[parse_override("train.epochs=7").unwrap()]).unwrap();
        assert_eq!((c.train.mode, c.train.epochs), (Mode::PlusDoP, 7));
    }

    proptest! {
        #[test]
        fn random_configs_roundtrip(beta in 0.0f64..1.0, lr in 1e-6f64..1.0, pct in 1.0f64..100.0, seed in any::<u64>(), mode in 0usize..5, hue in -0.5f64..0.0) {
            let mut c = RunConfig::default();
            c.train.beta = beta;
            c.train.adam.lr = lr;
            c.split.percent_labeled = pct;
            c.train.seed = seed;
            c.train.mode = Mode::ALL[mode];
            c.train.aug.hue.low = hue;
            prop_assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
        }
    }
}
