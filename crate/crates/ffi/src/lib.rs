//! C ABI over the `stable-teacher` pipeline.
//!
//! Objects are opaque heap handles created by `st_*_new`/`st_*_load` and
//! released with the matching `st_*_free`. Every fallible call returns an
//! [`StStatus`]; on failure [`st_last_error`] describes the cause until the
//! next call on the same thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use stable_teacher::checkpoint;
use stable_teacher::config::{split_samples, RunConfig};
use stable_teacher::synth::{Dataset, SplitManifest};
use stable_teacher::trainer::{evaluate_model, train, RunPaths, TrainData, Trainer};
use stable_teacher::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Io = 4,
    Checkpoint = 5,
    InvalidInput = 6,
    Diverged = 7,
    Panic = 8,
}

/// Run configuration handle.
pub struct StConfig {
    inner: RunConfig,
}

/// Dataset plus its labeled/unlabeled partition.
pub struct StData {
    dataset: Dataset,
    splits: SplitManifest,
    train: TrainData,
}

/// Student/teacher state and optimizer.
pub struct StTrainer {
    inner: Trainer,
}

/// Headline numbers of one evaluation.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StMetrics {
    pub frame_map_50: f64,
    pub video_map_20: f64,
    pub video_map_50: f64,
    pub coherence: f64,
    pub num_videos: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> StStatus {
    match e {
        Error::Config { .. } => StStatus::Config,
        Error::Io { .. } | Error::Json { .. } => StStatus::Io,
        Error::Checkpoint { .. } => StStatus::Checkpoint,
        Error::Diverged { .. } | Error::NonFinite { .. } => StStatus::Diverged,
        _ => StStatus::InvalidInput,
    }
}

struct Fail(StStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> StStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            StStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(StStatus::NullArgument, format!("`{what}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(StStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    text(p, what).map(PathBuf::from)
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(StStatus::NullArgument, format!("`{what}` is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(StStatus::NullArgument, format!("`{what}` is null")))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(StStatus::NullArgument, "`out` is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn st_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn st_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a configuration file, or the defaults when `path` is null.
#[no_mangle]
pub unsafe extern "C" fn st_config_load(path: *const c_char, out: *mut *mut StConfig) -> StStatus {
    guard(|| {
        let p = if path.is_null() { None } else { Some(self::path(path, "path")?) };
        let inner = RunConfig::load(p.as_deref(), &[])?;
        emit(out, StConfig { inner })
    })
}

/// Sets one dotted key, e.g. `train.mode` to `full`.
#[no_mangle]
pub unsafe extern "C" fn st_config_set(config: *mut StConfig, key: *const c_char, value: *const c_char) -> StStatus {
    guard(|| {
        let c = handle_mut(config, "config")?;
        let (k, v) = (text(key, "key")?, text(value, "value")?);
        let mut next = c.inner.clone();
        next.set(k, v)?;
        next.validate()?;
        c.inner = next;
        Ok(())
    })
}

/// Writes the full `key = value` text of `config` to `path`.
#[no_mangle]
pub unsafe extern "C" fn st_config_save(config: *const StConfig, path: *const c_char) -> StStatus {
    guard(|| {
        let c = handle(config, "config")?;
        let p = self::path(path, "path")?;
        std::fs::write(&p, c.inner.to_text()).map_err(|e| Error::io(&p, e))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn st_config_free(config: *mut StConfig) {
    release(config);
}

/// Generates (or loads from cache) the dataset and split described by `config`.
#[no_mangle]
pub unsafe extern "C" fn st_data_load(config: *const StConfig, out: *mut *mut StData) -> StStatus {
    guard(|| {
        let c = &handle(config, "config")?.inner;
        let dataset = c.dataset()?;
        let splits = c.splits(&dataset.manifest)?;
        let train = TrainData::from_dataset(&dataset, &splits)?;
        emit(out, StData { dataset, splits, train })
    })
}

/// Clip counts: labeled, unlabeled, validation, test. `counts` must hold 4 entries.
#[no_mangle]
pub unsafe extern "C" fn st_data_counts(data: *const StData, counts: *mut usize) -> StStatus {
    guard(|| {
        let d = handle(data, "data")?;
        if counts.is_null() {
            return Err(Fail(StStatus::NullArgument, "`counts` is null".into()));
        }
        let s = &d.splits;
        let v = [s.labeled.len(), s.unlabeled.len(), s.validation.len(), s.test.len()];
        ptr::copy_nonoverlapping(v.as_ptr(), counts, 4);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn st_data_free(data: *mut StData) {
    release(data);
}

/// Fresh student/teacher state for the training section of `config`.
#[no_mangle]
pub unsafe extern "C" fn st_trainer_new(config: *const StConfig, out: *mut *mut StTrainer) -> StStatus {
    guard(|| {
        let c = &handle(config, "config")?.inner;
        emit(out, StTrainer { inner: Trainer::new(c.train.clone())? })
    })
}

/// Restores a trainer from a checkpoint, using the configuration stored in it.
#[no_mangle]
pub unsafe extern "C" fn st_trainer_load(checkpoint: *const c_char, out: *mut *mut StTrainer) -> StStatus {
    guard(|| {
        let p = path(checkpoint, "checkpoint")?;
        let (cfg, _) = checkpoint::load(&p)?;
        emit(out, StTrainer { inner: Trainer::resume(cfg, &p)? })
    })
}

/// Runs one epoch; `mean_loss` (nullable) receives the epoch's mean total loss.
#[no_mangle]
pub unsafe extern "C" fn st_trainer_epoch(trainer: *mut StTrainer, data: *const StData, mean_loss: *mut f64) -> StStatus {
    guard(|| {
        let t = &mut handle_mut(trainer, "trainer")?.inner;
        let d = handle(data, "data")?;
        let epoch = t.state.epoch;
        let mean = t.run_epoch(&d.train, epoch, |_, _| Ok(()))?;
        if !mean_loss.is_null() {
            *mean_loss = mean.total;
        }
        Ok(())
    })
}

/// Trains to the configured epoch budget, writing logs and checkpoints under `out_dir`.
#[no_mangle]
pub unsafe extern "C" fn st_trainer_train(trainer: *mut StTrainer, data: *const StData, out_dir: *const c_char) -> StStatus {
    guard(|| {
        let t = &mut handle_mut(trainer, "trainer")?.inner;
        let d = handle(data, "data")?;
        train(t, &d.train, &RunPaths::new(path(out_dir, "out_dir")?))?;
        Ok(())
    })
}

/// Epochs completed so far.
#[no_mangle]
pub unsafe extern "C" fn st_trainer_epochs_done(trainer: *const StTrainer) -> usize {
    trainer.as_ref().map_or(0, |t| t.inner.state.epoch)
}

/// Trainable scalars: base detector and, when present, the error recovery module.
#[no_mangle]
pub unsafe extern "C" fn st_trainer_parameter_counts(trainer: *const StTrainer, base: *mut usize, eor: *mut usize) -> StStatus {
    guard(|| {
        let s = &handle(trainer, "trainer")?.inner.state;
        if !base.is_null() {
            *base = s.student.num_scalars();
        }
        if !eor.is_null() {
            *eor = s.eor_student.as_ref().map_or(0, |p| p.num_scalars());
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn st_trainer_save(trainer: *const StTrainer, path: *const c_char) -> StStatus {
    guard(|| {
        let t = &handle(trainer, "trainer")?.inner;
        checkpoint::save(&self::path(path, "path")?, t.config(), &t.state)?;
        Ok(())
    })
}

/// Scores the evaluation model on `split` (`train`, `validation` or `test`).
/// When `report_path` is non-null the full JSON report is written there too.
#[no_mangle]
pub unsafe extern "C" fn st_trainer_evaluate(
    trainer: *const StTrainer,
    data: *const StData,
    split: *const c_char,
    report_path: *const c_char,
    out: *mut StMetrics,
) -> StStatus {
    guard(|| {
        let t = &handle(trainer, "trainer")?.inner;
        let d = handle(data, "data")?;
        let samples = split_samples(&d.dataset, &d.splits, text(split, "split")?)?;
        let (report, _) = evaluate_model(t, text(split, "split")?, &samples, &d.train.classes)?;
        if !report_path.is_null() {
            let p = path(report_path, "report_path")?;
            write_text(&p, &report.to_json())?;
        }
        if out.is_null() {
            return Err(Fail(StStatus::NullArgument, "`out` is null".into()));
        }
        *out = StMetrics {
            frame_map_50: report.frame_map_at(0.5).unwrap_or(0.0),
            video_map_20: report.video_map_at(0.2).unwrap_or(0.0),
            video_map_50: report.video_map_at(0.5).unwrap_or(0.0),
            coherence: report.coherence.unwrap_or(0.0),
            num_videos: report.num_videos,
        };
        Ok(())
    })
}

fn write_text(p: &Path, text: &str) -> Result<(), Fail> {
    std::fs::write(p, text).map_err(|e| Error::io(p, e).into())
}

#[no_mangle]
pub unsafe extern "C" fn st_trainer_free(trainer: *mut StTrainer) {
    release(trainer);
}
