//! Checkpoint archive: an 8-byte magic, a little-endian `u64` manifest length,
//! a JSON manifest, then raw little-endian `f32` tensor data.
//!
//! Tensor names are namespaced `base.student.*`, `base.teacher.*`,
//! `eor.student.*`, `eor.teacher.*`, `optim.m.*` and `optim.v.*`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::params::ParameterSet;
use crate::tensor::Tensor;
use crate::trainer::{TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"STCKPT01";
pub const FORMAT: &str = "stable-teacher-checkpoint/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Offset in `f32` elements from the start of the data section.
    offset: usize,
}

/// Randomness is stateless given the seed; the position is all that is needed to continue.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RngState {
    seed: u64,
    next_step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config_hash: String,
    config: TrainConfig,
    epoch: usize,
    step: u64,
    adam_t: u64,
    rng: RngState,
    tensors: Vec<Entry>,
}

fn named<'a>(prefix: &'a str, p: &'a ParameterSet<f32>) -> impl Iterator<Item = (String, &'a Tensor<f32>)> + 'a {
    p.iter().map(move |(k, v)| (format!("{prefix}{k}"), v))
}

fn checkpoint_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), reason: reason.into() }
}

pub fn save(path: &Path, config: &TrainConfig, state: &TrainState) -> Result<()> {
    let mut sets: Vec<(String, &Tensor<f32>)> = Vec::new();
    sets.extend(named("base.student.", &state.student));
    sets.extend(named("base.teacher.", &state.teacher));
    if let (Some(s), Some(t)) = (&state.eor_student, &state.eor_teacher) {
        sets.extend(named("eor.student.", s));
        sets.extend(named("eor.teacher.", t));
    }
    sets.extend(named("optim.m.", &state.optimizer.m));
    sets.extend(named("optim.v.", &state.optimizer.v));
    let mut offset = 0;
    let tensors = sets
        .iter()
        .map(|(name, t)| {
            let e = Entry { name: name.clone(), shape: t.shape().to_vec(), offset };
            offset += t.len();
            e
        })
        .collect();
    let manifest = Manifest {
        format: FORMAT.into(),
        config_hash: state.config_hash.clone(),
        config: config.clone(),
        epoch: state.epoch,
        step: state.step,
        adam_t: state.optimizer.t,
        rng: RngState { seed: config.seed, next_step: state.step },
        tensors,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut bytes = Vec::with_capacity(16 + json.len() + offset * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, t) in &sets {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint, verifying the stored hash against the stored configuration.
pub fn load(path: &Path) -> Result<(TrainConfig, TrainState)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(checkpoint_err(path, "not a checkpoint (bad magic)"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(16..16 + len).ok_or_else(|| checkpoint_err(path, "truncated manifest"))?;
    let m: Manifest = serde_json::from_slice(json).map_err(|e| checkpoint_err(path, format!("bad manifest: {e}")))?;
    if m.format != FORMAT {
        return Err(checkpoint_err(path, format!("format `{}`, expected `{FORMAT}`", m.format)));
    }
    if m.config_hash != m.config.hash() {
        return Err(checkpoint_err(
            path,
            format!("stored config hash {} does not match its configuration ({})", m.config_hash, m.config.hash()),
        ));
    }
    let data = &bytes[16 + len..];
    let mut sets: [ParameterSet<f32>; 6] = Default::default();
    const PREFIXES: [&str; 6] = ["base.student.", "base.teacher.", "eor.student.", "eor.teacher.", "optim.m.", "optim.v."];
    for e in &m.tensors {
        let n: usize = e.shape.iter().product();
        let raw = data
            .get(e.offset * 4..(e.offset + n) * 4)
            .ok_or_else(|| checkpoint_err(path, format!("data for `{}` is truncated", e.name)))?;
        let vals = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let (i, rest) = PREFIXES
            .iter()
            .enumerate()
            .find_map(|(i, p)| e.name.strip_prefix(p).map(|r| (i, r)))
            .ok_or_else(|| checkpoint_err(path, format!("unknown entry `{}`", e.name)))?;
        sets[i].insert(rest, Tensor::from_vec(e.shape.clone(), vals));
    }
    let [student, teacher, eor_student, eor_teacher, m_set, v_set] = sets;
    let eor_student = (!eor_student.is_empty()).then_some(eor_student);
    let eor_teacher = (!eor_teacher.is_empty()).then_some(eor_teacher);
    let optimizer = Adam { config: m.config.adam, m: m_set, v: v_set, t: m.adam_t };
    let state = TrainState {
        student,
        teacher,
        eor_student,
        eor_teacher,
        optimizer,
        epoch: m.epoch,
        step: m.step,
        config_hash: m.config_hash,
    };
    check_compatible(path, &crate::trainer::Trainer::new(m.config.clone())?.state, &state)?;
    Ok((m.config, state))
}

/// Errors naming every entry of `expected` that `loaded` lacks or shapes differently.
pub fn check_compatible(path: &Path, expected: &TrainState, loaded: &TrainState) -> Result<()> {
    let empty = ParameterSet::new();
    let pairs: [(&str, &ParameterSet<f32>, &ParameterSet<f32>); 6] = [
        ("base.student.", &expected.student, &loaded.student),
        ("base.teacher.", &expected.teacher, &loaded.teacher),
        ("eor.student.", expected.eor_student.as_ref().unwrap_or(&empty), loaded.eor_student.as_ref().unwrap_or(&empty)),
        ("eor.teacher.", expected.eor_teacher.as_ref().unwrap_or(&empty), loaded.eor_teacher.as_ref().unwrap_or(&empty)),
        ("optim.m.", &expected.optimizer.m, &loaded.optimizer.m),
        ("optim.v.", &expected.optimizer.v, &loaded.optimizer.v),
    ];
    let mut missing = Vec::new();
    let mut unexpected = Vec::new();
    for (prefix, want, got) in pairs {
        for (name, t) in want.iter() {
            match got.get(name) {
                Some(g) if g.shape() == t.shape() => {}
                _ => missing.push(format!("{prefix}{name}")),
            }
        }
        unexpected.extend(got.names().filter(|n| want.get(n).is_none()).map(|n| format!("{prefix}{n}")));
    }
    if !missing.is_empty() {
        return Err(checkpoint_err(path, format!("missing or misshapen entries: {}", missing.join(", "))));
    }
    if !unexpected.is_empty() {
        return Err(checkpoint_err(path, format!("unexpected entries: {}", unexpected.join(", "))));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::DetectorConfig;
    use crate::eor::EoRConfig;
    use crate::trainer::{Mode, Trainer};

    fn small(mode: Mode) -> TrainConfig {
        TrainConfig {
            mode,
            batch_size: 2,
            detector: DetectorConfig { num_classes: 2, height: 16, width: 16, widths: vec![4, 8], ..DetectorConfig::default() },
            eor: EoRConfig { channels: vec![4, 8], ..EoRConfig::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for mode in [Mode::Full, Mode::MeanTeacher] {
            let mut tr = Trainer::new(small(mode)).unwrap();
            tr.state.epoch = 3;
            tr.state.step = 17;
            tr.state.optimizer.t = 17;
            for (_, t) in tr.state.optimizer.v.iter_mut() {
                t.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 0.5);
            }
            let path = dir.path().join(format!("{mode}.ckpt"));
            save(&path, tr.config(), &tr.state).unwrap();
            let (cfg, state) = load(&path).unwrap();
            assert_eq!(&cfg, tr.config());
            assert_eq!(state, tr.state);
            assert_eq!(state.student.max_abs_diff(&tr.state.student), 0.0);
        }
    }

    #[test]
    fn rejects_corruption_and_edited_hash() {
        let dir = tempfile::tempdir().unwrap();
        let tr = Trainer::new(small(Mode::Full)).unwrap();
        let path = dir.path().join("a.ckpt");
        save(&path, tr.config(), &tr.state).unwrap();
        let bytes = fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(load(&path).unwrap_err().to_string().contains("magic"));

        let hash = tr.state.config_hash.as_bytes();
        let pos = bytes.windows(hash.len()).position(|w| w == hash).unwrap();
        let mut edited = bytes.clone();
        edited[pos..pos + hash.len()].fill(b'0');
        fs::write(&path, &edited).unwrap();
        assert!(load(&path).unwrap_err().to_string().contains("hash"));

        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load(&path).unwrap_err().to_string().contains("truncated"));

        let mut partial = tr.state.clone();
        partial.eor_student = None;
        partial.eor_teacher = None;
        save(&path, tr.config(), &partial).unwrap();
        let err = load(&path).unwrap_err().to_string();
        assert!(err.contains("eor.student.head.weight"), "{err}");
    }

    #[test]
    fn resume_requires_matching_config() {
        let dir = tempfile::tempdir().unwrap();
        let tr = Trainer::new(small(Mode::Full)).unwrap();
        let path = dir.path().join("a.ckpt");
        save(&path, tr.config(), &tr.state).unwrap();
        let longer = TrainConfig { epochs: 99, ..small(Mode::Full) };
        assert!(Trainer::resume(longer, &path).is_ok());
        let other = TrainConfig { beta: 0.9, ..small(Mode::Full) };
        assert!(Trainer::resume(other, &path).unwrap_err().to_string().contains("config hash"));
    }
}
