//! Checkpoints: every parameter set and its Adam state in one array
//! container, with architecture, step counter and RNG position in the
//! manifest. Loading restores bit-identical forwards.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::ArrayContainer;
use crate::error::{DrdgError, Result};
use crate::optim::AdamSetState;
use crate::tensor::Tensor;

use super::{ArchConfig, ModelState, ParamSet, SetName, ALL_SETS};

pub const CHECKPOINT_KIND: &str = "drdg-checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    arch: ArchConfig,
    step: u64,
    adam_t: Vec<(String, u64)>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// What a load had to fill in or ignore.
#[derive(Debug, Default)]
pub struct LoadReport {
    /// Parameter arrays absent from the file, restored as zeros.
    pub missing: Vec<String>,
    pub warnings: Vec<String>,
}

pub fn save_checkpoint(
    state: &ModelState,
    stem: &Path,
    extra: serde_json::Value,
) -> Result<()> {
    let mut c = ArrayContainer::new();
    let mut adam_t = Vec::new();
    for &set in ALL_SETS {
        for (name, t) in state.set(set).arrays() {
            c.insert(&format!("param/{}/{}", set, name), t.clone());
        }
        let opt = state.opt(set);
        for (idx, (name, _)) in state.set(set).arrays().enumerate() {
            c.insert(&format!("adam/{}/{}/m", set, name), opt.m[idx].clone());
            c.insert(&format!("adam/{}/{}/v", set, name), opt.v[idx].clone());
        }
        adam_t.push((set.to_string(), opt.t));
    }
    let meta = CheckpointMeta {
        kind: CHECKPOINT_KIND.to_string(),
        arch: state.arch.clone(),
        step: state.step,
        adam_t,
        extra,
    };
    c.save(stem, serde_json::to_value(meta)?)
}

/// Load a checkpoint. Arrays missing from the file (for example a checkpoint
/// with its sample-reweighter or discriminator deleted) come back as zeros
/// and are listed in the report; shape mismatches are errors.
pub fn load_checkpoint(stem: &Path) -> Result<(ModelState, LoadReport)> {
    let (container, manifest) = ArrayContainer::load(stem)?;
    let meta: CheckpointMeta = serde_json::from_value(manifest.meta)?;
    if meta.kind != CHECKPOINT_KIND {
        return Err(DrdgError::Checkpoint(format!(
            "manifest kind {:?} is not a checkpoint",
            meta.kind
        )));
    }
    // Template state defines the canonical array names and shapes.
    let mut state = ModelState::new(meta.arch.clone(), 0)?;
    state.step = meta.step;
    let mut report = LoadReport::default();

    for &set in ALL_SETS {
        let template: Vec<(String, Vec<usize>)> = state
            .set(set)
            .arrays()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect();
        let mut arrays = Vec::with_capacity(template.len());
        let mut m = Vec::with_capacity(template.len());
        let mut v = Vec::with_capacity(template.len());
        for (name, shape) in &template {
            let key = format!("param/{}/{}", set, name);
            let t = match container.get(&key) {
                Some(t) => {
                    if t.shape() != shape.as_slice() {
                        return Err(DrdgError::Checkpoint(format!(
                            "array {} has shape {:?}, expected {:?}",
                            key,
                            t.shape(),
                            shape
                        )));
                    }
                    t.clone()
                }
                None => {
                    report.missing.push(key.clone());
                    report
                        .warnings
                        .push(format!("missing array {}, restored as zeros", key));
                    Tensor::zeros(shape)
                }
            };
            arrays.push((name.clone(), t));
            let load_moment = |suffix: &str, sink: &mut Vec<Tensor>| {
                let mkey = format!("adam/{}/{}/{}", set, name, suffix);
                match container.get(&mkey) {
                    Some(t) if t.shape() == shape.as_slice() => sink.push(t.clone()),
                    _ => sink.push(Tensor::zeros(shape)),
                }
            };
            load_moment("m", &mut m);
            load_moment("v", &mut v);
        }
        let t_counter = meta
            .adam_t
            .iter()
            .find(|(n, _)| n == set.as_str())
            .map(|(_, t)| *t)
            .unwrap_or(0);
        state.insert_loaded(
            set,
            ParamSet::new(arrays),
            AdamSetState { t: t_counter, m, v },
        );
    }
    Ok((state, report))
}

/// Remove every array of the given sets from a saved checkpoint, in place.
/// Used to demonstrate that inference does not depend on them.
pub fn strip_sets_from_checkpoint(stem: &Path, sets: &[SetName]) -> Result<()> {
    let (mut container, manifest) = ArrayContainer::load(stem)?;
    let names: Vec<String> = container
        .names()
        .filter(|n| {
            sets.iter().any(|s| {
                n.starts_with(&format!("param/{}/", s)) || n.starts_with(&format!("adam/{}/", s))
            })
        })
        .map(str::to_string)
        .collect();
    for n in names {
        container.remove(&n);
    }
    container.save(stem, manifest.meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{encoder_forward, ArchConfig, IN_CHANNELS};

    #[test]
    fn checkpoint_round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        let state = ModelState::new(ArchConfig::tiny(), 11).unwrap();
        save_checkpoint(&state, &stem, serde_json::json!({"note": "t"})).unwrap();
        let (loaded, report) = load_checkpoint(&stem).unwrap();
        assert!(report.missing.is_empty());

        let arch = &state.arch;
        let mut imgs = Tensor::zeros(&[2, arch.image_hw.0, arch.image_hw.1, IN_CHANNELS]);
        for (i, v) in imgs.data_mut().iter_mut().enumerate() {
            *v = ((i * 7919) % 499) as f64 / 499.0;
        }
        let a = encoder_forward(&state, &imgs).unwrap();
        let b = encoder_forward(&loaded, &imgs).unwrap();
        assert_eq!(a.tensor(), b.tensor());
    }

    #[test]
    fn stripped_sets_load_as_zeros_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        let state = ModelState::new(ArchConfig::tiny(), 5).unwrap();
        save_checkpoint(&state, &stem, serde_json::Value::Null).unwrap();
        strip_sets_from_checkpoint(&stem, &[SetName::SrmReal, SetName::SrmFake]).unwrap();
        let (loaded, report) = load_checkpoint(&stem).unwrap();
        assert!(!report.missing.is_empty());
        for (_, t) in loaded.set(SetName::SrmReal).arrays() {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
        // untouched sets intact
        assert_eq!(
            loaded.param_hash(SetName::Enc),
            state.param_hash(SetName::Enc)
        );
    }
}
