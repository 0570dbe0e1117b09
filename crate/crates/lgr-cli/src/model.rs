//! Detector construction and checkpointing.
//!
//! Checkpoints hold every named parameter (including batch-norm running
//! statistics) plus a `meta.arch` entry carrying the architecture
//! fingerprint; loading into a differently-configured model is refused.

use std::path::Path;

use lgr_core::detect::Detector;
use lgr_core::nncore::{load_state, save_state, StateEntry};
use lgr_core::rng::{derive_seed, seeded_rng};
use lgr_core::{invalid_arg, Result, Scalar};

use crate::config::RunConfig;

/// Name of the checkpoint entry holding the fingerprint.
const ARCH_ENTRY: &str = "meta.arch";

/// Builds a freshly initialized detector. Initialization draws from a
/// stream derived from the run seed, so a config fully determines the
/// starting weights.
pub fn build_detector<S: Scalar>(cfg: &RunConfig) -> Result<Detector<S>> {
    let mut rng = seeded_rng(derive_seed(cfg.seed, &[10]));
    Detector::new(cfg.backbone_config(), cfg.detect_config(), &mut rng)
}

/// Writes all model parameters and the architecture fingerprint. The
/// write is atomic: a temporary file is renamed over the target.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    cfg: &RunConfig,
    det: &mut Detector<S>,
) -> Result<()> {
    let mut entries = Vec::new();
    let fp = cfg.fingerprint();
    entries.push(StateEntry::new(
        ARCH_ENTRY,
        vec![fp.len()],
        fp.bytes().map(|b| b as f64).collect(),
    ));
    for (name, t) in det.named_mut() {
        entries.push(StateEntry::new(
            name,
            t.shape().to_vec(),
            t.data().iter().map(|v| v.as_f64()).collect(),
        ));
    }
    let tmp = tmp_path(path);
    save_state(&tmp, S::DTYPE, &entries)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint into a detector built from `cfg`, after verifying
/// the stored fingerprint matches the config's.
pub fn load_checkpoint<S: Scalar>(
    path: &Path,
    cfg: &RunConfig,
    det: &mut Detector<S>,
) -> Result<()> {
    let entries = load_state(path)?;
    let stored = entries
        .iter()
        .find(|e| e.name == ARCH_ENTRY)
        .ok_or_else(|| invalid_arg!("checkpoint {} has no architecture entry", path.display()))?;
    let stored_fp: String =
        stored.data.iter().map(|&b| b as u8 as char).collect();
    let want = cfg.fingerprint();
    if stored_fp != want {
        return Err(invalid_arg!(
            "checkpoint architecture does not match the config\n  checkpoint: {stored_fp}\n  config:     {want}"
        ));
    }
    let mut named = det.named_mut();
    let mut used = vec![false; entries.len()];
    for (name, t) in named.iter_mut() {
        let (ei, entry) = entries
            .iter()
            .enumerate()
            .find(|(_, e)| &e.name == name)
            .ok_or_else(|| invalid_arg!("checkpoint is missing parameter {name}"))?;
        if entry.shape != t.shape() {
            return Err(invalid_arg!(
                "checkpoint parameter {name} has shape {:?}, model wants {:?}",
                entry.shape,
                t.shape()
            ));
        }
        for (dst, &src) in t.data_mut().iter_mut().zip(&entry.data) {
            *dst = S::of(src);
        }
        used[ei] = true;
    }
    for (ei, entry) in entries.iter().enumerate() {
        if !used[ei] && entry.name != ARCH_ENTRY {
            return Err(invalid_arg!(
                "checkpoint has extra parameter {} not present in the model",
                entry.name
            ));
        }
    }
    Ok(())
}

fn tmp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}
