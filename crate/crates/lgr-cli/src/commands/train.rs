//! Training: epoch loop with step-decayed Adam, per-epoch JSONL log,
//! periodic and final checkpoints. A non-finite loss aborts with the
//! numeric exit code and a diagnostic naming the epoch and scene.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use lgr_core::dataio::augment;
use lgr_core::detect::detection_loss;
use lgr_core::nncore::{Adam, AdamConfig};
use lgr_core::rng::{derive_seed, seeded_rng};
use lgr_core::Scalar;
use rand::seq::SliceRandom;
use serde_json::json;

use crate::config::{Dtype, RunConfig};
use crate::dataset::{self, Dataset};
use crate::fail::{config_err, data_err, run_err, Failure};
use crate::model::{build_detector, save_checkpoint};

pub struct TrainArgs<'a> {
    pub config: &'a Path,
    pub data: &'a Path,
    pub out: &'a Path,
    pub log: Option<&'a Path>,
    pub overrides: &'a [String],
}

pub fn run(args: &TrainArgs) -> Result<(), Failure> {
    let cfg = RunConfig::load(args.config, args.overrides).map_err(config_err)?;
    let ds = dataset::load_dir(args.data).map_err(data_err)?;
    let log_path: PathBuf = args
        .log
        .map(Path::to_path_buf)
        .unwrap_or_else(|| args.out.with_extension("log.jsonl"));
    match cfg.dtype {
        Dtype::F32 => drive::<f32>(&cfg, &ds, args.out, &log_path),
        Dtype::F64 => drive::<f64>(&cfg, &ds, args.out, &log_path),
    }
}

fn drive<S: Scalar>(
    cfg: &RunConfig,
    ds: &Dataset,
    out: &Path,
    log_path: &Path,
) -> Result<(), Failure> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| {
                Failure::data(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    let mut det = build_detector::<S>(cfg).map_err(config_err)?;
    let mut opt = Adam::<S>::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let dcfg = cfg.detect_config();
    let weights = cfg.loss_weights();
    let mut log = std::io::BufWriter::new(std::fs::File::create(log_path).map_err(
        |e| Failure::data(format!("cannot create {}: {e}", log_path.display())),
    )?);

    for epoch in 1..=cfg.epochs {
        if cfg.bn_freeze_epoch > 0 && epoch == cfg.bn_freeze_epoch + 1 {
            det.freeze_norm_stats();
        }
        let lr = cfg.lr_for_epoch(epoch);
        opt.set_lr(lr);
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut seeded_rng(derive_seed(cfg.seed, &[11, epoch as u64])));

        let mut sums = [0.0f64; 5]; // total, vote, objectness, box, class
        for batch in order.chunks(cfg.batch) {
            for t in det.trainable_mut() {
                t.zero_grad();
            }
            let inv = 1.0 / batch.len() as f64;
            for &si in batch {
                let scene = if cfg.augment {
                    augment(
                        &ds.scenes[si],
                        derive_seed(cfg.seed, &[12, epoch as u64, si as u64]),
                    )
                    .map_err(run_err)?
                } else {
                    ds.scenes[si].clone()
                };
                let (coords, feats) = scene.as_inputs::<S>();
                // Sampling (FPS, queries, grouping) uses the same seed stream as
                // evaluation so the trained model sees the exact region layout it
                // will be scored on.
                let fwd = det.forward(&coords, &feats, cfg.seed, true).map_err(run_err)?;
                let (bd, mut d_head, mut d_votes) = detection_loss(
                    &fwd.proposals.head,
                    &fwd.proposals.centers,
                    &fwd.vote_coords,
                    &fwd.seeds.coords,
                    &scene.boxes,
                    &dcfg,
                    &weights,
                )
                .map_err(run_err)?;
                if !bd.total.is_finite() {
                    return Err(Failure::numeric(format!(
                        "non-finite loss at epoch {epoch}, scene {} ({}): vote={} objectness={} box={} class={}",
                        si,
                        ds.paths[si].display(),
                        bd.vote,
                        bd.objectness,
                        bd.bbox,
                        bd.class
                    )));
                }
                let s_inv = S::of(inv);
                for v in d_head.data_mut() {
                    *v = *v * s_inv;
                }
                for v in d_votes.iter_mut() {
                    for a in v.iter_mut() {
                        *a = *a * s_inv;
                    }
                }
                det.backward(&d_head, &d_votes).map_err(run_err)?;
                sums[0] += bd.total;
                sums[1] += bd.vote;
                sums[2] += bd.objectness;
                sums[3] += bd.bbox;
                sums[4] += bd.class;
            }
            opt.step(&mut det.trainable_mut()).map_err(run_err)?;
        }

        let n = ds.len() as f64;
        let line = json!({
            "epoch": epoch,
            "lr": lr,
            "total": sums[0] / n,
            "vote": sums[1] / n,
            "objectness": sums[2] / n,
            "box": sums[3] / n,
            "class": sums[4] / n,
            "scenes": ds.len(),
        });
        writeln!(log, "{line}").map_err(|e| Failure::data(e.to_string()))?;
        log.flush().map_err(|e| Failure::data(e.to_string()))?;
        println!("{line}");

        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            save_checkpoint(out, cfg, &mut det).map_err(run_err)?;
        }
    }
    // Without a freeze point the running statistics lag the weights they were
    // accumulated under; refresh them with the final weights so the stored
    // estimates match what evaluation-mode forwards will normalize with.
    if cfg.bn_freeze_epoch == 0 || cfg.epochs <= cfg.bn_freeze_epoch {
        let passes = (64 / ds.len().max(1)).max(1);
        for _ in 0..passes {
            for scene in &ds.scenes {
                let (coords, feats) = scene.as_inputs::<S>();
                det.forward(&coords, &feats, cfg.seed, true).map_err(run_err)?;
            }
        }
    }
    save_checkpoint(out, cfg, &mut det).map_err(run_err)?;
    Ok(())
}
