//! Evaluation: forward pass per scene, per-class NMS, average precision
//! at the configured IoU thresholds, metrics JSON.
//!
//! The metrics JSON is deterministic for a fixed config and checkpoint:
//! keys are emitted in sorted order and wall-clock timing is excluded
//! unless `--timing` is passed.

use std::path::Path;
use std::time::Instant;

use lgr_core::dataio::ObjectClass;
use lgr_core::detect::{decode_proposals, evaluate_detections, nms, ApReport, Detection};
use lgr_core::Scalar;
use serde_json::{json, Map, Value};

use crate::config::{Dtype, RunConfig};
use crate::dataset::{self, Dataset};
use crate::fail::{config_err, data_err, run_err, Failure};
use crate::model::{build_detector, load_checkpoint};

pub struct EvalArgs<'a> {
    pub config: &'a Path,
    pub ckpt: &'a Path,
    pub data: &'a Path,
    pub out: Option<&'a Path>,
    pub timing: bool,
    pub overrides: &'a [String],
}

pub fn run(args: &EvalArgs) -> Result<(), Failure> {
    let cfg = RunConfig::load(args.config, args.overrides).map_err(config_err)?;
    let ds = dataset::load_dir(args.data).map_err(data_err)?;
    let value = match cfg.dtype {
        Dtype::F32 => drive::<f32>(&cfg, &ds, args.ckpt, args.timing)?,
        Dtype::F64 => drive::<f64>(&cfg, &ds, args.ckpt, args.timing)?,
    };
    let text = format!("{:#}\n", value);
    print!("{text}");
    if let Some(out) = args.out {
        super::write_text_atomic(out, &text).map_err(data_err)?;
    }
    Ok(())
}

fn drive<S: Scalar>(
    cfg: &RunConfig,
    ds: &Dataset,
    ckpt: &Path,
    timing: bool,
) -> Result<Value, Failure> {
    let mut det = build_detector::<S>(cfg).map_err(config_err)?;
    load_checkpoint(ckpt, cfg, &mut det).map_err(run_err)?;
    let dcfg = cfg.detect_config();

    let mut detections: Vec<Vec<Detection>> = Vec::with_capacity(ds.len());
    let mut elapsed_ms = 0.0f64;
    for scene in &ds.scenes {
        let (coords, feats) = scene.as_inputs::<S>();
        let t0 = Instant::now();
        // Same sampling stream as training and inspection: the model is
        // scored on the region layout it was optimized for.
        let fwd = det.forward(&coords, &feats, cfg.seed, false).map_err(run_err)?;
        let decoded = decode_proposals(&fwd.proposals, &dcfg).map_err(run_err)?;
        let kept = nms(&decoded, cfg.nms_iou).map_err(run_err)?;
        elapsed_ms += t0.elapsed().as_secs_f64() * 1e3;
        detections.push(kept);
    }

    let ground_truth: Vec<_> = ds.scenes.iter().map(|s| s.boxes.clone()).collect();
    let reports =
        evaluate_detections(&detections, &ground_truth, cfg.num_classes(), &cfg.ap_ious)
            .map_err(run_err)?;
    Ok(metrics_json(
        &reports,
        ds.len(),
        timing.then_some(elapsed_ms / ds.len() as f64),
    ))
}

/// Builds the metrics document. serde_json maps iterate sorted by key,
/// so serialization is deterministic.
pub fn metrics_json(
    reports: &[ApReport],
    num_scenes: usize,
    per_scan_ms: Option<f64>,
) -> Value {
    let mut map_obj = Map::new();
    let mut per_class = Map::new();
    for r in reports {
        let key = format!("{}", r.iou_thresh);
        map_obj.insert(key.clone(), json!(r.mean_ap));
        let mut classes = Map::new();
        for (ci, ap) in r.per_class.iter().enumerate() {
            let name = ObjectClass::from_index(ci)
                .map(|c| c.name().to_string())
                .unwrap_or_else(|| format!("class{ci}"));
            classes.insert(name, ap.map_or(Value::Null, |v| json!(v)));
        }
        per_class.insert(key, Value::Object(classes));
    }
    let mut doc = Map::new();
    doc.insert("map".into(), Value::Object(map_obj));
    doc.insert("num_scenes".into(), json!(num_scenes));
    doc.insert("per_class".into(), Value::Object(per_class));
    if let Some(ms) = per_scan_ms {
        doc.insert("per_scan_ms".into(), json!(ms));
    }
    Value::Object(doc)
}
