//! Average precision over scene collections.

use super::boxes::{iou_aabb, Detection, GtBox};
use crate::{invalid_arg, Result};

/// Per-class and mean average precision at one IoU threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct ApReport {
    pub iou_thresh: f64,
    /// `None` for classes with no ground truth anywhere (excluded from
    /// the mean).
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes that have ground truth; 0 when none do.
    pub mean_ap: f64,
}

/// Computes per-class average precision over a collection of scenes.
/// Detections are ranked by descending score globally per class (ties by
/// scene then input order) and matched greedily: each takes the highest
/// IoU among that scene's still-unmatched ground-truth boxes of its
/// class, counting as a true positive when that IoU reaches the
/// threshold. AP is the exact area under the precision-recall curve
/// with the running-maximum precision envelope.
pub fn average_precision(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<GtBox>],
    num_classes: usize,
    iou_thresh: f64,
) -> Result<ApReport> {
    if detections.len() != ground_truth.len() {
        return Err(invalid_arg!(
            "{} detection scenes vs {} ground-truth scenes",
            detections.len(),
            ground_truth.len()
        ));
    }
    if !(0.0..=1.0).contains(&iou_thresh) {
        return Err(invalid_arg!("iou threshold {iou_thresh} outside [0, 1]"));
    }
    if num_classes == 0 {
        return Err(invalid_arg!("need at least one class"));
    }
    for d in detections.iter().flatten() {
        if d.label >= num_classes {
            return Err(invalid_arg!("detection label {} out of range", d.label));
        }
    }
    for g in ground_truth.iter().flatten() {
        if g.label >= num_classes {
            return Err(invalid_arg!("ground-truth label {} out of range", g.label));
        }
    }

    let mut per_class = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let num_gt: usize = ground_truth
            .iter()
            .map(|g| g.iter().filter(|b| b.label == class).count())
            .sum();
        if num_gt == 0 {
            per_class.push(None);
            continue;
        }
        // (scene, index, score), ranked by score descending with
        // deterministic ties.
        let mut ranked: Vec<(usize, usize, f64)> = Vec::new();
        for (si, dets) in detections.iter().enumerate() {
            for (di, d) in dets.iter().enumerate() {
                if d.label == class {
                    ranked.push((si, di, d.score));
                }
            }
        }
        ranked.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });
        let mut matched: Vec<Vec<bool>> =
            ground_truth.iter().map(|g| vec![false; g.len()]).collect();
        let mut true_pos = Vec::with_capacity(ranked.len());
        for &(si, di, _) in &ranked {
            let det = &detections[si][di];
            let mut best = (0.0f64, usize::MAX);
            for (gi, gt) in ground_truth[si].iter().enumerate() {
                if gt.label != class || matched[si][gi] {
                    continue;
                }
                let iou = iou_aabb(&det.bbox, &gt.bbox);
                if iou > best.0 {
                    best = (iou, gi);
                }
            }
            if best.1 != usize::MAX && best.0 >= iou_thresh {
                matched[si][best.1] = true;
                true_pos.push(true);
            } else {
                true_pos.push(false);
            }
        }
        per_class.push(Some(area_under_pr(&true_pos, num_gt)));
    }

    let present: Vec<f64> = per_class.iter().filter_map(|a| *a).collect();
    let mean_ap = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(ApReport { iou_thresh, per_class, mean_ap })
}

/// Exact precision-recall area for a ranked true-positive sequence.
fn area_under_pr(true_pos: &[bool], num_gt: usize) -> f64 {
    let mut precision = Vec::with_capacity(true_pos.len());
    let mut recall = Vec::with_capacity(true_pos.len());
    let mut tp = 0usize;
    for (rank, &hit) in true_pos.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    // Running-maximum envelope from the right.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        if precision[i + 1] > precision[i] {
            precision[i] = precision[i + 1];
        }
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..precision.len() {
        if recall[i] > prev_recall {
            ap += (recall[i] - prev_recall) * precision[i];
            prev_recall = recall[i];
        }
    }
    ap
}

/// Average precision at several thresholds over the same scenes.
pub fn evaluate_detections(
    detections: &[Vec<Detection>],
    ground_truth: &[Vec<GtBox>],
    num_classes: usize,
    iou_thresholds: &[f64],
) -> Result<Vec<ApReport>> {
    iou_thresholds
        .iter()
        .map(|&t| average_precision(detections, ground_truth, num_classes, t))
        .collect()
}
