//! Axis-aligned 3D boxes, IoU, and non-maximum suppression.

use crate::{invalid_arg, Result};

/// Axis-aligned box given by center and full extents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3 {
    pub center: [f64; 3],
    /// Full side lengths, all positive.
    pub size: [f64; 3],
}

impl Box3 {
    pub fn new(center: [f64; 3], size: [f64; 3]) -> Result<Self> {
        if size.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(invalid_arg!("box size {:?} must be positive and finite", size));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(invalid_arg!("box center {:?} must be finite", center));
        }
        Ok(Box3 { center, size })
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn min_corner(&self) -> [f64; 3] {
        [
            self.center[0] - 0.5 * self.size[0],
            self.center[1] - 0.5 * self.size[1],
            self.center[2] - 0.5 * self.size[2],
        ]
    }

    pub fn max_corner(&self) -> [f64; 3] {
        [
            self.center[0] + 0.5 * self.size[0],
            self.center[1] + 0.5 * self.size[1],
            self.center[2] + 0.5 * self.size[2],
        ]
    }
}

/// Ground-truth box with class label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtBox {
    pub bbox: Box3,
    pub label: usize,
}

/// Decoded detection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: Box3,
    pub label: usize,
    /// Combined confidence: objectness times class probability.
    pub score: f64,
    pub objectness: f64,
}

/// Intersection over union of two axis-aligned boxes. Zero when they do
/// not overlap.
pub fn iou_aabb(a: &Box3, b: &Box3) -> f64 {
    let amin = a.min_corner();
    let amax = a.max_corner();
    let bmin = b.min_corner();
    let bmax = b.max_corner();
    let mut inter = 1.0;
    for i in 0..3 {
        let lo = amin[i].max(bmin[i]);
        let hi = amax[i].min(bmax[i]);
        if hi <= lo {
            return 0.0;
        }
        inter *= hi - lo;
    }
    let union = a.volume() + b.volume() - inter;
    inter / union
}

/// Greedy per-class non-maximum suppression. Within each class,
/// detections are visited by descending score (ties by ascending input
/// index); a detection is kept unless a kept detection of the same class
/// overlaps it with IoU above `iou_thresh`. Kept detections return in
/// score order with the same tie rule.
pub fn nms(detections: &[Detection], iou_thresh: f64) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&iou_thresh) {
        return Err(invalid_arg!("nms iou threshold {iou_thresh} outside [0, 1]"));
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| {
        detections[j]
            .score
            .partial_cmp(&detections[i].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut kept: Vec<usize> = Vec::new();
    'outer: for &i in &order {
        for &k in &kept {
            if detections[k].label == detections[i].label
                && iou_aabb(&detections[k].bbox, &detections[i].bbox) > iou_thresh
            {
                continue 'outer;
            }
        }
        kept.push(i);
    }
    Ok(kept.into_iter().map(|i| detections[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(center: [f64; 3]) -> Box3 {
        Box3::new(center, [1.0, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn iou_of_identical_boxes_is_one() {
        let b = unit_box([0.3, -0.2, 5.0]);
        assert_eq!(iou_aabb(&b, &b), 1.0);
    }

    #[test]
    fn iou_matches_hand_computation() {
        // Unit cubes offset by 0.5 on x: intersection 0.5, union 1.5.
        let a = unit_box([0.0, 0.0, 0.0]);
        let b = unit_box([0.5, 0.0, 0.0]);
        assert!((iou_aabb(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        // Touching faces count as no overlap.
        let c = unit_box([1.0, 0.0, 0.0]);
        assert_eq!(iou_aabb(&a, &c), 0.0);
        // Disjoint.
        let d = unit_box([3.0, 0.0, 0.0]);
        assert_eq!(iou_aabb(&a, &d), 0.0);
    }

    #[test]
    fn iou_is_symmetric_and_bounded() {
        let a = Box3::new([0.1, 0.2, 0.3], [1.0, 2.0, 0.5]).unwrap();
        let b = Box3::new([0.4, -0.1, 0.4], [0.8, 1.1, 0.9]).unwrap();
        let ab = iou_aabb(&a, &b);
        assert_eq!(ab, iou_aabb(&b, &a));
        assert!(ab > 0.0 && ab < 1.0);
    }

    #[test]
    fn nms_suppresses_identical_boxes_keeping_highest_score() {
        let b = unit_box([0.0, 0.0, 0.0]);
        let dets = vec![
            Detection { bbox: b, label: 0, score: 0.5, objectness: 0.9 },
            Detection { bbox: b, label: 0, score: 0.9, objectness: 0.9 },
            Detection { bbox: b, label: 0, score: 0.7, objectness: 0.9 },
        ];
        let kept = nms(&dets, 0.25).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn nms_is_per_class() {
        let b = unit_box([0.0, 0.0, 0.0]);
        let dets = vec![
            Detection { bbox: b, label: 0, score: 0.9, objectness: 0.9 },
            Detection { bbox: b, label: 1, score: 0.8, objectness: 0.9 },
        ];
        let kept = nms(&dets, 0.25).unwrap();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn nms_keeps_separated_boxes_and_orders_by_score() {
        let dets = vec![
            Detection { bbox: unit_box([0.0, 0.0, 0.0]), label: 0, score: 0.4, objectness: 0.5 },
            Detection { bbox: unit_box([5.0, 0.0, 0.0]), label: 0, score: 0.8, objectness: 0.9 },
        ];
        let kept = nms(&dets, 0.25).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].score, 0.8);
        assert_eq!(kept[1].score, 0.4);
    }

    #[test]
    fn nms_tie_prefers_earlier_detection() {
        let b = unit_box([0.0, 0.0, 0.0]);
        let dets = vec![
            Detection { bbox: b, label: 0, score: 0.7, objectness: 0.1 },
            Detection { bbox: b, label: 0, score: 0.7, objectness: 0.2 },
        ];
        let kept = nms(&dets, 0.25).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].objectness, 0.1);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(Box3::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
        assert!(Box3::new([f64::NAN, 0.0, 0.0], [1.0; 3]).is_err());
        assert!(nms(&[], 1.5).is_err());
    }
}
