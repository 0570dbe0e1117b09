//! Training loss for the detection head.
//!
//! Four components: vote regression (smooth L1 from each positive
//! seed's vote to its object center), objectness cross-entropy over
//! assigned proposals, box regression (center offset and log sizes,
//! smooth L1) on positives, and class cross-entropy on positives.
//! All internal accumulation is in f64.

use super::boxes::GtBox;
use super::head::{softmax, DetectConfig};
use crate::nncore::Tensor;
use crate::{invalid_arg, Result, Scalar};

/// Component weights and proposal assignment radii.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub vote: f64,
    pub objectness: f64,
    pub bbox: f64,
    pub class: f64,
    /// Proposals whose cluster center lies within this distance of a
    /// ground-truth center are positive.
    pub pos_radius: f64,
    /// Proposals farther than this from every ground-truth center are
    /// negative; the band in between is ignored.
    pub neg_radius: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            vote: 1.0,
            objectness: 0.5,
            bbox: 1.0,
            class: 0.1,
            pos_radius: 0.3,
            neg_radius: 0.6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vote", self.vote),
            ("objectness", self.objectness),
            ("bbox", self.bbox),
            ("class", self.class),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid_arg!("loss weight {name} = {v} must be nonnegative"));
            }
        }
        if !(self.pos_radius > 0.0) || !(self.neg_radius >= self.pos_radius) {
            return Err(invalid_arg!(
                "assignment radii ({}, {}) need 0 < positive <= negative",
                self.pos_radius,
                self.neg_radius
            ));
        }
        Ok(())
    }
}

/// Unweighted per-component means plus the weighted total.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub vote: f64,
    pub objectness: f64,
    pub bbox: f64,
    pub class: f64,
    pub total: f64,
    pub num_pos_seeds: usize,
    pub num_pos_proposals: usize,
    pub num_neg_proposals: usize,
}

/// Smooth L1 (Huber with unit transition) value and derivative.
fn huber(x: f64) -> (f64, f64) {
    if x.abs() < 1.0 {
        (0.5 * x * x, x)
    } else {
        (x.abs() - 0.5, x.signum())
    }
}

/// Cross-entropy of `logits` against `target`; returns the loss and
/// writes `softmax - onehot` into `grad`.
fn cross_entropy(logits: &[f64], target: usize, grad: &mut [f64]) -> f64 {
    let probs = softmax(logits);
    for (g, &p) in grad.iter_mut().zip(&probs) {
        *g = p;
    }
    grad[target] -= 1.0;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

fn contains<S: Scalar>(gt: &GtBox, p: &[S; 3]) -> bool {
    let lo = gt.bbox.min_corner();
    let hi = gt.bbox.max_corner();
    (0..3).all(|i| {
        let v = p[i].as_f64();
        v >= lo[i] && v <= hi[i]
    })
}

fn center_dist<S: Scalar>(a: &[S; 3], c: &[f64; 3]) -> f64 {
    let dx = a[0].as_f64() - c[0];
    let dy = a[1].as_f64() - c[1];
    let dz = a[2].as_f64() - c[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Index of the ground-truth box with the nearest center; ties keep the
/// lower index. `None` when there are no boxes.
fn nearest_gt<S: Scalar>(p: &[S; 3], gts: &[GtBox]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (gi, gt) in gts.iter().enumerate() {
        let d = center_dist(p, &gt.bbox.center);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((gi, d));
        }
    }
    best
}

/// Computes the detection loss and its gradients: one tensor for the
/// head rows and one vector for the vote coordinates. Cluster centers
/// are treated as fixed sample locations (no gradient), matching the
/// index-based clustering.
pub fn detection_loss<S: Scalar>(
    head: &Tensor<S>,
    centers: &[[S; 3]],
    vote_coords: &[[S; 3]],
    seed_coords: &[[S; 3]],
    ground_truth: &[GtBox],
    cfg: &DetectConfig,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Tensor<S>, Vec<[S; 3]>)> {
    weights.validate()?;
    let d = cfg.head_dim();
    let p = centers.len();
    if head.shape() != [p, d] {
        return Err(invalid_arg!(
            "head rows {:?} do not match {} proposals x {}",
            head.shape(),
            p,
            d
        ));
    }
    if vote_coords.len() != seed_coords.len() {
        return Err(invalid_arg!(
            "{} votes vs {} seeds",
            vote_coords.len(),
            seed_coords.len()
        ));
    }
    for g in ground_truth {
        if g.label >= cfg.num_classes {
            return Err(invalid_arg!("ground-truth label {} out of range", g.label));
        }
    }

    let mut breakdown = LossBreakdown::default();
    let mut d_head = Tensor::zeros(&[p, d]);
    let mut d_votes = vec![[S::zero(); 3]; vote_coords.len()];

    // Vote regression: seeds inside a ground-truth box pull their vote
    // toward that box's center (the containing box with the nearest
    // center when several overlap).
    let mut pos_targets: Vec<(usize, [f64; 3])> = Vec::new();
    for (si, seed) in seed_coords.iter().enumerate() {
        let mut best: Option<(f64, [f64; 3])> = None;
        for gt in ground_truth {
            if !contains(gt, seed) {
                continue;
            }
            let dist = center_dist(seed, &gt.bbox.center);
            if best.is_none_or(|(bd, _)| dist < bd) {
                best = Some((dist, gt.bbox.center));
            }
        }
        if let Some((_, target)) = best {
            pos_targets.push((si, target));
        }
    }
    breakdown.num_pos_seeds = pos_targets.len();
    if !pos_targets.is_empty() {
        let inv = 1.0 / pos_targets.len() as f64;
        let mut sum = 0.0;
        for &(si, target) in &pos_targets {
            for axis in 0..3 {
                let (l, g) = huber(vote_coords[si][axis].as_f64() - target[axis]);
                sum += l;
                d_votes[si][axis] = S::of(weights.vote * g * inv);
            }
        }
        breakdown.vote = sum * inv;
    }

    // Proposal assignment by distance to the nearest ground-truth
    // center. With no ground truth every proposal is negative.
    #[derive(Clone, Copy, PartialEq)]
    enum Assign {
        Pos(usize),
        Neg,
        Ignore,
    }
    let assign: Vec<Assign> = centers
        .iter()
        .map(|c| match nearest_gt(c, ground_truth) {
            None => Assign::Neg,
            Some((gi, dist)) => {
                if dist <= weights.pos_radius {
                    Assign::Pos(gi)
                } else if dist > weights.neg_radius {
                    Assign::Neg
                } else {
                    Assign::Ignore
                }
            }
        })
        .collect();
    let num_pos = assign.iter().filter(|a| matches!(a, Assign::Pos(_))).count();
    let num_neg = assign.iter().filter(|a| matches!(a, &&Assign::Neg)).count();
    breakdown.num_pos_proposals = num_pos;
    breakdown.num_neg_proposals = num_neg;

    let row_f64 = |pi: usize| -> Vec<f64> {
        head.data()[pi * d..(pi + 1) * d].iter().map(|v| v.as_f64()).collect()
    };

    // Objectness cross-entropy over assigned proposals.
    let assigned = num_pos + num_neg;
    if assigned > 0 {
        let inv = 1.0 / assigned as f64;
        let mut sum = 0.0;
        let mut grad = [0.0f64; 2];
        for (pi, a) in assign.iter().enumerate() {
            let target = match a {
                Assign::Pos(_) => 1,
                Assign::Neg => 0,
                Assign::Ignore => continue,
            };
            let row = row_f64(pi);
            sum += cross_entropy(&row[..2], target, &mut grad);
            for (j, &g) in grad.iter().enumerate() {
                d_head.data_mut()[pi * d + j] = S::of(weights.objectness * g * inv);
            }
        }
        breakdown.objectness = sum * inv;
    }

    // Box regression and classification on positives.
    if num_pos > 0 {
        let inv = 1.0 / num_pos as f64;
        let co = cfg.center_offset();
        let so = cfg.size_offset();
        let cl = cfg.class_offset();
        let mut box_sum = 0.0;
        let mut cls_sum = 0.0;
        let mut cls_grad = vec![0.0f64; cfg.num_classes];
        for (pi, a) in assign.iter().enumerate() {
            let gi = match a {
                Assign::Pos(gi) => *gi,
                _ => continue,
            };
            let gt = &ground_truth[gi];
            let row = row_f64(pi);
            for axis in 0..3 {
                let pred = centers[pi][axis].as_f64() + row[co + axis];
                let (l, g) = huber(pred - gt.bbox.center[axis]);
                box_sum += l;
                d_head.data_mut()[pi * d + co + axis] = S::of(weights.bbox * g * inv);
                let (l, g) = huber(row[so + axis] - gt.bbox.size[axis].ln());
                box_sum += l;
                d_head.data_mut()[pi * d + so + axis] = S::of(weights.bbox * g * inv);
            }
            cls_sum += cross_entropy(&row[cl..cl + cfg.num_classes], gt.label, &mut cls_grad);
            for (j, &g) in cls_grad.iter().enumerate() {
                d_head.data_mut()[pi * d + cl + j] = S::of(weights.class * g * inv);
            }
        }
        breakdown.bbox = box_sum * inv;
        breakdown.class = cls_sum * inv;
    }

    breakdown.total = weights.vote * breakdown.vote
        + weights.objectness * breakdown.objectness
        + weights.bbox * breakdown.bbox
        + weights.class * breakdown.class;
    Ok((breakdown, d_head, d_votes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::boxes::Box3;

    fn cfg(num_classes: usize) -> DetectConfig {
        DetectConfig {
            num_classes,
            num_proposals: 4,
            group_radius: 0.3,
            group_neighbors: 8,
            vote_hidden: 8,
            proposal_hidden: (8, 8),
        }
    }

    fn gt(center: [f64; 3], size: [f64; 3], label: usize) -> GtBox {
        GtBox { bbox: Box3::new(center, size).unwrap(), label }
    }

    /// Head rows constructed so every regression target is hit exactly
    /// and logits are saturated; vote, box, and class components vanish.
    #[test]
    fn perfect_predictions_zero_all_but_objectness() {
        let c = cfg(2);
        let gts = vec![gt([0.5, 0.5, 0.5], [0.4, 0.4, 0.4], 1)];
        let seeds = vec![[0.5, 0.5, 0.6], [0.4, 0.5, 0.5]];
        let votes = vec![[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]];
        let centers = vec![[0.45, 0.5, 0.5], [3.0, 3.0, 3.0]];
        let d = c.head_dim();
        let mut head = Tensor::zeros(&[2, d]);
        {
            let hd = head.data_mut();
            // Positive proposal: saturated objectness and class logits,
            // exact center offset and log sizes.
            hd[0] = -1000.0;
            hd[1] = 1000.0;
            hd[c.class_offset()] = -1000.0;
            hd[c.class_offset() + 1] = 1000.0;
            hd[c.center_offset()] = 0.05;
            hd[c.center_offset() + 1] = 0.0;
            hd[c.center_offset() + 2] = 0.0;
            for axis in 0..3 {
                hd[c.size_offset() + axis] = 0.4f64.ln();
            }
            // Negative proposal: saturated toward "no object".
            hd[d] = 1000.0;
            hd[d + 1] = -1000.0;
        }
        let (b, dh, dv) =
            detection_loss(&head, &centers, &votes, &seeds, &gts, &c, &LossWeights::default())
                .unwrap();
        assert_eq!(b.vote, 0.0);
        assert_eq!(b.bbox, 0.0);
        assert_eq!(b.class, 0.0);
        assert_eq!(b.objectness, 0.0);
        assert_eq!(b.total, 0.0);
        assert_eq!(b.num_pos_seeds, 2);
        assert_eq!(b.num_pos_proposals, 1);
        assert_eq!(b.num_neg_proposals, 1);
        assert!(dh.data().iter().all(|&g| g == 0.0));
        assert!(dv.iter().all(|v| v.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn empty_scene_leaves_only_objectness() {
        let c = cfg(2);
        let seeds = vec![[0.5, 0.5, 0.5]];
        let votes = vec![[0.6, 0.5, 0.5]];
        let centers = vec![[0.5, 0.5, 0.5], [1.5, 1.5, 1.5]];
        let head = Tensor::<f64>::zeros(&[2, c.head_dim()]);
        let (b, _, dv) =
            detection_loss(&head, &centers, &votes, &seeds, &[], &c, &LossWeights::default())
                .unwrap();
        assert_eq!(b.vote, 0.0);
        assert_eq!(b.bbox, 0.0);
        assert_eq!(b.class, 0.0);
        assert!(b.objectness > 0.0);
        assert_eq!(b.num_neg_proposals, 2);
        assert_eq!(b.num_pos_proposals, 0);
        assert!((b.objectness - 2.0f64.ln()).abs() < 1e-12);
        assert!(dv.iter().all(|v| v.iter().all(|&g| g == 0.0)));
        assert!((b.total - 0.5 * 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn proposals_in_the_dead_band_are_ignored() {
        let c = cfg(2);
        let gts = vec![gt([0.0, 0.0, 0.0], [0.4; 3], 0)];
        // Distances 0.0 (positive), 0.45 (ignored), 0.7 (negative).
        let centers = vec![[0.0, 0.0, 0.0], [0.45, 0.0, 0.0], [0.7, 0.0, 0.0]];
        let head = Tensor::<f64>::zeros(&[3, c.head_dim()]);
        let (b, dh, _) =
            detection_loss(&head, &centers, &[], &[], &gts, &c, &LossWeights::default())
                .unwrap();
        assert_eq!(b.num_pos_proposals, 1);
        assert_eq!(b.num_neg_proposals, 1);
        // The ignored proposal's objectness columns stay zero.
        let d = c.head_dim();
        assert_eq!(dh.data()[d], 0.0);
        assert_eq!(dh.data()[d + 1], 0.0);
        assert!(dh.data()[0] != 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let c = cfg(3);
        let gts = vec![
            gt([0.2, 0.3, 0.4], [0.5, 0.4, 0.6], 2),
            gt([1.4, 1.2, 0.3], [0.3, 0.5, 0.4], 0),
        ];
        let seeds = vec![[0.25, 0.3, 0.35], [1.45, 1.1, 0.3], [5.0, 5.0, 5.0]];
        let votes = vec![[0.4, 0.5, 0.3], [1.2, 1.3, 0.45], [5.1, 5.0, 4.9]];
        let centers = vec![[0.25, 0.25, 0.4], [1.5, 1.25, 0.35], [4.0, 4.0, 4.0]];
        let d = c.head_dim();
        let mut head = Tensor::zeros(&[3, d]);
        head.data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = ((i % 11) as f64 - 5.0) * 0.07);
        let w = LossWeights::default();
        let (_, dh, dv) =
            detection_loss(&head, &centers, &votes, &seeds, &gts, &c, &w).unwrap();
        let h = 1e-6;
        let loss_at = |head: &Tensor<f64>, votes: &[[f64; 3]]| {
            detection_loss(head, &centers, votes, &seeds, &gts, &c, &w).unwrap().0.total
        };
        for i in 0..head.numel() {
            let mut hp = head.clone();
            hp.data_mut()[i] += h;
            let mut hm = head.clone();
            hm.data_mut()[i] -= h;
            let fd = (loss_at(&hp, &votes) - loss_at(&hm, &votes)) / (2.0 * h);
            let an = dh.data()[i];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                "head grad {i}: fd {fd} vs {an}"
            );
        }
        for (i, vote) in votes.iter().enumerate() {
            for axis in 0..3 {
                let mut vp = votes.clone();
                vp[i][axis] = vote[axis] + h;
                let mut vm = votes.clone();
                vm[i][axis] = vote[axis] - h;
                let fd = (loss_at(&head, &vp) - loss_at(&head, &vm)) / (2.0 * h);
                let an = dv[i][axis];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "vote grad {i}/{axis}: fd {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn weights_scale_their_components() {
        let c = cfg(2);
        let gts = vec![gt([0.0, 0.0, 0.0], [0.5; 3], 1)];
        let centers = vec![[0.1, 0.0, 0.0]];
        let seeds = vec![[0.0, 0.1, 0.0]];
        let votes = vec![[0.3, 0.2, 0.1]];
        let mut head = Tensor::<f64>::zeros(&[1, c.head_dim()]);
        head.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64);
        let w1 = LossWeights::default();
        let mut w2 = w1;
        w2.bbox = 2.0;
        let (b1, d1, _) =
            detection_loss(&head, &centers, &votes, &seeds, &gts, &c, &w1).unwrap();
        let (b2, d2, _) =
            detection_loss(&head, &centers, &votes, &seeds, &gts, &c, &w2).unwrap();
        // Unweighted component is unchanged; total and gradient scale.
        assert_eq!(b1.bbox, b2.bbox);
        assert!((b2.total - b1.total - b1.bbox).abs() < 1e-12);
        let co = c.center_offset();
        assert!((d2.data()[co] - 2.0 * d1.data()[co]).abs() < 1e-15);
    }

    #[test]
    fn rejects_inconsistent_arguments() {
        let c = cfg(2);
        let head = Tensor::<f64>::zeros(&[1, c.head_dim()]);
        let centers = vec![[0.0; 3]];
        // Vote and seed counts disagree.
        assert!(detection_loss(
            &head,
            &centers,
            &[[0.0; 3]],
            &[],
            &[],
            &c,
            &LossWeights::default()
        )
        .is_err());
        // Label out of range.
        let gts = vec![gt([0.0; 3], [1.0; 3], 5)];
        assert!(
            detection_loss(&head, &centers, &[], &[], &gts, &c, &LossWeights::default())
                .is_err()
        );
        // Bad radii.
        let w = LossWeights { neg_radius: 0.1, ..LossWeights::default() };
        assert!(detection_loss(&head, &centers, &[], &[], &[], &c, &w).is_err());
    }
}
