//! Segmentation and detection evaluation metrics.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::octree::Octree;
use crate::scalar::{Scalar, Vec3};

/// Square class-confusion counts; rows index ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    /// Accumulates over point pairs; negative (unlabeled) entries are skipped.
    pub fn from_labels(gt: &[i32], pred: &[i32], num_classes: usize) -> Result<Self> {
        if gt.len() != pred.len() {
            return Err(Error::Shape("label arrays differ in length".into()));
        }
        let mut m = Self::new(num_classes);
        for (&g, &p) in gt.iter().zip(pred) {
            if g < 0 || p < 0 {
                continue;
            }
            if g as usize >= num_classes || p as usize >= num_classes {
                return Err(Error::Bounds(format!("class id {g}/{p} out of range")));
            }
            m.counts[g as usize][p as usize] += 1;
        }
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Per-class IoU and their mean. Classes absent from both ground truth and
/// prediction are excluded from the mean (reported as None).
pub fn miou(conf: &ConfusionMatrix) -> (f64, Vec<Option<f64>>) {
    let c = conf.num_classes();
    let mut per_class = Vec::with_capacity(c);
    let mut sum = 0.0;
    let mut counted = 0usize;
    for k in 0..c {
        let tp = conf.counts[k][k];
        let fp: u64 = (0..c).filter(|&g| g != k).map(|g| conf.counts[g][k]).sum();
        let fneg: u64 = (0..c).filter(|&p| p != k).map(|p| conf.counts[k][p]).sum();
        let denom = tp + fp + fneg;
        if denom == 0 {
            per_class.push(None);
        } else {
            let iou = tp as f64 / denom as f64;
            per_class.push(Some(iou));
            sum += iou;
            counted += 1;
        }
    }
    let mean = if counted == 0 { 0.0 } else { sum / counted as f64 };
    (mean, per_class)
}

/// Brute-force mIoU oracle from per-class point sets.
pub fn miou_brute_force(gt: &[i32], pred: &[i32], num_classes: usize) -> (f64, Vec<Option<f64>>) {
    let mut per_class = Vec::with_capacity(num_classes);
    let mut sum = 0.0;
    let mut counted = 0usize;
    for k in 0..num_classes as i32 {
        let gt_set: HashSet<usize> = gt
            .iter()
            .enumerate()
            .filter(|(i, &g)| g == k && pred[*i] >= 0)
            .map(|(i, _)| i)
            .collect();
        let pred_set: HashSet<usize> = pred
            .iter()
            .enumerate()
            .filter(|(i, &p)| p == k && gt[*i] >= 0)
            .map(|(i, _)| i)
            .collect();
        let union = gt_set.union(&pred_set).count();
        if union == 0 {
            per_class.push(None);
            continue;
        }
        let iou = gt_set.intersection(&pred_set).count() as f64 / union as f64;
        per_class.push(Some(iou));
        sum += iou;
        counted += 1;
    }
    let mean = if counted == 0 { 0.0 } else { sum / counted as f64 };
    (mean, per_class)
}

/// A predicted or ground-truth instance as a point-index set.
#[derive(Debug, Clone)]
pub struct Instance {
    pub class_id: i32,
    pub points: HashSet<usize>,
    /// Prediction confidence; ignored for ground truth.
    pub score: f64,
}

fn point_set_iou(a: &HashSet<usize>, b: &HashSet<usize>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// AP@50: per class, predictions sorted by score (desc) are greedily matched
/// to unmatched ground truth at point-set IoU ≥ 0.5; AP is the area under the
/// all-point interpolated precision-recall curve. Returns per-class AP (None
/// when the class has no ground-truth instance) and the mean over classes
/// with at least one.
pub fn instance_ap50(
    pred_instances: &[Instance],
    gt_instances: &[Instance],
    num_classes: usize,
) -> (f64, Vec<Option<f64>>) {
    let mut per_class = Vec::with_capacity(num_classes);
    let mut sum = 0.0;
    let mut counted = 0usize;
    for k in 0..num_classes as i32 {
        let gts: Vec<&Instance> = gt_instances.iter().filter(|g| g.class_id == k).collect();
        if gts.is_empty() {
            per_class.push(None);
            continue;
        }
        let mut preds: Vec<&Instance> = pred_instances.iter().filter(|p| p.class_id == k).collect();
        preds.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
        let mut matched = vec![false; gts.len()];
        let mut tp_flags = Vec::with_capacity(preds.len());
        for p in &preds {
            let mut hit = None;
            let mut best_iou = 0.5;
            for (gi, g) in gts.iter().enumerate() {
                if matched[gi] {
                    continue;
                }
                let iou = point_set_iou(&p.points, &g.points);
                if iou >= best_iou {
                    best_iou = iou;
                    hit = Some(gi);
                }
            }
            if let Some(gi) = hit {
                matched[gi] = true;
                tp_flags.push(true);
            } else {
                tp_flags.push(false);
            }
        }
        // all-point interpolation over the PR step curve
        let total_gt = gts.len() as f64;
        let mut precisions = Vec::new();
        let mut recalls = Vec::new();
        let mut tp = 0usize;
        for (i, &is_tp) in tp_flags.iter().enumerate() {
            if is_tp {
                tp += 1;
            }
            precisions.push(tp as f64 / (i + 1) as f64);
            recalls.push(tp as f64 / total_gt);
        }
        // precision envelope from the right
        for i in (0..precisions.len().saturating_sub(1)).rev() {
            precisions[i] = precisions[i].max(precisions[i + 1]);
        }
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for (p, r) in precisions.iter().zip(&recalls) {
            if *r > prev_recall {
                ap += (r - prev_recall) * p;
                prev_recall = *r;
            }
        }
        per_class.push(Some(ap));
        sum += ap;
        counted += 1;
    }
    let mean = if counted == 0 { 0.0 } else { sum / counted as f64 };
    (mean, per_class)
}

/// Boundary-based oversegmentation quality. A ground-truth boundary point has
/// a differently-labeled neighbor within `tolerance`; predicted boundary
/// points are defined the same way from region ids. Recall is the fraction of
/// ground-truth boundary points with a predicted boundary point within
/// `tolerance`; precision is the converse; F1 the harmonic mean.
pub fn overseg_prf<S: Scalar>(
    positions: &[Vec3<S>],
    region_ids: &[i64],
    gt_labels: &[i32],
    tolerance: S,
) -> Result<(f64, f64, f64)> {
    if positions.len() != region_ids.len() || positions.len() != gt_labels.len() {
        return Err(Error::Shape("overseg_prf input lengths differ".into()));
    }
    if positions.is_empty() {
        return Ok((0.0, 0.0, 0.0));
    }
    let tree = Octree::with_defaults(positions)?;
    let boundary = |differs: &dyn Fn(usize, usize) -> bool| -> Vec<usize> {
        (0..positions.len())
            .filter(|&i| {
                tree.radius_query(positions[i], tolerance)
                    .into_iter()
                    .any(|j| j != i && differs(i, j))
            })
            .collect()
    };
    let gt_boundary = boundary(&|i, j| gt_labels[i] != gt_labels[j]);
    let pred_boundary = boundary(&|i, j| region_ids[i] != region_ids[j]);

    let covered = |from: &[usize], to: &[usize]| -> f64 {
        if from.is_empty() {
            return 0.0;
        }
        let to_set: HashSet<usize> = to.iter().copied().collect();
        let hits = from
            .iter()
            .filter(|&&i| {
                tree.radius_query(positions[i], tolerance)
                    .into_iter()
                    .any(|j| to_set.contains(&j))
            })
            .count();
        hits as f64 / from.len() as f64
    };
    let recall = covered(&gt_boundary, &pred_boundary);
    let precision = covered(&pred_boundary, &gt_boundary);
    let f1 = if precision + recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((recall, precision, f1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_confusion_gives_perfect_miou() {
        let mut m = ConfusionMatrix::new(3);
        for k in 0..3 {
            m.counts[k][k] = 10;
        }
        let (mean, per) = miou(&m);
        assert!((mean - 1.0).abs() < 1e-12);
        assert!(per.iter().all(|p| p == &Some(1.0)));
    }

    #[test]
    fn all_predicted_one_class() {
        // 2 classes, everything predicted class 0, gt 50/50
        let gt: Vec<i32> = (0..100).map(|i| (i % 2) as i32).collect();
        let pred = vec![0i32; 100];
        let m = ConfusionMatrix::from_labels(&gt, &pred, 2).unwrap();
        let (mean, per) = miou(&m);
        assert_eq!(per[0], Some(0.5));
        assert_eq!(per[1], Some(0.0));
        assert!((mean - 0.25).abs() < 1e-12);
    }

    #[test]
    fn miou_permutation_invariant_mean() {
        let gt = vec![0, 0, 1, 1, 2];
        let pred = vec![0, 1, 1, 1, 0];
        let m = ConfusionMatrix::from_labels(&gt, &pred, 3).unwrap();
        let (mean, _) = miou(&m);
        // permute class ids 0<->2
        let swap = |v: &[i32]| v.iter().map(|&c| match c { 0 => 2, 2 => 0, x => x }).collect::<Vec<_>>();
        let m2 = ConfusionMatrix::from_labels(&swap(&gt), &swap(&pred), 3).unwrap();
        let (mean2, _) = miou(&m2);
        assert!((mean - mean2).abs() < 1e-12);
    }

    #[test]
    fn miou_matches_brute_force_on_random_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let n = rng.gen_range(10..200);
            let c = rng.gen_range(2..=5);
            let gt: Vec<i32> = (0..n).map(|_| rng.gen_range(0..c) as i32).collect();
            let pred: Vec<i32> = (0..n).map(|_| rng.gen_range(0..c) as i32).collect();
            let m = ConfusionMatrix::from_labels(&gt, &pred, c).unwrap();
            let (mean, per) = miou(&m);
            let (omean, oper) = miou_brute_force(&gt, &pred, c);
            assert!((mean - omean).abs() < 1e-12);
            for (a, b) in per.iter().zip(&oper) {
                match (a, b) {
                    (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12),
                    (None, None) => {}
                    other => panic!("mismatch {other:?}"),
                }
            }
        }
    }

    fn inst(class_id: i32, points: &[usize], score: f64) -> Instance {
        Instance {
            class_id,
            points: points.iter().copied().collect(),
            score,
        }
    }

    #[test]
    fn ap50_exact_match_is_one() {
        let gt = vec![inst(0, &[1, 2, 3], 0.0)];
        let pred = vec![inst(0, &[1, 2, 3], 0.9)];
        let (mean, per) = instance_ap50(&pred, &gt, 1);
        assert!((mean - 1.0).abs() < 1e-12);
        assert_eq!(per[0], Some(1.0));
    }

    #[test]
    fn ap50_no_predictions_is_zero() {
        let gt = vec![inst(0, &[1, 2], 0.0)];
        let (mean, _) = instance_ap50(&[], &gt, 1);
        assert_eq!(mean, 0.0);
    }

    #[test]
    fn ap50_ranking_fixture() {
        // hand oracle: TP above FP -> precision 1 at recall 1 -> AP 1.0
        let gt = vec![inst(0, &[0, 1, 2, 3], 0.0)];
        let tp = inst(0, &[0, 1, 2, 3], 0.9);
        let fp = inst(0, &[10, 11], 0.8);
        let (ap_good, _) = instance_ap50(&[tp.clone(), fp.clone()], &gt, 1);
        assert!((ap_good - 1.0).abs() < 1e-12);
        // FP scored above the TP: recall 1 reached at precision 0.5 -> AP 0.5
        let tp_low = inst(0, &[0, 1, 2, 3], 0.7);
        let (ap_bad, _) = instance_ap50(&[tp_low, fp], &gt, 1);
        assert!((ap_bad - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ap50_iou_threshold_boundary() {
        // IoU 3/5 = 0.6 matches; IoU 2/6 = 0.333 does not
        let gt = vec![inst(0, &[0, 1, 2, 3], 0.0)];
        let good = inst(0, &[0, 1, 2, 9], 0.9);
        let (ap, _) = instance_ap50(&[good], &gt, 1);
        assert!((ap - 1.0).abs() < 1e-12);
        let bad = inst(0, &[0, 1, 8, 9, 10, 11], 0.9);
        let (ap, _) = instance_ap50(&[bad], &gt, 1);
        assert_eq!(ap, 0.0);
    }

    #[test]
    fn overseg_prf_perfect_and_degenerate() {
        // 200-point fixture: two abutting line segments with a crease at x=0
        let positions: Vec<Vec3<f64>> = (0..200)
            .map(|i| Vec3::new((i as f64 - 99.5) * 0.01, 0.0, 0.0))
            .collect();
        let gt: Vec<i32> = positions.iter().map(|p| if p.x < 0.0 { 0 } else { 1 }).collect();
        let regions_match: Vec<i64> = gt.iter().map(|&g| g as i64).collect();
        let (r, p, f1) = overseg_prf(&positions, &regions_match, &gt, 0.015).unwrap();
        assert_eq!((r, p, f1), (1.0, 1.0, 1.0));
        // a single all-points region predicts no boundary at all
        let single = vec![0i64; 200];
        let (r0, _, f0) = overseg_prf(&positions, &single, &gt, 0.015).unwrap();
        assert_eq!(r0, 0.0);
        assert_eq!(f0, 0.0);
    }

    #[test]
    fn overseg_prf_hand_counted() {
        // 6 points on a line, spacing 1; gt crease between index 2 and 3,
        // predicted crease between 3 and 4, tolerance 1.1
        let positions: Vec<Vec3<f64>> =
            (0..6).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let gt = vec![0, 0, 0, 1, 1, 1];
        let pred = vec![0i64, 0, 0, 0, 1, 1];
        // gt boundary = {2,3}; predicted boundary = {3,4}
        // recall: 2 within 1.1 of 3 yes; 3 of 3 yes -> 1.0
        // precision: 3 near gt-boundary yes; 4 near {2,3}: dist 1 to 3 -> yes -> 1.0
        let (r, p, _) = overseg_prf(&positions, &pred, &gt, 1.1).unwrap();
        assert_eq!((r, p), (1.0, 1.0));
        // tighter tolerance 0.5: boundaries become empty sets -> zeros
        let (r2, p2, f2) = overseg_prf(&positions, &pred, &gt, 0.5).unwrap();
        assert_eq!((r2, p2, f2), (0.0, 0.0, 0.0));
    }
}
