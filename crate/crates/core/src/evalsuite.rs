//! Confusion matrix accumulation and per-class IoU / mIoU.

use crate::error::{CoreError, Result};
use crate::inference::LabelMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Pixel counts indexed [gt+1][pred+1]; index 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct MiouReport {
    /// IoU per class index; None when the class never appears in gt or pred.
    pub per_class: Vec<Option<f64>>,
    pub background: Option<f64>,
    /// Mean over the classes that were actually present (plus background when
    /// requested).
    pub mean: f64,
    pub classes_counted: usize,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        let side = num_classes + 1;
        ConfusionMatrix { num_classes, counts: vec![0; side * side] }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, gt: i32, pred: i32) -> u64 {
        let side = self.num_classes + 1;
        self.counts[(gt + 1) as usize * side + (pred + 1) as usize]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.width, pred.height) != (gt.width, gt.height) {
            return Err(CoreError::ShapeMismatch {
                op: "confusion_accumulate",
                detail: format!(
                    "pred {}×{} vs gt {}×{}",
                    pred.width, pred.height, gt.width, gt.height
                ),
            });
        }
        let side = self.num_classes as i32;
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            if p >= side || g >= side {
                return Err(CoreError::InvalidArg {
                    what: "label",
                    detail: format!("label out of range for {side} classes: pred {p}, gt {g}"),
                });
            }
            let s = self.num_classes + 1;
            self.counts[(g + 1) as usize * s + (p + 1) as usize] += 1;
        }
        Ok(())
    }

    /// Merges another matrix of the same shape (for per-image parallelism).
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.num_classes != other.num_classes {
            return Err(CoreError::ShapeMismatch {
                op: "confusion_merge",
                detail: format!("{} vs {} classes", self.num_classes, other.num_classes),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// IoU_c = TP / (TP + FP + FN). Classes with zero union are excluded from
    /// the mean; background joins the mean only when the flag is set.
    pub fn miou(&self, include_background: bool) -> Result<MiouReport> {
        let side = self.num_classes + 1;
        let iou_at = |k: usize| -> Option<f64> {
            let tp = self.counts[k * side + k];
            let row: u64 = (0..side).map(|j| self.counts[k * side + j]).sum();
            let col: u64 = (0..side).map(|i| self.counts[i * side + k]).sum();
            let union = row + col - tp;
            if union == 0 {
                None
            } else {
                Some(tp as f64 / union as f64)
            }
        };
        let background = iou_at(0);
        let per_class: Vec<Option<f64>> = (1..side).map(iou_at).collect();

        let mut sum = 0.0;
        let mut n = 0usize;
        if include_background {
            if let Some(b) = background {
                sum += b;
                n += 1;
            }
        }
        for iou in per_class.iter().flatten() {
            sum += iou;
            n += 1;
        }
        if n == 0 {
            return Err(CoreError::Empty { what: "evaluated classes" });
        }
        Ok(MiouReport { per_class, background, mean: sum / n as f64, classes_counted: n })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::collections::BTreeMap;

    fn map_of(w: usize, h: usize, labels: Vec<i32>) -> LabelMap {
        LabelMap::new(w, h, labels).unwrap()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gt = map_of(2, 2, vec![0, 1, 1, 0]);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&gt, &gt).unwrap();
        let report = cm.miou(false).unwrap();
        assert_eq!(report.mean, 1.0);
        assert_eq!(report.per_class, vec![Some(1.0), Some(1.0)]);
    }

    #[test]
    fn half_right_quarter_miou() {
        // gt all class 0; pred: class 0 on 2 pixels, class 1 on the other 2.
        // IoU_0 = 2/4, IoU_1 = 0/2 → mean 0.25
        let gt = map_of(2, 2, vec![0, 0, 0, 0]);
        let pred = map_of(2, 2, vec![0, 0, 1, 1]);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&pred, &gt).unwrap();
        let report = cm.miou(false).unwrap();
        assert_eq!(report.per_class, vec![Some(0.5), Some(0.0)]);
        assert_eq!(report.mean, 0.25);
    }

    #[test]
    fn absent_class_is_excluded_from_the_mean() {
        // 3 classes, class 2 never appears anywhere → mean over 2 classes
        let gt = map_of(2, 1, vec![0, 1]);
        let pred = map_of(2, 1, vec![0, 0]);
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&pred, &gt).unwrap();
        let report = cm.miou(false).unwrap();
        assert_eq!(report.classes_counted, 2);
        assert_eq!(report.per_class[2], None);
        // IoU_0 = 1/2 (one TP, one FP), IoU_1 = 0/1
        assert_eq!(report.mean, 0.25);
    }

    #[test]
    fn hand_counts_land_in_the_right_cells() {
        let gt = map_of(2, 1, vec![0, 1]);
        let pred = map_of(2, 1, vec![0, 0]);
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&pred, &gt).unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.count(1, 0), 1);
        assert_eq!(cm.total(), 2);
    }

    #[test]
    fn random_pair_matches_tally_oracle() {
        let mut rng = Rng::seed_from_u64(99);
        let n = 64;
        let gt_labels: Vec<i32> = (0..n).map(|_| (rng.next_below(4) as i32) - 1).collect();
        let pred_labels: Vec<i32> = (0..n).map(|_| (rng.next_below(4) as i32) - 1).collect();
        let gt = map_of(8, 8, gt_labels.clone());
        let pred = map_of(8, 8, pred_labels.clone());
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&pred, &gt).unwrap();

        let mut tally: BTreeMap<(i32, i32), u64> = BTreeMap::new();
        for (&g, &p) in gt_labels.iter().zip(&pred_labels) {
            *tally.entry((g, p)).or_insert(0) += 1;
        }
        for g in -1..3 {
            for p in -1..3 {
                assert_eq!(cm.count(g, p), tally.get(&(g, p)).copied().unwrap_or(0));
            }
        }
        assert_eq!(cm.total(), n as u64);
    }

    #[test]
    fn accumulation_is_additive_over_image_halves() {
        let mut rng = Rng::seed_from_u64(100);
        let labels = |rng: &mut Rng, n: usize| -> Vec<i32> {
            (0..n).map(|_| (rng.next_below(3) as i32) - 1).collect()
        };
        let gt = labels(&mut rng, 32);
        let pred = labels(&mut rng, 32);

        let mut whole = ConfusionMatrix::new(2);
        whole
            .accumulate(&map_of(8, 4, pred.clone()), &map_of(8, 4, gt.clone()))
            .unwrap();

        let mut halves = ConfusionMatrix::new(2);
        halves
            .accumulate(&map_of(8, 2, pred[..16].to_vec()), &map_of(8, 2, gt[..16].to_vec()))
            .unwrap();
        let mut second = ConfusionMatrix::new(2);
        second
            .accumulate(&map_of(8, 2, pred[16..].to_vec()), &map_of(8, 2, gt[16..].to_vec()))
            .unwrap();
        halves.merge(&second).unwrap();
        assert_eq!(whole, halves);
    }

    #[test]
    fn miou_invariant_under_class_relabeling() {
        let gt = map_of(4, 1, vec![0, 1, 2, 0]);
        let pred = map_of(4, 1, vec![0, 2, 2, 1]);
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&pred, &gt).unwrap();

        // swap classes 0 and 2 everywhere
        let swap = |v: &Vec<i32>| -> Vec<i32> {
            v.iter().map(|&l| match l { 0 => 2, 2 => 0, x => x }).collect()
        };
        let gt2 = map_of(4, 1, swap(&gt.labels));
        let pred2 = map_of(4, 1, swap(&pred.labels));
        let mut cm2 = ConfusionMatrix::new(3);
        cm2.accumulate(&pred2, &gt2).unwrap();

        let a = cm.miou(false).unwrap();
        let b = cm2.miou(false).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.per_class[0], b.per_class[2]);
        assert_eq!(a.per_class[2], b.per_class[0]);
    }

    #[test]
    fn background_only_counts_when_asked() {
        let gt = map_of(2, 1, vec![-1, 0]);
        let pred = map_of(2, 1, vec![-1, 0]);
        let mut cm = ConfusionMatrix::new(1);
        cm.accumulate(&pred, &gt).unwrap();
        let without = cm.miou(false).unwrap();
        assert_eq!(without.classes_counted, 1);
        assert_eq!(without.mean, 1.0);
        let with = cm.miou(true).unwrap();
        assert_eq!(with.classes_counted, 2);
        assert_eq!(with.background, Some(1.0));
    }

    #[test]
    fn errors_on_mismatch_and_emptiness() {
        let mut cm = ConfusionMatrix::new(2);
        let a = map_of(2, 1, vec![0, 0]);
        let b = map_of(1, 2, vec![0, 0]);
        assert!(cm.accumulate(&a, &b).is_err());
        // out-of-range class index
        let big = map_of(2, 1, vec![5, 0]);
        assert!(cm.accumulate(&big, &a).is_err());
        // nothing accumulated → no classes to average
        assert!(ConfusionMatrix::new(2).miou(false).is_err());
    }

    #[test]
    fn iou_bounds_hold() {
        let mut rng = Rng::seed_from_u64(123);
        for _ in 0..20 {
            let gt: Vec<i32> = (0..36).map(|_| (rng.next_below(5) as i32) - 1).collect();
            let pred: Vec<i32> = (0..36).map(|_| (rng.next_below(5) as i32) - 1).collect();
            let mut cm = ConfusionMatrix::new(4);
            cm.accumulate(&map_of(6, 6, pred), &map_of(6, 6, gt)).unwrap();
            let report = cm.miou(true).unwrap();
            for iou in report.per_class.iter().flatten() {
                assert!((0.0..=1.0).contains(iou));
            }
            assert!((0.0..=1.0).contains(&report.mean));
        }
    }
}
