//! Confusion-matrix accumulation and intersection-over-union metrics.

use serde::{Deserialize, Serialize};

/// Integer confusion counts, rows = ground truth, cols = prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<u64>,
    pub num_classes: usize,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![0; num_classes * num_classes],
            num_classes,
        }
    }

    /// Tally one aligned (prediction, ground-truth) pixel pair per element.
    pub fn update(&mut self, pred: &[u8], gt: &[u8]) {
        assert_eq!(pred.len(), gt.len(), "prediction / ground truth length");
        let k = self.num_classes;
        for (&p, &g) in pred.iter().zip(gt) {
            debug_assert!((p as usize) < k && (g as usize) < k);
            self.counts[g as usize * k + p as usize] += 1;
        }
    }

    /// Exact integer merge; accumulation order never matters.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.num_classes, other.num_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn at(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }
}

/// Per-class IoU (absent classes marked `None`) and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub iou_per_class: Vec<Option<f64>>,
    pub miou: f64,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Mean of tp/union fractions in exact rational arithmetic where u128
/// allows, so small-count means round once (e.g. exactly 7/12); falls back
/// to the floating mean if the accumulation overflows.
fn rational_mean(fractions: &[(u64, u64)]) -> f64 {
    let mut num: u128 = 0;
    let mut den: u128 = 1;
    for &(n, d) in fractions {
        let (n, d) = (n as u128, d as u128);
        let Some(scaled_n) = num.checked_mul(d) else {
            return float_mean(fractions);
        };
        let Some(add_n) = n.checked_mul(den) else {
            return float_mean(fractions);
        };
        let Some(new_n) = scaled_n.checked_add(add_n) else {
            return float_mean(fractions);
        };
        let Some(new_d) = den.checked_mul(d) else {
            return float_mean(fractions);
        };
        let g = gcd(new_n, new_d);
        num = new_n / g;
        den = new_d / g;
    }
    let Some(total_den) = den.checked_mul(fractions.len() as u128) else {
        return float_mean(fractions);
    };
    num as f64 / total_den as f64
}

fn float_mean(fractions: &[(u64, u64)]) -> f64 {
    fractions
        .iter()
        .map(|&(n, d)| n as f64 / d as f64)
        .sum::<f64>()
        / fractions.len() as f64
}

/// iou_c = tp / (gt_c + pred_c - tp); classes with zero union are excluded
/// from the mean and reported as absent.
pub fn iou_from_cm(cm: &ConfusionMatrix) -> SegMetrics {
    let k = cm.num_classes;
    let mut iou = Vec::with_capacity(k);
    let mut included = Vec::new();
    for c in 0..k {
        let tp = cm.at(c, c);
        let row: u64 = (0..k).map(|p| cm.at(c, p)).sum();
        let col: u64 = (0..k).map(|g| cm.at(g, c)).sum();
        let union = row + col - tp;
        if union == 0 {
            iou.push(None);
        } else {
            iou.push(Some(tp as f64 / union as f64));
            included.push((tp, union));
        }
    }
    let miou = if included.is_empty() {
        0.0
    } else {
        rational_mean(&included)
    };
    SegMetrics {
        iou_per_class: iou,
        miou,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use satsynth_tensor::Rng;

    #[test]
    fn perfect_prediction_gives_unit_iou() {
        let mut cm = ConfusionMatrix::new(3);
        let gt: Vec<u8> = (0..64).map(|i| (i % 3) as u8).collect();
        cm.update(&gt, &gt);
        let m = iou_from_cm(&cm);
        assert_eq!(m.miou, 1.0);
        assert!(m.iou_per_class.iter().all(|c| *c == Some(1.0)));
        assert_eq!(cm.total(), 64);
    }

    #[test]
    fn two_class_hand_case() {
        // gt = [0,0,1,1], pred = [0,1,1,1]: IoU0 = 1/2, IoU1 = 2/3.
        let mut cm = ConfusionMatrix::new(2);
        cm.update(&[0, 1, 1, 1], &[0, 0, 1, 1]);
        let m = iou_from_cm(&cm);
        assert_eq!(m.iou_per_class[0], Some(0.5));
        assert_eq!(m.iou_per_class[1], Some(2.0 / 3.0));
        assert_eq!(m.miou, 7.0 / 12.0);
    }

    #[test]
    fn absent_class_is_excluded_from_the_mean() {
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&[0, 0, 1, 1], &[0, 0, 1, 1]); // class 2 never appears
        let m = iou_from_cm(&cm);
        assert_eq!(m.iou_per_class[2], None);
        assert_eq!(m.miou, 1.0);
    }

    #[test]
    fn update_matches_per_pixel_brute_force() {
        let mut rng = Rng::derive(3, "cm", 0);
        let pred: Vec<u8> = (0..64).map(|_| rng.below(4) as u8).collect();
        let gt: Vec<u8> = (0..64).map(|_| rng.below(4) as u8).collect();
        let mut cm = ConfusionMatrix::new(4);
        cm.update(&pred, &gt);
        for g in 0..4usize {
            for p in 0..4usize {
                let expected = pred
                    .iter()
                    .zip(&gt)
                    .filter(|(&pp, &gg)| pp as usize == p && gg as usize == g)
                    .count() as u64;
                assert_eq!(cm.at(g, p), expected);
            }
        }
    }

    #[test]
    fn half_batches_equal_one_batch() {
        let mut rng = Rng::derive(4, "cm", 1);
        let pred: Vec<u8> = (0..100).map(|_| rng.below(5) as u8).collect();
        let gt: Vec<u8> = (0..100).map(|_| rng.below(5) as u8).collect();
        let mut whole = ConfusionMatrix::new(5);
        whole.update(&pred, &gt);
        let mut split = ConfusionMatrix::new(5);
        split.update(&pred[..50], &gt[..50]);
        let mut second = ConfusionMatrix::new(5);
        second.update(&pred[50..], &gt[50..]);
        split.merge(&second);
        assert_eq!(whole, split);
    }

    #[test]
    fn iou_matches_set_based_brute_force_exactly() {
        let mut rng = Rng::derive(5, "cm", 2);
        for _ in 0..1000 {
            let pred: Vec<u8> = (0..64).map(|_| rng.below(4) as u8).collect();
            let gt: Vec<u8> = (0..64).map(|_| rng.below(4) as u8).collect();
            let mut cm = ConfusionMatrix::new(4);
            cm.update(&pred, &gt);
            let m = iou_from_cm(&cm);
            for c in 0..4usize {
                let inter = pred
                    .iter()
                    .zip(&gt)
                    .filter(|(&p, &g)| p as usize == c && g as usize == c)
                    .count();
                let uni = pred
                    .iter()
                    .zip(&gt)
                    .filter(|(&p, &g)| p as usize == c || g as usize == c)
                    .count();
                match m.iou_per_class[c] {
                    Some(v) => assert_eq!(v, inter as f64 / uni as f64),
                    None => assert_eq!(uni, 0),
                }
            }
        }
    }

    #[test]
    fn miou_invariant_under_class_relabeling() {
        let mut rng = Rng::derive(6, "cm", 3);
        let pred: Vec<u8> = (0..64).map(|_| rng.below(4) as u8).collect();
        let gt: Vec<u8> = (0..64).map(|_| rng.below(4) as u8).collect();
        let perm = [2u8, 0, 3, 1];
        let map = |v: &[u8]| -> Vec<u8> { v.iter().map(|&x| perm[x as usize]).collect() };
        let mut cm1 = ConfusionMatrix::new(4);
        cm1.update(&pred, &gt);
        let mut cm2 = ConfusionMatrix::new(4);
        cm2.update(&map(&pred), &map(&gt));
        assert_eq!(iou_from_cm(&cm1).miou, iou_from_cm(&cm2).miou);
    }
}
