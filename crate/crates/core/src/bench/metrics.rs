//! Pixel-level detection metrics.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts and the four derived rates.
///
/// `FOR = FP/(TP+FP)`, `FNR = FN/(TP+FN)`,
/// `BA = TP/2(TP+FN) + TN/2(TN+FP)`, `DICE = 2TP/(FP+FN+2TP)`.
///
/// Empty denominators: FOR and FNR report 0, a BA half-term over an empty
/// class reports 0.5, and DICE reports 1 (nothing to find, nothing found).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    #[serde(rename = "FOR")]
    pub false_omission_rate: f64,
    #[serde(rename = "FNR")]
    pub false_negative_rate: f64,
    #[serde(rename = "BA")]
    pub balanced_accuracy: f64,
    #[serde(rename = "DICE")]
    pub dice: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl MetricSet {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64, empty: f64| {
            if den == 0 {
                empty
            } else {
                num as f64 / den as f64
            }
        };
        let ba = 0.5 * ratio(tp, tp + fn_, 1.0) + 0.5 * ratio(tn, tn + fp, 1.0);
        Self {
            false_omission_rate: ratio(fp, tp + fp, 0.0),
            false_negative_rate: ratio(fn_, tp + fn_, 0.0),
            balanced_accuracy: ba,
            dice: ratio(2 * tp, fp + fn_ + 2 * tp, 1.0),
            tp,
            fp,
            tn,
            fn_,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Compares a predicted mask with the ground truth, pixel by pixel.
pub fn compute_metrics(mask: ArrayView2<bool>, gt: ArrayView2<bool>) -> Result<MetricSet> {
    if mask.dim() != gt.dim() {
        return Err(Error::Dimension(format!(
            "mask {:?} vs ground truth {:?}",
            mask.dim(),
            gt.dim()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    Zip::from(mask).and(gt).for_each(|&m, &g| match (m, g) {
        (true, true) => tp += 1,
        (true, false) => fp += 1,
        (false, false) => tn += 1,
        (false, true) => fn_ += 1,
    });
    Ok(MetricSet::from_counts(tp, fp, tn, fn_))
}

/// Pixels with an 8-neighbor differing by more than `min_step` in `img`.
///
/// On a piecewise-constant background this marks a two-pixel band along
/// every intensity edge.
pub fn edge_pixels(img: ArrayView2<f64>, min_step: f64) -> Array2<bool> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let v = img[[i, j]];
        (i.saturating_sub(1)..(i + 2).min(h)).any(|r| {
            (j.saturating_sub(1)..(j + 2).min(w)).any(|c| (img[[r, c]] - v).abs() > min_step)
        })
    })
}

/// Number of pixels flagged in `mask`, absent from `gt` and inside `region`.
pub fn false_positives_within(
    mask: ArrayView2<bool>,
    gt: ArrayView2<bool>,
    region: ArrayView2<bool>,
) -> Result<u64> {
    if mask.dim() != gt.dim() || mask.dim() != region.dim() {
        return Err(Error::Dimension(format!(
            "mask {:?}, ground truth {:?}, region {:?}",
            mask.dim(),
            gt.dim(),
            region.dim()
        )));
    }
    let mut count = 0;
    Zip::from(mask).and(gt).and(region).for_each(|&m, &g, &r| {
        if m && !g && r {
            count += 1;
        }
    });
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn perfect_mask() {
        let gt = Array2::from_shape_fn((6, 6), |(i, j)| i < 2 && j < 3);
        let m = compute_metrics(gt.view(), gt.view()).unwrap();
        assert_eq!(m.false_omission_rate, 0.0);
        assert_eq!(m.false_negative_rate, 0.0);
        assert_eq!(m.balanced_accuracy, 1.0);
        assert_eq!(m.dice, 1.0);
    }

    #[test]
    fn hand_counts() {
        let m = MetricSet::from_counts(9, 1, 89, 1);
        assert!((m.false_omission_rate - 0.1).abs() < 1e-15);
        assert!((m.false_negative_rate - 0.1).abs() < 1e-15);
        assert!((m.dice - 0.9).abs() < 1e-15);
        // 9/20 + 89/180
        assert!((m.balanced_accuracy - (0.45 + 89.0 / 180.0)).abs() < 1e-15);
        assert!((m.balanced_accuracy - 0.944_444_444_444_444_4).abs() < 1e-12);
    }

    #[test]
    fn empty_positive_class() {
        let gt = Array2::from_elem((4, 4), false);
        let m = compute_metrics(gt.view(), gt.view()).unwrap();
        assert_eq!(m.false_negative_rate, 0.0);
        assert_eq!(m.false_omission_rate, 0.0);
        assert_eq!(m.balanced_accuracy, 1.0);
        let mut pred = gt.clone();
        pred[[0, 0]] = true;
        let m = compute_metrics(pred.view(), gt.view()).unwrap();
        assert_eq!(m.false_omission_rate, 1.0);
        assert_eq!(m.dice, 0.0);
        assert!((m.balanced_accuracy - (0.5 + 0.5 * 15.0 / 16.0)).abs() < 1e-15);
    }

    #[test]
    fn edges_of_a_step() {
        let img = Array2::from_shape_fn((4, 6), |(_, j)| if j < 3 { 0.2 } else { 0.8 });
        let e = edge_pixels(img.view(), 0.1);
        for ((_, j), &v) in e.indexed_iter() {
            assert_eq!(v, j == 2 || j == 3);
        }
        let gt = Array2::from_shape_fn((4, 6), |(i, _)| i == 0);
        let mask = Array2::from_elem((4, 6), true);
        assert_eq!(false_positives_within(mask.view(), gt.view(), e.view()).unwrap(), 6);
    }

    #[test]
    fn shape_mismatch() {
        let a = Array2::from_elem((2, 3), false);
        let b = Array2::from_elem((3, 2), false);
        assert!(compute_metrics(a.view(), b.view()).is_err());
    }
}
