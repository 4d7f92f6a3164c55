//! Ranking and confusion metrics for scored, labeled windows or frames.

mod pca;

pub use pca::{fit_pca, pca_baseline, PcaComponents, PcaModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores paired with ground-truth labels; `true` marks an anomaly.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLabels {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Data("no scored samples".into()));
        }
        if scores.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} scores vs {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if !scores.iter().all(|s| s.is_finite()) {
            return Err(Error::Data("scores must be finite".into()));
        }
        Ok(ScoredLabels { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    /// Keep the index range `[start, end)` (e.g. a validation slice).
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::Contract(format!(
                "slice [{start}, {end}) out of range for {}",
                self.len()
            )));
        }
        ScoredLabels::new(
            self.scores[start..end].to_vec(),
            self.labels[start..end].to_vec(),
        )
    }

    fn require_both_classes(&self, what: &str) -> Result<()> {
        if self.positives() == 0 || self.negatives() == 0 {
            return Err(Error::Data(format!(
                "{what} undefined: needs at least one positive and one negative"
            )));
        }
        Ok(())
    }

    /// Indices sorted by descending score.
    fn descending_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        order
    }
}

/// ROC curve points and its trapezoidal area.
#[derive(Debug, Clone)]
pub struct RocCurve {
    /// (false positive rate, true positive rate), threshold descending.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Sweep thresholds over the distinct scores (ties collapse into one
/// step) and integrate by trapezoid, which credits tied (positive,
/// negative) pairs with exactly ½.
pub fn roc_curve(data: &ScoredLabels) -> Result<RocCurve> {
    data.require_both_classes("ROC")?;
    let order = data.descending_order();
    let p = data.positives() as f64;
    let n = data.negatives() as f64;

    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let score = data.scores[order[i]];
        while i < order.len() && data.scores[order[i]] == score {
            if data.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x0, y0) = *points.last().unwrap();
        let (x1, y1) = (fp as f64 / n, tp as f64 / p);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
        points.push((x1, y1));
    }
    Ok(RocCurve { points, auc })
}

/// Precision-recall curve points and average precision.
#[derive(Debug, Clone)]
pub struct PrCurve {
    /// (recall, precision), threshold descending.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
}

/// AP as the step-wise sum Σ (R_i − R_{i−1})·P_i over descending
/// distinct-score thresholds.
pub fn pr_curve(data: &ScoredLabels) -> Result<PrCurve> {
    if data.positives() == 0 {
        return Err(Error::Data("average precision undefined without positives".into()));
    }
    let order = data.descending_order();
    let total_pos = data.positives() as f64;

    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let score = data.scores[order[i]];
        while i < order.len() && data.scores[order[i]] == score {
            if data.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / total_pos;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push((recall, precision));
    }
    Ok(PrCurve { points, ap })
}

/// Threshold maximizing Youden's J = TPR − FPR.
///
/// Candidates are the midpoints between consecutive distinct scores plus
/// the maximum score (flag nothing); ties resolve toward the higher
/// threshold, i.e. fewer false positives.
pub fn youden_threshold(data: &ScoredLabels) -> Result<f64> {
    data.require_both_classes("Youden's J")?;
    let mut distinct: Vec<f64> = data.scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let mut candidates: Vec<f64> = distinct
        .windows(2)
        .map(|w| w[0] + (w[1] - w[0]) / 2.0)
        .collect();
    candidates.push(*distinct.last().unwrap());

    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &thr in &candidates {
        let m = confusion_at(data, thr);
        let j = m.tpr().unwrap_or(0.0) - m.fpr().unwrap_or(0.0);
        if j >= best.0 {
            best = (j, thr);
        }
    }
    Ok(best.1)
}

/// Counts at one decision threshold (flag = score strictly above).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Precision, absent when nothing was flagged.
    pub fn precision(&self) -> Option<f64> {
        let denom = self.tp + self.fp;
        (denom > 0).then(|| self.tp as f64 / denom as f64)
    }

    /// Recall / true positive rate, absent without positives.
    pub fn tpr(&self) -> Option<f64> {
        let denom = self.tp + self.fn_;
        (denom > 0).then(|| self.tp as f64 / denom as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        self.tpr()
    }

    /// False positive rate, absent without negatives.
    pub fn fpr(&self) -> Option<f64> {
        let denom = self.fp + self.tn;
        (denom > 0).then(|| self.fp as f64 / denom as f64)
    }

    /// Harmonic mean of precision and recall when both are defined.
    pub fn f1(&self) -> Option<f64> {
        let p = self.precision()?;
        let r = self.recall()?;
        if p + r == 0.0 {
            return Some(0.0);
        }
        Some(2.0 * p * r / (p + r))
    }
}

/// Count outcomes with flag = score > threshold.
pub fn confusion_at(data: &ScoredLabels, threshold: f64) -> ConfusionMatrix {
    let mut m = ConfusionMatrix {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&score, &label) in data.scores.iter().zip(&data.labels) {
        let flagged = score > threshold;
        match (flagged, label) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, false) => m.tn += 1,
            (false, true) => m.fn_ += 1,
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sl(scores: &[f64], labels: &[bool]) -> ScoredLabels {
        ScoredLabels::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn auc_perfect_separation() {
        let d = sl(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]);
        assert_eq!(roc_curve(&d).unwrap().auc, 1.0);
    }

    #[test]
    fn auc_hand_example() {
        let d = sl(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]);
        let auc = roc_curve(&d).unwrap().auc;
        assert!((auc - 0.75).abs() < 1e-15);
    }

    #[test]
    fn auc_rejects_single_class() {
        let d = sl(&[0.1, 0.2], &[true, true]);
        assert!(matches!(roc_curve(&d), Err(Error::Data(_))));
    }

    #[test]
    fn ap_perfect_ranking_is_one() {
        let d = sl(&[5.0, 4.0, 1.0, 0.5], &[true, true, false, false]);
        assert_eq!(pr_curve(&d).unwrap().ap, 1.0);
    }

    #[test]
    fn ap_single_positive_ranked_last() {
        let d = sl(&[4.0, 3.0, 2.0, 1.0], &[false, false, false, true]);
        assert!((pr_curve(&d).unwrap().ap - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ap_needs_positives() {
        let d = sl(&[0.1, 0.2], &[false, false]);
        assert!(pr_curve(&d).is_err());
    }

    #[test]
    fn youden_hand_example_and_gap_midpoint() {
        let d = sl(&[1.0, 2.0, 3.0, 4.0], &[false, false, true, true]);
        let thr = youden_threshold(&d).unwrap();
        assert_eq!(thr, 2.5);
        let m = confusion_at(&d, thr);
        assert_eq!((m.tpr().unwrap() - m.fpr().unwrap()), 1.0);
    }

    #[test]
    fn youden_tie_breaks_toward_higher_threshold() {
        // J = 1 attainable only between 2 and 3, but build a tie:
        // scores 1,2 negative; 3 positive; 4 negative; 5 positive
        // cut 2.5: tp=2/2, fp=1/3 → J = 1 − 1/3
        // cut 4.5: tp=1/2, fp=0 → J = 1/2 → lower
        // make an exact tie instead: [1(neg), 2(pos), 3(neg), 4(pos)]
        // cut 1.5: TPR=1, FPR=1/2 → J=1/2; cut 3.5: TPR=1/2, FPR=0 → J=1/2
        let d = sl(&[1.0, 2.0, 3.0, 4.0], &[false, true, false, true]);
        let thr = youden_threshold(&d).unwrap();
        assert_eq!(thr, 3.5);
    }

    #[test]
    fn confusion_matches_paper_arithmetic() {
        let m = ConfusionMatrix {
            tp: 11,
            fp: 1422,
            tn: 17481,
            fn_: 446,
        };
        assert_eq!(m.total(), 19360);
        let tpr = m.tpr().unwrap();
        let fpr = m.fpr().unwrap();
        assert!(((tpr * 1000.0).round() / 1000.0 - 0.024).abs() < 1e-12);
        assert!(((fpr * 1000.0).round() / 1000.0 - 0.075).abs() < 1e-12);
    }

    #[test]
    fn recall_is_one_when_threshold_below_everything() {
        let d = sl(&[0.5, 0.7, 0.9], &[true, true, true]);
        let m = confusion_at(&d, 0.0);
        assert_eq!(m.recall(), Some(1.0));
        assert_eq!(m.fpr(), None);
    }

    #[test]
    fn precision_absent_when_nothing_flagged() {
        let d = sl(&[0.1, 0.2], &[true, false]);
        let m = confusion_at(&d, 1.0);
        assert_eq!(m.precision(), None);
        assert_eq!(m.f1(), None);
    }

    #[test]
    fn strict_inequality_at_threshold() {
        let d = sl(&[1.0, 2.0], &[false, true]);
        let m = confusion_at(&d, 2.0);
        assert_eq!(m.tp, 0); // 2.0 > 2.0 is false
        assert_eq!(m.fn_, 1);
    }
}
