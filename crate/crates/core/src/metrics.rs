//! Segmentation metrics: confusion matrix, Dice, precision/recall/F1 and
//! one-vs-rest ROC curves.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, Volume};

/// `counts[t][p]`: voxels with true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.counts[i][i]).sum()
    }

    /// Overall top-1 accuracy `trace / total`.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.n_classes).filter(|&t| t != c).map(|t| self.counts[t][c]).sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.n_classes).filter(|&p| p != c).map(|p| self.counts[c][p]).sum()
    }
}

fn check_dims(a: [usize; 3], b: [usize; 3]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimMismatch { left: a, right: b })
    }
}

pub fn confusion(pred: &LabelVolume, truth: &LabelVolume) -> Result<ConfusionMatrix> {
    check_dims(pred.dims(), truth.dims())?;
    let n_classes = pred.n_classes().max(truth.n_classes());
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        counts[t as usize][p as usize] += 1;
    }
    Ok(ConfusionMatrix { n_classes, counts })
}

/// `2|A∩B| / (|A| + |B|)` for `A = {pred = c}`, `B = {truth = c}`; 1 when
/// both sets are empty.
pub fn dsc(pred: &LabelVolume, truth: &LabelVolume, class: u8) -> Result<f64> {
    check_dims(pred.dims(), truth.dims())?;
    let (mut a, mut b, mut both) = (0u64, 0u64, 0u64);
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let (in_a, in_b) = (p == class, t == class);
        a += in_a as u64;
        b += in_b as u64;
        both += (in_a && in_b) as u64;
    }
    Ok(dice_from_counts(both, a, b))
}

pub fn dice_from_counts(intersection: u64, a: u64, b: u64) -> f64 {
    if a + b == 0 {
        1.0
    } else {
        2.0 * intersection as f64 / (a + b) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False when the class has neither true nor predicted voxels.
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub per_class: Vec<ClassScores>,
    /// Unweighted means over all classes.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn precision_recall_f1(cm: &ConfusionMatrix) -> PrecisionRecall {
    let per_class: Vec<ClassScores> = (0..cm.n_classes)
        .map(|c| {
            let tp = cm.true_positives(c);
            let fp = cm.false_positives(c);
            let fn_ = cm.false_negatives(c);
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScores {
                precision,
                recall,
                f1,
                present: tp + fp + fn_ > 0,
            }
        })
        .collect();
    let n = per_class.len().max(1) as f64;
    PrecisionRecall {
        macro_precision: per_class.iter().map(|s| s.precision).sum::<f64>() / n,
        macro_recall: per_class.iter().map(|s| s.recall).sum::<f64>() / n,
        macro_f1: per_class.iter().map(|s| s.f1).sum::<f64>() / n,
        per_class,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `≥ threshold` are called positive.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC of `scores` against binary `positive` labels, sweeping every distinct
/// score plus sentinels at `+∞` and `−∞`. The area is integrated with the
/// trapezoid rule over integer counts. `None` when either class is empty.
pub fn roc_from_scores(scores: &[f64], positive: &[bool]) -> Result<Option<RocCurve>> {
    if scores.len() != positive.len() {
        return Err(Error::SizeMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {bad}")));
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as u64;
    let n_neg = positive.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (p, n) = (n_pos as f64, n_neg as f64);
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    // Twice the area in units of (negatives × positives).
    let mut doubled_area: u128 = 0;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (prev_tp, prev_fp) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        doubled_area += (fp - prev_fp) as u128 * (tp + prev_tp) as u128;
        points.push(RocPoint {
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
            threshold,
        });
    }
    points.push(RocPoint {
        fpr: 1.0,
        tpr: 1.0,
        threshold: f64::NEG_INFINITY,
    });
    let auc = doubled_area as f64 / (2.0 * p * n);
    Ok(Some(RocCurve { points, auc }))
}

/// One-vs-rest ROC of class `class` from its probability volume.
pub fn roc_auc(scores: &Volume<f32>, truth: &LabelVolume, class: u8) -> Result<Option<RocCurve>> {
    check_dims(scores.dims(), truth.dims())?;
    let s: Vec<f64> = scores.data().iter().map(|&v| v as f64).collect();
    let positive: Vec<bool> = truth.data().iter().map(|&t| t == class).collect();
    roc_from_scores(&s, &positive)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    pub dsc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub present: bool,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassReport>,
    /// Unweighted mean of per-class DSC.
    pub aggregate_dsc: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    #[serde(skip)]
    pub roc: Vec<Option<RocCurve>>,
}

/// Scores `pred` against `truth`; `scores`, when given, holds one probability
/// volume per class and adds ROC/AUC.
pub fn evaluate(pred: &LabelVolume, truth: &LabelVolume, scores: Option<&[Volume<f32>]>) -> Result<MetricsReport> {
    let cm = confusion(pred, truth)?;
    let pr = precision_recall_f1(&cm);
    let names = truth.class_names();
    let roc: Vec<Option<RocCurve>> = match scores {
        Some(vols) => {
            if vols.len() != cm.n_classes {
                return Err(Error::SizeMismatch(format!(
                    "{} score volumes for {} classes",
                    vols.len(),
                    cm.n_classes
                )));
            }
            vols.iter()
                .enumerate()
                .map(|(c, v)| roc_auc(v, truth, c as u8))
                .collect::<Result<_>>()?
        }
        None => vec![None; cm.n_classes],
    };
    let classes: Vec<ClassReport> = (0..cm.n_classes)
        .map(|c| {
            let tp = cm.true_positives(c);
            let predicted = tp + cm.false_positives(c);
            let actual = tp + cm.false_negatives(c);
            let s = pr.per_class[c];
            ClassReport {
                name: names.get(c).cloned().unwrap_or_else(|| format!("class_{c}")),
                dsc: dice_from_counts(tp, predicted, actual),
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
                present: s.present,
                auc: roc[c].as_ref().map(|r| r.auc),
            }
        })
        .collect();
    let aggregate_dsc = classes.iter().map(|c| c.dsc).sum::<f64>() / classes.len().max(1) as f64;
    Ok(MetricsReport {
        classes,
        aggregate_dsc,
        macro_precision: pr.macro_precision,
        macro_recall: pr.macro_recall,
        macro_f1: pr.macro_f1,
        accuracy: cm.accuracy(),
        confusion: cm,
        roc,
    })
}

impl MetricsReport {
    /// `class,dsc,precision,recall,f1,auc` rows per class plus an aggregate row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,dsc,precision,recall,f1,auc\n");
        for c in &self.classes {
            let auc = c.auc.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                c.name, c.dsc, c.precision, c.recall, c.f1, auc
            );
        }
        let aucs: Vec<f64> = self.classes.iter().filter_map(|c| c.auc).collect();
        let mean_auc = if aucs.is_empty() {
            String::new()
        } else {
            (aucs.iter().sum::<f64>() / aucs.len() as f64).to_string()
        };
        let _ = writeln!(
            out,
            "aggregate,{},{},{},{},{}",
            self.aggregate_dsc, self.macro_precision, self.macro_recall, self.macro_f1, mean_auc
        );
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

impl RocCurve {
    /// `fpr,tpr,threshold` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(data: Vec<u8>, n_classes: usize) -> LabelVolume {
        let len = data.len();
        LabelVolume::with_class_count([1, 1, len], data, n_classes).unwrap()
    }

    #[test]
    fn identical_masks() {
        let a = labels(vec![0, 1, 2, 2, 1, 0, 0], 3);
        let cm = confusion(&a, &a).unwrap();
        assert_eq!(cm.accuracy(), 1.0);
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.counts[t][p] > 0, t == p);
            }
        }
        for c in 0..3 {
            assert_eq!(dsc(&a, &a, c).unwrap(), 1.0);
        }
        let pr = precision_recall_f1(&cm);
        assert!(pr
            .per_class
            .iter()
            .all(|s| s.precision == 1.0 && s.recall == 1.0 && s.f1 == 1.0));
    }

    #[test]
    fn constant_prediction_half_right() {
        let truth = labels(vec![0, 0, 0, 1, 1, 1], 2);
        let pred = labels(vec![0; 6], 2);
        assert_eq!(confusion(&pred, &truth).unwrap().accuracy(), 0.5);
    }

    #[test]
    fn dice_disjoint_and_enumerated() {
        let a = labels(vec![1, 1, 0, 0], 2);
        let b = labels(vec![0, 0, 1, 1], 2);
        assert_eq!(dsc(&a, &b, 1).unwrap(), 0.0);
        // |A| = 4, |B| = 6, |A∩B| = 3 over 8 voxels.
        let pred = labels(vec![1, 1, 1, 1, 0, 0, 0, 0], 2);
        let truth = labels(vec![1, 1, 1, 0, 1, 1, 1, 0], 2);
        assert!((dsc(&pred, &truth, 1).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(dsc(&pred, &truth, 1).unwrap(), dsc(&truth, &pred, 1).unwrap());
    }

    #[test]
    fn both_empty_dice_is_one() {
        let a = labels(vec![0, 0, 0], 3);
        assert_eq!(dsc(&a, &a, 2).unwrap(), 1.0);
    }

    #[test]
    fn precision_recall_formula() {
        // Class 1: tp = 3, fp = 1, fn = 3.
        let cm = ConfusionMatrix {
            n_classes: 2,
            counts: vec![vec![5, 1], vec![3, 3]],
        };
        let s = precision_recall_f1(&cm).per_class[1];
        assert_eq!(s.precision, 0.75);
        assert_eq!(s.recall, 0.5);
        assert!((s.f1 - 0.6).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_flagged_zero() {
        let a = labels(vec![0, 1, 0], 3);
        let pr = precision_recall_f1(&confusion(&a, &a).unwrap());
        let absent = pr.per_class[2];
        assert_eq!((absent.precision, absent.recall, absent.f1), (0.0, 0.0, 0.0));
        assert!(!absent.present);
    }

    #[test]
    fn dims_must_match() {
        let a = labels(vec![0, 1], 2);
        let b = labels(vec![0, 1, 1], 2);
        assert!(matches!(confusion(&a, &b), Err(Error::DimMismatch { .. })));
        assert!(dsc(&a, &b, 0).is_err());
    }

    #[test]
    fn roc_extremes() {
        let perfect = roc_from_scores(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false])
            .unwrap()
            .unwrap();
        assert_eq!(perfect.auc, 1.0);
        let flat = roc_from_scores(&[0.5; 6], &[true, false, true, false, false, true])
            .unwrap()
            .unwrap();
        assert_eq!(flat.auc, 0.5);
        assert_eq!(flat.points.len(), 3);
        assert!(roc_from_scores(&[0.1, 0.2], &[true, true]).unwrap().is_none());
        assert!(roc_from_scores(&[0.1, f64::NAN], &[true, false]).is_err());
    }

    #[test]
    fn roc_known_value_and_endpoints() {
        let curve = roc_from_scores(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true])
            .unwrap()
            .unwrap();
        assert_eq!(curve.auc, 0.75);
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert!(curve.to_csv().starts_with("fpr,tpr,threshold\n0,0,inf\n"));
    }

    #[test]
    fn report_aggregates_and_csv() {
        let truth = labels(vec![0, 0, 1, 1, 2, 2], 3);
        let pred = labels(vec![0, 1, 1, 1, 2, 0], 3);
        let report = evaluate(&pred, &truth, None).unwrap();
        let mean = report.classes.iter().map(|c| c.dsc).sum::<f64>() / 3.0;
        assert_eq!(report.aggregate_dsc, mean);
        assert_eq!(report.accuracy, 4.0 / 6.0);
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().last().unwrap().starts_with("aggregate,"));
    }
}
