//! Sequence-level metrics: confusion counts, precision/recall/F1 and the
//! precision-recall curve over a threshold grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::DetectionReport;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Counts from detection reports against `(id, is_anomaly)` ground truth
/// given in the same order.
pub fn confusion(reports: &[DetectionReport], truth: &[(String, bool)]) -> Result<ConfusionCounts> {
    if reports.len() != truth.len() {
        return Err(Error::contract(format!(
            "{} reports but {} ground-truth labels",
            reports.len(),
            truth.len()
        )));
    }
    let mut counts = ConfusionCounts::default();
    for (r, (id, actual)) in reports.iter().zip(truth) {
        if &r.id != id {
            return Err(Error::contract(format!("report {} paired with label for {id}", r.id)));
        }
        counts.add(r.label, *actual);
    }
    Ok(counts)
}

/// Counts when a sequence is flagged iff its peak score exceeds `threshold`.
pub fn confusion_at(peaks: &[f64], truth: &[bool], threshold: f64) -> ConfusionCounts {
    let mut counts = ConfusionCounts::default();
    for (&p, &a) in peaks.iter().zip(truth) {
        counts.add(p > threshold, a);
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision is 0 with no predicted positives, recall is 0 with no actual
/// positives, and F1 is 0 when both are 0.
pub fn precision_recall_f1(c: &ConfusionCounts) -> Prf {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f1 }
}

/// F1 straight from counts, `2TP / (2TP + FP + FN)`.
pub fn f1_from_counts(c: &ConfusionCounts) -> f64 {
    let den = 2 * c.tp + c.fp + c.fn_;
    if den == 0 {
        0.0
    } else {
        (2 * c.tp) as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

impl PrPoint {
    pub fn f1(&self) -> f64 {
        if self.precision + self.recall == 0.0 {
            0.0
        } else {
            2.0 * self.precision * self.recall / (self.precision + self.recall)
        }
    }
}

/// Points in order of increasing threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

const MAX_CURVE_POINTS: usize = 10_000_000;

/// Curve over thresholds `k · step`, from one step below the smallest peak
/// to one step above the largest.
pub fn pr_curve(peaks: &[f64], truth: &[bool], step: f64) -> Result<PrCurve> {
    pr_curve_anchored(peaks, truth, step, 0.0)
}

/// Like [`pr_curve`] with thresholds `anchor + k · step`, so that a chosen
/// operating threshold lies on the grid.
///
/// Where nothing is flagged, precision is taken as 1 so that the curve
/// starts at the top-left corner.
pub fn pr_curve_anchored(peaks: &[f64], truth: &[bool], step: f64, anchor: f64) -> Result<PrCurve> {
    if peaks.len() != truth.len() {
        return Err(Error::contract("peaks and labels differ in length"));
    }
    if !(step > 0.0 && step.is_finite()) || !anchor.is_finite() {
        return Err(Error::config("threshold step must be positive and the anchor finite"));
    }
    let positives = truth.iter().filter(|&&a| a).count();
    if positives == 0 || positives == truth.len() {
        return Err(Error::contract("precision-recall curve needs both normal and anomalous sequences"));
    }
    if peaks.iter().any(|p| !p.is_finite()) {
        return Err(Error::data("non-finite peak score"));
    }
    let lo = peaks.iter().copied().fold(f64::INFINITY, f64::min) - step;
    let hi = peaks.iter().copied().fold(f64::NEG_INFINITY, f64::max) + step;
    let k0 = ((lo - anchor) / step).floor() as i64;
    let k1 = ((hi - anchor) / step).ceil() as i64;
    if (k1 - k0) as usize >= MAX_CURVE_POINTS {
        return Err(Error::config(format!("threshold step {step} gives more than {MAX_CURVE_POINTS} points")));
    }
    let points = (k0..=k1)
        .map(|k| {
            let threshold = anchor + k as f64 * step;
            let c = confusion_at(peaks, truth, threshold);
            let precision = if c.tp + c.fp == 0 {
                1.0
            } else {
                c.tp as f64 / (c.tp + c.fp) as f64
            };
            PrPoint {
                threshold,
                precision,
                recall: c.tp as f64 / positives as f64,
            }
        })
        .collect();
    Ok(PrCurve { points })
}

/// Trapezoidal area under precision as a function of recall, walking the
/// curve from the highest threshold down.
pub fn auprc(curve: &PrCurve) -> f64 {
    let mut pts: Vec<&PrPoint> = curve.points.iter().rev().collect();
    // stable, so equal recalls keep the descending-threshold order
    pts.sort_by(|a, b| a.recall.total_cmp(&b.recall));
    pts.windows(2)
        .map(|p| (p[1].recall - p[0].recall) * (p[0].precision + p[1].precision) / 2.0)
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestF1 {
    /// Point of largest F1 (lowest threshold on ties).
    pub max: PrPoint,
    /// Point closest to precision = recall = 1.
    pub closest: PrPoint,
}

pub fn best_f1(curve: &PrCurve) -> Result<BestF1> {
    let first = *curve.points.first().ok_or_else(|| Error::contract("empty precision-recall curve"))?;
    let dist = |p: &PrPoint| (1.0 - p.precision).hypot(1.0 - p.recall);
    let (mut max, mut closest) = (first, first);
    for p in &curve.points[1..] {
        if p.f1() > max.f1() {
            max = *p;
        }
        if dist(p) < dist(&closest) {
            closest = *p;
        }
    }
    Ok(BestF1 { max, closest })
}

/// Everything reported for one evaluated detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub tau: f64,
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_best: f64,
    pub f1_best_threshold: f64,
    pub f1_closest: f64,
    pub f1_closest_threshold: f64,
    pub auprc: f64,
}

/// Metrics at `tau` plus the curve, using a grid anchored at `tau`.
pub fn evaluate(peaks: &[f64], truth: &[bool], tau: f64, step: f64) -> Result<(EvalSummary, PrCurve)> {
    let counts = confusion_at(peaks, truth, tau);
    let prf = precision_recall_f1(&counts);
    let anchor = if tau.is_finite() { tau } else { 0.0 };
    let curve = pr_curve_anchored(peaks, truth, step, anchor)?;
    let best = best_f1(&curve)?;
    let summary = EvalSummary {
        tau,
        counts,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        f1_best: best.max.f1(),
        f1_best_threshold: best.max.threshold,
        f1_closest: best.closest.f1(),
        f1_closest_threshold: best.closest.threshold,
        auprc: auprc(&curve),
    };
    Ok((summary, curve))
}

pub fn write_curve_csv(curve: &PrCurve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Path(format!("{}: {e}", path.display())))?;
    for p in &curve.points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn conventions() {
        let z = precision_recall_f1(&counts(0, 0, 5, 5));
        assert_eq!((z.precision, z.recall, z.f1), (0.0, 0.0, 0.0));
        let p = precision_recall_f1(&counts(3, 1, 2, 4));
        assert_eq!(p.precision, 0.75);
        assert_eq!(p.recall, 0.6);
        assert!((p.f1 - f1_from_counts(&counts(3, 1, 2, 4))).abs() < 1e-15);
    }

    #[test]
    fn perfect_separation() {
        let peaks = [1.0, 1.2, 5.0, 6.0];
        let truth = [false, false, true, true];
        let curve = pr_curve(&peaks, &truth, 0.1).unwrap();
        assert!((auprc(&curve) - 1.0).abs() < 1e-12);
        let best = best_f1(&curve).unwrap();
        assert_eq!(best.max.f1(), 1.0);
        assert_eq!(best.closest.f1(), 1.0);
    }

    #[test]
    fn explicit_curves() {
        let pt = |threshold, precision, recall| PrPoint { threshold, precision, recall };
        let diag = PrCurve { points: vec![pt(0.0, 0.0, 1.0), pt(1.0, 1.0, 0.0)] };
        assert_eq!(auprc(&diag), 0.5);
        let flat = PrCurve { points: vec![pt(0.0, 1.0, 1.0), pt(1.0, 1.0, 0.0)] };
        assert_eq!(auprc(&flat), 1.0);
    }

    #[test]
    fn thresholds_increase_and_cover_range() {
        let curve = pr_curve(&[0.33, 2.71, -1.05], &[true, false, true], 0.1).unwrap();
        let ts: Vec<f64> = curve.points.iter().map(|p| p.threshold).collect();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        assert!(ts[0] < -1.05 && *ts.last().unwrap() > 2.71);
        assert_eq!(curve.points.last().unwrap().recall, 0.0);
        assert_eq!(curve.points[0].recall, 1.0);
    }

    #[test]
    fn anchored_grid_contains_tau() {
        let peaks = [10.03, 10.07, 10.2, 11.0];
        let truth = [false, true, false, true];
        let (s, curve) = evaluate(&peaks, &truth, 10.05, 0.1).unwrap();
        assert!(curve.points.iter().any(|p| p.threshold == 10.05));
        assert!(s.f1_best >= s.f1);
    }

    #[test]
    fn degenerate_truth_is_contract_error() {
        assert!(matches!(pr_curve(&[1.0, 2.0], &[true, true], 0.1), Err(Error::Contract(_))));
        assert!(matches!(pr_curve(&[1.0, 2.0], &[false, false], 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn confusion_checks_ids() {
        let report = |id: &str, label| DetectionReport {
            id: id.into(),
            scores: vec![],
            tau: 0.0,
            label,
            peak: 0.0,
            peak_time: 0,
            mu: crate::Tensor::zeros(&[0, 0]),
            sigma: crate::Tensor::zeros(&[0, 0]),
        };
        let reports = [report("a", true), report("b", false)];
        let c = confusion(&reports, &[("a".into(), true), ("b".into(), true)]).unwrap();
        assert_eq!(c, counts(1, 0, 1, 0));
        assert!(confusion(&reports, &[("b".into(), true), ("a".into(), true)]).is_err());
    }
}
