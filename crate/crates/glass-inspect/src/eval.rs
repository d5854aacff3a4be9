//! Detection matching and confusion metrics: sensitivity, specificity,
//! precision and overall accuracy over (report, ground truth) pairs, plus
//! the 6×6 per-class confusion matrix of matched pairs.

use crate::classify::{BinaryVerdict, InspectionReport, RegionClass};
use crate::error::{Error, Result};
use crate::proposals::iou;
use crate::synth::GroundTruth;

/// Binary confusion counts. "Positive" means a defect verdict.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl ConfusionCounts {
    pub fn new(tp: usize, fn_: usize, tn: usize, fp: usize) -> Self {
        ConfusionCounts { tp, fn_, tn, fp }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
        self.fp += other.fp;
    }
}

/// The four metrics; `None` marks an undefined value (zero denominator),
/// which is distinct from a genuine 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Computes sensitivity TP/(TP+FN), specificity TN/(TN+FP), precision
/// TP/(TP+FP) and overall accuracy (TP+TN)/total.
pub fn metrics(c: &ConfusionCounts) -> Result<MetricSet> {
    if c.total() == 0 {
        return Err(Error::InvalidArgument(
            "metrics need at least one counted outcome".into(),
        ));
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    Ok(MetricSet {
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        precision: ratio(c.tp, c.tp + c.fp),
        accuracy: ratio(c.tp + c.tn, c.total()),
    })
}

/// Outcome of matching one report against one ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub counts: ConfusionCounts,
    /// `matrix[truth][predicted]` over matched pairs, wire-index order.
    pub matrix: [[usize; 6]; 6],
    /// (finding index, truth index, IoU) of the matched pairs.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Greedy one-to-one matching by descending IoU (ties by finding index,
/// then truth index).
///
/// A matched pair counts by (finding verdict, truth binary projection):
/// Defect/Defect → TP, Background/Background → TN, Defect/Background → FP,
/// Background/Defect → FN. Unmatched defect truths count FN; unmatched
/// defect-verdict findings count FP.
pub fn match_report(
    report: &InspectionReport,
    truth: &GroundTruth,
    iou_thresh: f64,
) -> Result<MatchResult> {
    if !(iou_thresh > 0.0 && iou_thresh <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "iou threshold must lie in (0, 1], got {iou_thresh}"
        )));
    }

    let mut candidates = Vec::new();
    for (fi, finding) in report.findings.iter().enumerate() {
        for (ti, entry) in truth.entries.iter().enumerate() {
            let overlap = iou(&finding.region.bbox, &entry.bbox);
            if overlap >= iou_thresh {
                candidates.push((fi, ti, overlap));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .expect("IoU is finite")
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });

    let mut finding_matched = vec![false; report.findings.len()];
    let mut truth_matched = vec![false; truth.entries.len()];
    let mut pairs = Vec::new();
    for (fi, ti, overlap) in candidates {
        if finding_matched[fi] || truth_matched[ti] {
            continue;
        }
        finding_matched[fi] = true;
        truth_matched[ti] = true;
        pairs.push((fi, ti, overlap));
    }

    let mut counts = ConfusionCounts::default();
    let mut matrix = [[0usize; 6]; 6];
    for &(fi, ti, _) in &pairs {
        let finding = &report.findings[fi];
        let truth_entry = &truth.entries[ti];
        match (finding.verdict, truth_entry.class.is_defect()) {
            (BinaryVerdict::Defect, true) => counts.tp += 1,
            (BinaryVerdict::Background, false) => counts.tn += 1,
            (BinaryVerdict::Defect, false) => counts.fp += 1,
            (BinaryVerdict::Background, true) => counts.fn_ += 1,
        }
        matrix[truth_entry.class.wire_index()][finding.class.wire_index()] += 1;
    }
    for (ti, entry) in truth.entries.iter().enumerate() {
        if !truth_matched[ti] && entry.class.is_defect() {
            counts.fn_ += 1;
        }
    }
    for (fi, finding) in report.findings.iter().enumerate() {
        if !finding_matched[fi] && finding.verdict.is_defect() {
            counts.fp += 1;
        }
    }

    Ok(MatchResult {
        counts,
        matrix,
        pairs,
    })
}

/// Formats a metric for the CSV table; undefined values print as
/// "undefined" rather than 0.
pub fn format_metric(m: Option<f64>) -> String {
    match m {
        Some(v) => format!("{v:.4}"),
        None => "undefined".to_string(),
    }
}
