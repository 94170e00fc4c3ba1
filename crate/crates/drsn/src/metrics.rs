//! Pixel accuracy and the two-class confusion report.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor4;

/// Pixel-level confusion totals with the target as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.true_neg += other.true_neg;
    }

    /// `(tp + tn) / total`.
    pub fn accuracy(&self) -> f64 {
        (self.true_pos + self.true_neg) as f64 / self.total() as f64
    }
}

fn check_masks<R: Real>(pred: &Tensor4<R>, gt: &Tensor4<R>) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::Dimension(format!(
            "mask shapes differ: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    for (name, t) in [("prediction", pred), ("ground truth", gt)] {
        if t.data().iter().any(|&v| v != R::zero() && v != R::one()) {
            return Err(Error::Input(format!("{name} mask is not binary")));
        }
    }
    Ok(())
}

/// Pixel-level confusion counts between two binary masks.
pub fn confusion<R: Real>(pred: &Tensor4<R>, gt: &Tensor4<R>) -> Result<ConfusionCounts> {
    check_masks(pred, gt)?;
    let mut counts = ConfusionCounts::default();
    for (p, g) in pred.data().iter().zip(gt.data()) {
        let pos = *p == R::one();
        let truth = *g == R::one();
        match (truth, pos) {
            (true, true) => counts.true_pos += 1,
            (true, false) => counts.false_neg += 1,
            (false, true) => counts.false_pos += 1,
            (false, false) => counts.true_neg += 1,
        }
    }
    Ok(counts)
}

/// Fraction of pixels whose predicted class equals the ground truth.
pub fn pixel_accuracy<R: Real>(pred: &Tensor4<R>, gt: &Tensor4<R>) -> Result<f64> {
    Ok(confusion(pred, gt)?.accuracy())
}

/// Row-normalized percentages in the published two-row layout: rows are
/// true classes, columns are predicted classes. A class absent from the
/// ground truth renders as `n/a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfusionReport {
    /// (predicted-target %, predicted-background %) among true target pixels.
    pub target_row: Option<(f64, f64)>,
    /// (predicted-target %, predicted-background %) among true background pixels.
    pub background_row: Option<(f64, f64)>,
    /// Pixel-weighted overall accuracy in [0, 1].
    pub overall: f64,
    /// Mean of the two per-class recalls, when both rows exist.
    pub class_averaged: Option<f64>,
}

/// Builds the report from counts. Requires at least one pixel.
pub fn confusion_report(counts: &ConfusionCounts) -> Result<ConfusionReport> {
    if counts.total() == 0 {
        return Err(Error::Input("confusion counts are empty".into()));
    }
    let pct = |num: u64, den: u64| 100.0 * num as f64 / den as f64;
    let target_total = counts.true_pos + counts.false_neg;
    let background_total = counts.false_pos + counts.true_neg;
    let target_row = (target_total > 0)
        .then(|| (pct(counts.true_pos, target_total), pct(counts.false_neg, target_total)));
    let background_row = (background_total > 0).then(|| {
        (
            pct(counts.false_pos, background_total),
            pct(counts.true_neg, background_total),
        )
    });
    let class_averaged = match (target_row, background_row) {
        (Some((tr, _)), Some((_, br))) => Some((tr + br) / 200.0),
        _ => None,
    };
    Ok(ConfusionReport {
        target_row,
        background_row,
        overall: counts.accuracy(),
        class_averaged,
    })
}

impl ConfusionReport {
    /// Aligned plain-text table plus the overall accuracy lines.
    pub fn to_text(&self) -> String {
        let cell = |v: Option<f64>| match v {
            Some(p) => format!("{p:.2}"),
            None => "n/a".to_string(),
        };
        let row = |name: &str, r: Option<(f64, f64)>| {
            format!(
                "{name:<12}{:>10}{:>12}\n",
                cell(r.map(|r| r.0)),
                cell(r.map(|r| r.1))
            )
        };
        let mut out = String::new();
        out.push_str(&format!("{:<12}{:>10}{:>12}\n", "", "target", "background"));
        out.push_str(&row("target", self.target_row));
        out.push_str(&row("background", self.background_row));
        out.push_str(&format!(
            "overall pixel accuracy: {:.2}%\n",
            100.0 * self.overall
        ));
        match self.class_averaged {
            Some(avg) => {
                out.push_str(&format!("class-averaged accuracy: {:.2}%\n", 100.0 * avg))
            }
            None => out.push_str("class-averaged accuracy: n/a\n"),
        }
        out
    }

    /// CSV rows `class,correct_pct,wrong_pct`.
    pub fn to_csv(&self) -> String {
        let row = |name: &str, correct: Option<f64>, wrong: Option<f64>| match (correct, wrong) {
            (Some(c), Some(w)) => format!("{name},{c:.2},{w:.2}\n"),
            _ => format!("{name},n/a,n/a\n"),
        };
        let mut out = String::from("class,correct_pct,wrong_pct\n");
        out.push_str(&row(
            "target",
            self.target_row.map(|r| r.0),
            self.target_row.map(|r| r.1),
        ));
        out.push_str(&row(
            "background",
            self.background_row.map(|r| r.1),
            self.background_row.map(|r| r.0),
        ));
        out
    }
}
