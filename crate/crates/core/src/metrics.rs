//! Micro-F1, confusion matrices and per-class statistics.
//!
//! Every instance gets exactly one prediction and INVALID counts as a
//! wrong one, so each error is one false positive (for the predicted
//! column, INVALID included) and one false negative (for the gold row).
//! Pooled precision and recall are then both `correct / total`, and
//! micro-F1 equals accuracy.

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::label::RelationLabel;

/// Gold and predicted label for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub gold: RelationLabel,
    pub predicted: RelationLabel,
}

impl Outcome {
    pub fn new(gold: RelationLabel, predicted: RelationLabel) -> Self {
        Outcome { gold, predicted }
    }

    pub fn is_correct(&self) -> bool {
        self.gold == self.predicted
    }
}

fn check(records: &[Outcome]) -> Result<(), MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    if records.iter().any(|r| !r.gold.is_gold()) {
        return Err(MetricsError::InvalidGold);
    }
    Ok(())
}

pub fn accuracy(records: &[Outcome]) -> Result<f64, MetricsError> {
    check(records)?;
    Ok(records.iter().filter(|r| r.is_correct()).count() as f64 / records.len() as f64)
}

/// Pooled TP/FP/FN over all prediction columns.
pub fn micro_f1(records: &[Outcome]) -> Result<f64, MetricsError> {
    check(records)?;
    let tp = records.iter().filter(|r| r.is_correct()).count() as f64;
    let wrong = records.len() as f64 - tp;
    let (fp, fn_) = (wrong, wrong);
    if tp == 0.0 {
        return Ok(0.0);
    }
    let p = tp / (tp + fp);
    let r = tp / (tp + fn_);
    Ok(2.0 * p * r / (p + r))
}

/// Micro-F1 after dropping instances predicted INVALID; `None` when every
/// prediction was INVALID.
pub fn micro_f1_excluding_invalid(records: &[Outcome]) -> Result<Option<f64>, MetricsError> {
    check(records)?;
    let kept: Vec<Outcome> = records.iter().copied().filter(|r| r.predicted.is_gold()).collect();
    if kept.is_empty() {
        return Ok(None);
    }
    micro_f1(&kept).map(Some)
}

/// Gold rows (8) by predicted columns (8 + INVALID), in label order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub rows: Vec<RelationLabel>,
    pub columns: Vec<RelationLabel>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn empty() -> Self {
        ConfusionMatrix {
            rows: RelationLabel::GOLD.to_vec(),
            columns: RelationLabel::PREDICTABLE.to_vec(),
            counts: vec![vec![0; RelationLabel::PREDICTABLE.len()]; RelationLabel::GOLD.len()],
        }
    }

    pub fn get(&self, gold: RelationLabel, predicted: RelationLabel) -> u64 {
        self.counts[gold.index()][predicted.index()]
    }

    pub fn row_sum(&self, gold: RelationLabel) -> u64 {
        self.counts[gold.index()].iter().sum()
    }

    pub fn column_sum(&self, predicted: RelationLabel) -> u64 {
        self.counts.iter().map(|row| row[predicted.index()]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("gold\\predicted");
        for c in &self.columns {
            out.push(',');
            out.push_str(c.code());
        }
        out.push('\n');
        for (label, row) in self.rows.iter().zip(&self.counts) {
            out.push_str(label.code());
            for n in row {
                out.push_str(&format!(",{n}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(records: &[Outcome]) -> Result<ConfusionMatrix, MetricsError> {
    check(records)?;
    let mut m = ConfusionMatrix::empty();
    for r in records {
        m.counts[r.gold.index()][r.predicted.index()] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub label: RelationLabel,
    /// Gold instances of this label.
    pub support: u64,
    /// Predictions of this label.
    pub predicted: u64,
    pub true_positives: u64,
    /// Zero when the label was never predicted.
    pub precision: f64,
    /// Zero when the label never occurs in gold.
    pub recall: f64,
    pub f1: f64,
}

pub fn per_class(m: &ConfusionMatrix) -> Vec<ClassStats> {
    RelationLabel::GOLD
        .iter()
        .map(|&label| {
            let tp = m.get(label, label);
            let support = m.row_sum(label);
            let predicted = m.column_sum(label);
            let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassStats { label, support, predicted, true_positives: tp, precision, recall, f1 }
        })
        .collect()
}

/// Everything derivable from a set of outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub total: u64,
    pub correct: u64,
    pub invalid: u64,
    pub accuracy: f64,
    pub micro_f1: f64,
    pub micro_f1_excluding_invalid: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassStats>,
}

pub fn aggregate(records: &[Outcome]) -> Result<Aggregate, MetricsError> {
    let confusion = confusion(records)?;
    let accuracy = accuracy(records)?;
    let micro_f1 = micro_f1(records)?;
    assert!(
        (micro_f1 - accuracy).abs() <= 1e-12,
        "micro-F1 {micro_f1} must equal accuracy {accuracy} under single-label full coverage"
    );
    Ok(Aggregate {
        total: records.len() as u64,
        correct: records.iter().filter(|r| r.is_correct()).count() as u64,
        invalid: records.iter().filter(|r| r.predicted == RelationLabel::Invalid).count() as u64,
        accuracy,
        micro_f1,
        micro_f1_excluding_invalid: micro_f1_excluding_invalid(records)?,
        per_class: per_class(&confusion),
        confusion,
    })
}
