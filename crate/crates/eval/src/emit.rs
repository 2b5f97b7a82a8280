//! Summary tables: Markdown (methods by model), CSV and per-class CSV.

use rarex_core::metrics::Aggregate;
use serde::{Deserialize, Serialize};

use crate::ablation::AblationRow;
use crate::report::{EvalReport, ReportSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub strategy: String,
    pub style: String,
    pub model: String,
    pub lang: String,
    pub shots: usize,
    pub micro_f1: f64,
    pub micro_f1_excluding_invalid: Option<f64>,
    pub accuracy: f64,
    pub invalid: u64,
    pub total: u64,
}

impl SummaryRow {
    pub fn from_report(r: &EvalReport) -> Self {
        Self::from_summary(&r.summary)
    }

    pub fn from_summary(s: &ReportSummary) -> Self {
        SummaryRow {
            experiment: s.spec.name.clone(),
            strategy: s.spec.strategy.map_or_else(|| "none".to_string(), |x| x.to_string()),
            style: s.spec.style.to_string(),
            model: s.model.clone(),
            lang: s.spec.lang.to_string(),
            shots: s.spec.shots,
            micro_f1: s.metrics.micro_f1,
            micro_f1_excluding_invalid: s.metrics.micro_f1_excluding_invalid,
            accuracy: s.metrics.accuracy,
            invalid: s.metrics.invalid,
            total: s.metrics.total,
        }
    }
}

fn first_seen(keys: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for k in keys {
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

/// Methods as rows (strategy / style), `model (lang)` as columns, micro-F1
/// in the cells.
pub fn summary_markdown(rows: &[SummaryRow]) -> String {
    let method = |r: &SummaryRow| format!("{} / {}", r.strategy, r.style);
    let column = |r: &SummaryRow| format!("{} ({})", r.model, r.lang);
    let methods = first_seen(rows.iter().map(method));
    let columns = first_seen(rows.iter().map(column));
    let mut out = format!("| Method | {} |\n|---|{}\n", columns.join(" | "), "---|".repeat(columns.len()));
    for m in &methods {
        out.push_str(&format!("| {m} |"));
        for c in &columns {
            let cell = rows
                .iter()
                .rev()
                .find(|r| &method(r) == m && &column(r) == c)
                .map_or_else(|| "-".to_string(), |r| format!("{:.3}", r.micro_f1));
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "experiment,strategy,style,model,lang,shots,micro_f1,micro_f1_excluding_invalid,accuracy,invalid,total\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{},{:.6},{},{}\n",
            r.experiment,
            r.strategy,
            r.style,
            r.model,
            r.lang,
            r.shots,
            r.micro_f1,
            opt(r.micro_f1_excluding_invalid),
            r.accuracy,
            r.invalid,
            r.total
        ));
    }
    out
}

pub fn ablation_markdown(rows: &[AblationRow]) -> String {
    let mut out = String::from("| Shots | Micro-F1 | Invalid | Total |\n|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!("| {} | {:.3} | {} | {} |\n", r.shots, r.micro_f1, r.invalid, r.total));
    }
    out
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("shots,micro_f1,accuracy,invalid,total,report_hash\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{},{},{}\n",
            r.shots, r.micro_f1, r.accuracy, r.invalid, r.total, r.report_hash
        ));
    }
    out
}

pub fn per_class_csv(a: &Aggregate) -> String {
    let mut out = String::from("label,support,predicted,true_positives,precision,recall,f1\n");
    for c in &a.per_class {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6}\n",
            c.label, c.support, c.predicted, c.true_positives, c.precision, c.recall, c.f1
        ));
    }
    out
}
