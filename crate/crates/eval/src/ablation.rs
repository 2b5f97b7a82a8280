//! Shot-count ablation: one run per shot count, sharing caches.

use std::path::Path;

use rarex_gateway::LlmClient;
use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::run::{run_experiment, ExperimentInputs};
use crate::spec::ExperimentSpec;

pub const DEFAULT_SHOTS: [usize; 3] = [5, 10, 15];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub shots: usize,
    pub micro_f1: f64,
    pub accuracy: f64,
    pub invalid: u64,
    pub total: u64,
    pub report_hash: String,
}

/// Runs `template` once per entry of `shots`. Reports go to
/// `<dir>/<name>-<k>shot.jsonl` when `report_dir` is given.
pub fn ablate_shots(
    template: &ExperimentSpec,
    shots: &[usize],
    inputs: ExperimentInputs<'_>,
    client: &LlmClient,
    report_dir: Option<&Path>,
) -> Result<Vec<AblationRow>, EvalError> {
    if template.strategy.is_none() {
        return Err(EvalError::Spec("the shot ablation needs a few-shot strategy".into()));
    }
    if shots.is_empty() {
        return Err(EvalError::Spec("no shot counts given".into()));
    }
    shots
        .iter()
        .map(|&k| {
            let spec = ExperimentSpec { name: format!("{}-{k}shot", template.name), shots: k, ..template.clone() };
            let path = report_dir.map(|d| d.join(format!("{}.jsonl", spec.name)));
            let report = run_experiment(&spec, inputs, client, path.as_deref())?;
            let m = &report.summary.metrics;
            Ok(AblationRow {
                shots: k,
                micro_f1: m.micro_f1,
                accuracy: m.accuracy,
                invalid: m.invalid,
                total: m.total,
                report_hash: report.content_hash(),
            })
        })
        .collect()
}
