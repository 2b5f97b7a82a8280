//! Report file: one JSON record per test instance, then a final
//! `{"aggregate":{…}}` line. Records are appended while a run progresses
//! and the file is rewritten in id order when it completes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rarex_core::label::RelationLabel;
use rarex_core::metrics::{aggregate, Aggregate, Outcome};
use rarex_core::parse::MatchRule;
use rarex_gateway::CacheStats;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::EvalError;
use crate::spec::ExperimentSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    /// Configuration hash of the run that produced the record.
    pub run: String,
    pub id: String,
    pub gold: RelationLabel,
    pub predicted: RelationLabel,
    pub rule: MatchRule,
    pub matched_span: String,
    pub prompt_hash: String,
    pub demo_ids: Vec<String>,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl InstanceRecord {
    pub fn outcome(&self) -> Outcome {
        Outcome::new(self.gold, self.predicted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSummary {
    pub config_hash: String,
    pub spec: ExperimentSpec,
    pub model: String,
    pub tool_version: String,
    pub label_histogram: BTreeMap<RelationLabel, u64>,
    pub metrics: Aggregate,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AggregateLine {
    aggregate: ReportSummary,
}

/// Counters describing how a run went; not part of the report bytes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub evaluated: usize,
    pub resumed: usize,
    pub cot_generated: usize,
    pub llm_cache: CacheStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub records: Vec<InstanceRecord>,
    pub summary: ReportSummary,
    pub stats: RunStats,
}

impl EvalReport {
    /// Sorts records by id and aggregates them.
    pub fn build(
        mut records: Vec<InstanceRecord>,
        config_hash: String,
        spec: ExperimentSpec,
        model: String,
        stats: RunStats,
    ) -> Result<Self, EvalError> {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let outcomes: Vec<Outcome> = records.iter().map(InstanceRecord::outcome).collect();
        let metrics = aggregate(&outcomes).map_err(|e| EvalError::Spec(format!("cannot aggregate: {e}")))?;
        let mut label_histogram = BTreeMap::new();
        for r in &records {
            *label_histogram.entry(r.gold).or_insert(0) += 1;
        }
        let summary = ReportSummary {
            config_hash,
            spec,
            model,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            label_histogram,
            metrics,
        };
        Ok(EvalReport { records, summary, stats })
    }

    pub fn micro_f1(&self) -> f64 {
        self.summary.metrics.micro_f1
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serialization is infallible"));
            out.push('\n');
        }
        let line = AggregateLine { aggregate: self.summary.clone() };
        out.push_str(&serde_json::to_string(&line).expect("summary serialization is infallible"));
        out.push('\n');
        out
    }

    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }

    pub fn write(&self, path: &Path) -> Result<(), EvalError> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), EvalError> {
    let err = |m: String| EvalError::Report { path: path.to_path_buf(), message: m };
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent).map_err(|e| err(e.to_string()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| err(e.to_string()))?;
    tmp.write_all(bytes).map_err(|e| err(e.to_string()))?;
    tmp.persist(path).map_err(|e| err(e.to_string()))?;
    Ok(())
}

pub(crate) fn append_records(path: &Path, records: &[InstanceRecord]) -> Result<(), EvalError> {
    let err = |m: String| EvalError::Report { path: path.to_path_buf(), message: m };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| err(e.to_string()))?;
    }
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| err(e.to_string()))?;
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r).map_err(|e| err(e.to_string()))?);
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(|e| err(e.to_string()))?;
    file.flush().map_err(|e| err(e.to_string()))
}

/// Reads a complete or partial report. A missing file reads as empty.
pub fn read_report(path: &Path) -> Result<(Vec<InstanceRecord>, Option<ReportSummary>), EvalError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), None)),
        Err(e) => return Err(EvalError::Report { path: path.to_path_buf(), message: e.to_string() }),
    };
    let mut records = Vec::new();
    let mut summary = None;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| EvalError::Report { path: path.to_path_buf(), message: format!("line {}: {m}", n + 1) };
        if line.starts_with("{\"aggregate\"") {
            let a: AggregateLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            summary = Some(a.aggregate);
        } else {
            records.push(serde_json::from_str(line).map_err(|e| err(e.to_string()))?);
        }
    }
    Ok((records, summary))
}

/// Recomputes the aggregate from stored records.
pub fn reaggregate(records: &[InstanceRecord]) -> Result<Aggregate, EvalError> {
    let outcomes: Vec<Outcome> = records.iter().map(InstanceRecord::outcome).collect();
    aggregate(&outcomes).map_err(|e| EvalError::Spec(format!("cannot aggregate: {e}")))
}
