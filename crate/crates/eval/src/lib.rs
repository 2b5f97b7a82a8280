//! Experiment orchestration on top of the retrieval core and the LLM
//! gateway: runs, resumable reports, shot ablations, summary emitters and
//! the synthetic fixtures the offline test suite runs on.

pub mod ablation;
pub mod emit;
pub mod error;
pub mod report;
pub mod run;
pub mod spec;
pub mod synthetic;

pub use ablation::{ablate_shots, AblationRow, DEFAULT_SHOTS};
pub use error::EvalError;
pub use report::{read_report, reaggregate, EvalReport, InstanceRecord, ReportSummary, RunStats};
pub use run::{config_hash, fill_cot_cache, preflight, retrieve_demos, run_experiment, CotFill, ExperimentInputs};
pub use spec::ExperimentSpec;
pub use synthetic::SyntheticBundle;
