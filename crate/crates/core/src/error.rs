use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("unknown relation code `{code}` (valid codes: {valid})")]
    UnknownCode { code: String, valid: String },
    #[error("invalid label alias file: {0}")]
    AliasFile(String),
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: instance `{id}`: {message}")]
    Validation { line: usize, id: String, message: String },
    #[error("sample size {requested} exceeds corpus size {available}")]
    SampleTooLarge { requested: usize, available: usize },
}

impl CorpusError {
    /// True for problems with the corpus content rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, CorpusError::Io { .. })
    }
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes: expected RAREMB01")]
    BadMagic,
    #[error("truncated record {index}: {message}")]
    Truncated { index: usize, message: String },
    #[error("record {index}: {message}")]
    Malformed { index: usize, message: String },
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("duplicate embedding for id `{id}` channel `{channel}`")]
    Duplicate { id: String, channel: String },
    #[error("channel `{channel}` has dim {expected} but `{id}` has dim {found}")]
    DimMismatch { channel: String, id: String, expected: usize, found: usize },
    #[error("non-finite component at position {position} for id `{id}` channel `{channel}`")]
    NonFinite { id: String, channel: String, position: usize },
    #[error("empty vector for id `{id}` channel `{channel}`")]
    Empty { id: String, channel: String },
    #[error("missing embedding for id `{id}` channel `{channel}`{hint}")]
    Missing { id: String, channel: String, hint: String },
    #[error("cannot compare vectors of dim {left} and {right}")]
    IncompatibleDims { left: usize, right: usize },
    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,
}

impl EmbeddingError {
    pub fn is_validation(&self) -> bool {
        !matches!(self, EmbeddingError::Io { .. })
    }
}

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("weights must be finite and nonnegative, got {0:?}")]
    Negative(Vec<f64>),
    #[error("{group} weights sum to {sum}, expected 1")]
    BadSum { group: &'static str, sum: f64 },
}

#[derive(Debug, Error)]
pub enum MiningError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("corpus of {size} instances is too small to mine {k} positives and {k} negatives per anchor (need at least {needed})")]
    CorpusTooSmall { size: usize, k: usize, needed: usize },
    #[error("pair file {path}: {message}")]
    PairFile { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("empty batch")]
    EmptyBatch,
    #[error("no training pairs")]
    NoPairs,
    #[error("input has dim {found}, head expects {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("non-finite value in forward pass")]
    NonFinite,
    #[error("loss diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("head file {path}: {message}")]
    HeadFile { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the {pool} available demonstrations")]
    PoolTooSmall { k: usize, pool: usize },
    #[error("retrieval dump {path}: {message}")]
    Dump { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("missing `{block}` template for language `{lang}` (looked for {path})")]
    MissingTemplate { lang: String, block: String, path: PathBuf },
    #[error("template i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("style {style} requires reasoning text for demonstration `{id}`")]
    MissingReasoning { style: String, id: String },
    #[error("style {style} cannot render demonstrations")]
    NoDemonstrations { style: String },
    #[error("style {style} expects {expected} demonstrations, got {found}")]
    DemoCount { style: String, expected: String, found: usize },
    #[error("demonstration `{id}` was rendered for style {found}, prompt style is {expected}")]
    StyleMismatch { id: String, expected: String, found: String },
    #[error("template vocabulary {path}: {message}")]
    Vocab { path: PathBuf, message: String },
    #[error("demonstration `{id}` has no gold relation")]
    InvalidGold { id: String },
    #[error("style {style} does not request reasoning")]
    NotAReasoningStyle { style: String },
    #[error("cot cache error on {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no records to evaluate")]
    Empty,
    #[error("INVALID cannot be a gold label")]
    InvalidGold,
}
