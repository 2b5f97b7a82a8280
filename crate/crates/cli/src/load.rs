//! Reads the inputs a command needs, classifying failures.

use std::path::{Path, PathBuf};

use anyhow::anyhow;
use rarex_core::corpus::{parse_corpus, Corpus, Split};
use rarex_core::embedding::{Channel, EmbeddingStore};
use rarex_core::projection::ProjectionHead;
use rarex_core::prompt::{CoTStyle, Templates};
use rarex_core::retrieval::Strategy;
use rarex_eval::ExperimentSpec;
use rarex_gateway::{LlmClient, ResponseCache};

use crate::config::Config;
use crate::failure::{Classify, CmdResult, Failure};

pub fn existing(path: &Path, what: &str) -> CmdResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Invalid(anyhow!("{what} {} does not exist", path.display())))
    }
}

pub fn corpus(cfg: &Config, split: Split) -> CmdResult<(PathBuf, Corpus)> {
    let (slot, key) = match split {
        Split::Train => (&cfg.paths.train, "train"),
        Split::Test => (&cfg.paths.test, "test"),
    };
    let path = cfg.require(slot, key).invalid()?;
    corpus_at(&path, cfg, split).map(|c| (path, c))
}

pub fn corpus_at(path: &Path, cfg: &Config, split: Split) -> CmdResult<Corpus> {
    existing(path, "corpus")?;
    parse_corpus(path, cfg.lang, split).map_err(|e| Failure::by(e.is_validation(), anyhow!("{}: {e}", path.display())))
}

pub fn store_at(path: &Path) -> CmdResult<EmbeddingStore> {
    existing(path, "embedding file")?;
    EmbeddingStore::load(path).map_err(|e| Failure::by(e.is_validation(), anyhow!("{}: {e}", path.display())))
}

pub fn base_store(cfg: &Config) -> CmdResult<(PathBuf, EmbeddingStore)> {
    let path = cfg.require(&cfg.paths.embeddings, "embeddings").invalid()?;
    store_at(&path).map(|s| (path, s))
}

/// The fine-tuned store when rar needs it and one exists, else the base
/// store.
pub fn store_for(cfg: &Config, strategy: Option<Strategy>) -> CmdResult<(PathBuf, EmbeddingStore)> {
    let ft = cfg.finetuned_path();
    if strategy == Some(Strategy::Rar) && ft.exists() {
        return store_at(&ft).map(|s| (ft, s));
    }
    base_store(cfg)
}

/// The trained head, if its file exists.
pub fn head(cfg: &Config) -> CmdResult<Option<(PathBuf, ProjectionHead)>> {
    let path = cfg.head_path();
    if !path.exists() {
        return Ok(None);
    }
    let (head, _) = ProjectionHead::load(&path).invalid()?;
    Ok(Some((path, head)))
}

pub fn templates(cfg: &Config) -> CmdResult<Templates> {
    Templates::load(cfg.lang, cfg.paths.templates.as_deref()).invalid()
}

pub fn has_ft_channels(store: &EmbeddingStore) -> bool {
    [Channel::FtSentence, Channel::FtE1, Channel::FtE2].iter().all(|c| store.has_channel(*c))
}

/// Experiment spec from the `[experiment]` and `[retrieval]` sections.
pub fn spec(cfg: &Config) -> CmdResult<ExperimentSpec> {
    let e = &cfg.experiment;
    let zero_shot = e.style == CoTStyle::StaticZeroShot;
    let strategy = match e.strategy {
        Some(s) => Some(s),
        None if zero_shot => None,
        None => Some(cfg.retrieval.strategy),
    };
    let spec = ExperimentSpec {
        name: e.name.clone(),
        lang: cfg.lang,
        strategy,
        style: e.style,
        shots: if zero_shot && e.strategy.is_none() { 0 } else { e.shots },
        weights: cfg.retrieval.weights,
        seed: cfg.seed,
        demo_order: e.demo_order,
    };
    spec.validate()?;
    Ok(spec)
}

/// Client for an endpoint, with the shared response cache. The API key is
/// checked here so a missing one fails before any work starts.
pub fn client(cfg: &Config, endpoint: Option<&str>) -> CmdResult<(String, LlmClient)> {
    let (name, e) = cfg.endpoint(endpoint).invalid()?;
    e.api_key()?;
    let client = LlmClient::from_config(e)?.with_cache(ResponseCache::new(cfg.response_cache_path()));
    Ok((name, client))
}
