//! The shared config file. Relative paths resolve against the directory
//! holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use rarex_core::corpus::Lang;
use rarex_core::prompt::{CoTStyle, DemoOrder};
use rarex_core::retrieval::Strategy;
use rarex_core::training::TrainConfig;
use rarex_core::weights::{MiningWeights, RetrievalWeights};
use rarex_gateway::EndpointConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Directory for every derived artifact; defaults to `runs`.
    pub out: Option<PathBuf>,
    pub finetuned_embeddings: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub head: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub cot_cache: Option<PathBuf>,
    pub response_cache: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningSection {
    pub weights: MiningWeights,
    pub pairs_per_anchor: usize,
}

impl Default for MiningSection {
    fn default() -> Self {
        MiningSection {
            weights: MiningWeights::default(),
            pairs_per_anchor: rarex_core::mining::DEFAULT_PAIRS_PER_ANCHOR,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub strategy: Strategy,
    pub k: usize,
    pub weights: RetrievalWeights,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection { strategy: Strategy::Rar, k: 5, weights: RetrievalWeights::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    /// Falls back to `retrieval.strategy` for few-shot styles.
    pub strategy: Option<Strategy>,
    pub style: CoTStyle,
    pub shots: usize,
    pub demo_order: DemoOrder,
    /// Key into `endpoints`; optional when exactly one is defined.
    pub endpoint: Option<String>,
    /// Endpoint generating demonstration reasoning; defaults to `endpoint`.
    pub cot_endpoint: Option<String>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "experiment".into(),
            strategy: None,
            style: CoTStyle::None,
            shots: 5,
            demo_order: DemoOrder::default(),
            endpoint: None,
            cot_endpoint: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Seeds sampling, head initialization, training order and random
    /// retrieval. `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lang")]
    pub lang: Lang,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub mining: MiningSection,
    /// Its `seed` is replaced by the global seed.
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub endpoints: BTreeMap<String, EndpointConfig>,
}

fn default_lang() -> Lang {
    Lang::En
}

impl Config {
    pub fn load(path: &Path, seed_override: Option<u64>) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {} (pass --config <path>)", path.display()))?;
        let mut cfg: Config =
            toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))?;
        if let Some(seed) = seed_override {
            cfg.seed = seed;
        }
        cfg.training.seed = cfg.seed;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
        cfg.resolve(&base);
        cfg.mining.weights.validate().context("mining.weights")?;
        cfg.retrieval.weights.validate().context("retrieval.weights")?;
        cfg.training.validate().context("training")?;
        for (name, e) in &cfg.endpoints {
            e.validate().with_context(|| format!("endpoints.{name}"))?;
        }
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.train,
            &mut p.test,
            &mut p.embeddings,
            &mut p.out,
            &mut p.finetuned_embeddings,
            &mut p.pairs,
            &mut p.head,
            &mut p.templates,
            &mut p.cot_cache,
            &mut p.response_cache,
            &mut p.reports,
        ] {
            if let Some(path) = slot.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
        if p.out.is_none() {
            p.out = Some(base.join("runs"));
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().expect("resolved on load")
    }

    pub fn require(&self, slot: &Option<PathBuf>, key: &str) -> anyhow::Result<PathBuf> {
        slot.clone().ok_or_else(|| anyhow!("config is missing paths.{key}"))
    }

    pub fn pairs_path(&self) -> PathBuf {
        self.paths.pairs.clone().unwrap_or_else(|| self.out_dir().join("pairs.jsonl"))
    }

    pub fn head_path(&self) -> PathBuf {
        self.paths.head.clone().unwrap_or_else(|| self.out_dir().join("head.jsonl"))
    }

    pub fn finetuned_path(&self) -> PathBuf {
        self.paths.finetuned_embeddings.clone().unwrap_or_else(|| self.out_dir().join("embeddings.ft.bin"))
    }

    pub fn cot_cache_path(&self) -> PathBuf {
        self.paths.cot_cache.clone().unwrap_or_else(|| self.out_dir().join("cache").join("cot"))
    }

    pub fn response_cache_path(&self) -> PathBuf {
        self.paths.response_cache.clone().unwrap_or_else(|| self.out_dir().join("cache").join("responses"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.paths.reports.clone().unwrap_or_else(|| self.out_dir().join("reports"))
    }

    pub fn endpoint(&self, name: Option<&str>) -> anyhow::Result<(String, EndpointConfig)> {
        match name {
            Some(n) => self
                .endpoints
                .get(n)
                .map(|e| (n.to_string(), e.clone()))
                .ok_or_else(|| anyhow!("no endpoint `{n}` in [endpoints]")),
            None if self.endpoints.len() == 1 => {
                let (n, e) = self.endpoints.iter().next().expect("one endpoint");
                Ok((n.clone(), e.clone()))
            }
            None if self.endpoints.is_empty() => bail!("config defines no [endpoints.<name>] section"),
            None => bail!("several endpoints are defined; set experiment.endpoint"),
        }
    }
}
