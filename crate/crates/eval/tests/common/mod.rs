//! Offline harness: synthetic fixtures, mock endpoints and the gold-echo
//! oracle. The oracle reads gold labels from the test corpus here, never
//! through production code.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rarex_core::corpus::{parse_corpus, Corpus, Lang, Split};
use rarex_core::embedding::{load_store, EmbeddingStore};
use rarex_core::mining::{mine_pairs, DEFAULT_PAIRS_PER_ANCHOR};
use rarex_core::projection::ProjectionHead;
use rarex_core::prompt::{CotCache, Templates};
use rarex_core::training::{train, TrainConfig};
use rarex_core::weights::MiningWeights;
use rarex_eval::ExperimentInputs;
use rarex_gateway::{
    chat_response, request_prompt, EndpointConfig, HttpResponse, LlmClient, MockTransport, Provider, ResponseCache,
};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("synthetic")
}

pub struct Fixture {
    pub train: Corpus,
    pub test: Corpus,
    pub store: EmbeddingStore,
    pub templates: Templates,
}

impl Fixture {
    /// Loads the checked-in synthetic corpus and embeddings.
    pub fn load() -> Self {
        let dir = fixture_dir();
        Fixture {
            train: parse_corpus(&dir.join("train.jsonl"), Lang::En, Split::Train).expect("train fixture"),
            test: parse_corpus(&dir.join("test.jsonl"), Lang::En, Split::Test).expect("test fixture"),
            store: load_store(&dir.join("embeddings.bin")).expect("embedding fixture"),
            templates: Templates::builtin_en(),
        }
    }

    pub fn inputs<'a>(&'a self, head: Option<&'a ProjectionHead>, cot: Option<&'a CotCache>) -> ExperimentInputs<'a> {
        ExperimentInputs {
            train: &self.train,
            test: &self.test,
            store: &self.store,
            head,
            templates: &self.templates,
            cot_cache: cot,
            cot_client: None,
        }
    }

    /// A head trained on pairs mined from the train split.
    pub fn trained_head(&self) -> ProjectionHead {
        let pairs =
            mine_pairs(&self.train, &self.store, &MiningWeights::default(), DEFAULT_PAIRS_PER_ANCHOR).expect("mining");
        train(7, &pairs, &self.store, &TrainConfig::default()).expect("training").head
    }

    pub fn pip_share(&self) -> f64 {
        let pip = self.test.label_histogram().get(&rarex_core::RelationLabel::PIP).copied().unwrap_or(0);
        pip as f64 / self.test.len() as f64
    }
}

/// The sentence of the final query block.
pub fn query_sentence(prompt: &str) -> Option<&str> {
    let start = prompt.rfind("Context: ")? + "Context: ".len();
    prompt[start..].lines().next()
}

/// Answers each query with its gold verbalization and anything else
/// (reasoning requests) with a fixed explanation.
pub fn gold_echo(test: &Corpus) -> MockTransport {
    let gold: HashMap<String, &'static str> =
        test.iter().map(|i| (i.sentence.clone(), i.gold.verbalization())).collect();
    MockTransport::new(move |req, _| {
        let prompt = request_prompt(req).unwrap_or_default();
        let reply = if prompt.trim_end().ends_with("Response:") {
            query_sentence(&prompt).and_then(|s| gold.get(s)).copied().unwrap_or("no idea")
        } else {
            "The entities are linked by the stated relation."
        };
        Ok(HttpResponse::new(200, chat_response(reply)))
    })
}

pub fn endpoint() -> EndpointConfig {
    EndpointConfig {
        provider: Provider::Mock,
        model_name: "mock-model".into(),
        max_concurrency: 4,
        backoff_base_ms: 1,
        backoff_max_ms: 2,
        ..Default::default()
    }
}

pub fn client(transport: &MockTransport, cache_dir: Option<&Path>) -> LlmClient {
    let c = LlmClient::with_transport(endpoint(), Arc::new(transport.clone()))
        .expect("valid endpoint")
        .with_sleeper(|_| {});
    match cache_dir {
        Some(d) => c.with_cache(ResponseCache::new(d)),
        None => c,
    }
}
