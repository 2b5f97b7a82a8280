//! Demonstration selection: random, sentence-level KNN (`kate`),
//! entity-aware relation vectors (`ftrr`) and the weighted fine-tuned
//! score (`rar`).
//!
//! Every similarity strategy scans the whole pool, excludes the query's
//! own id, and orders by score descending then id ascending.

use std::cmp::Ordering;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::embedding::{cosine, Channel, EmbeddingStore, EmbeddingVector};
use crate::error::{EmbeddingError, RetrievalError};
use crate::weights::RetrievalWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Kate,
    Ftrr,
    Rar,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Random, Strategy::Kate, Strategy::Ftrr, Strategy::Rar];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Kate => "kate",
            Strategy::Ftrr => "ftrr",
            Strategy::Rar => "rar",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown strategy `{s}` (expected random, kate, ftrr or rar)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredDemo {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalResult {
    pub query: String,
    pub strategy: Strategy,
    pub k: usize,
    pub demos: Vec<ScoredDemo>,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<&str> {
        self.demos.iter().map(|d| d.id.as_str()).collect()
    }
}

/// Everything a query needs besides its own id.
#[derive(Debug, Clone, Copy)]
pub struct RetrievalContext<'a> {
    pub pool: &'a Corpus,
    pub store: &'a EmbeddingStore,
    pub weights: RetrievalWeights,
    pub k: usize,
    pub strategy: Strategy,
    pub seed: u64,
}

fn candidates<'a>(query_id: &str, pool: &'a Corpus, k: usize) -> Result<Vec<&'a str>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let ids: Vec<&str> = pool.iter().map(|i| i.id.as_str()).filter(|id| *id != query_id).collect();
    if k > ids.len() {
        return Err(RetrievalError::PoolTooSmall { k, pool: ids.len() });
    }
    Ok(ids)
}

/// Per-query seed for the random strategy, so distinct queries draw
/// independent samples from one run seed.
pub fn query_seed(run_seed: u64, query_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(query_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Seeded shuffle of the pool (minus the query), first `k` kept, scores 0.
pub fn retrieve_random(query_id: &str, pool: &Corpus, k: usize, seed: u64) -> Result<RetrievalResult, RetrievalError> {
    let mut ids = candidates(query_id, pool, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    Ok(RetrievalResult {
        query: query_id.to_string(),
        strategy: Strategy::Random,
        k,
        demos: ids.into_iter().take(k).map(|id| ScoredDemo { id: id.to_string(), score: 0.0 }).collect(),
    })
}

fn top_k(query_id: &str, strategy: Strategy, k: usize, mut scored: Vec<ScoredDemo>) -> RetrievalResult {
    scored.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then_with(|| a.id.cmp(&b.id)));
    scored.truncate(k);
    RetrievalResult { query: query_id.to_string(), strategy, k, demos: scored }
}

fn fetch<'s>(
    store: &'s EmbeddingStore,
    id: &str,
    channel: Channel,
    hint: &str,
) -> Result<&'s EmbeddingVector, RetrievalError> {
    store.get(id, channel).ok_or_else(|| {
        RetrievalError::Embedding(EmbeddingError::Missing {
            id: id.to_string(),
            channel: channel.to_string(),
            hint: hint.to_string(),
        })
    })
}

const KATE_HINT: &str = "import sentence vectors for every instance";
const FTRR_HINT: &str = "export pure_relation vectors (entity-marked encoder) and import them";
const RAR_HINT: &str = "run `head apply` to produce the ft_* channels first";

fn single_channel(
    query_id: &str,
    pool: &Corpus,
    store: &EmbeddingStore,
    k: usize,
    channel: Channel,
    strategy: Strategy,
    hint: &str,
) -> Result<RetrievalResult, RetrievalError> {
    let ids = candidates(query_id, pool, k)?;
    let q = fetch(store, query_id, channel, hint)?;
    let scored = ids
        .into_iter()
        .map(|id| {
            let v = fetch(store, id, channel, hint)?;
            Ok(ScoredDemo { id: id.to_string(), score: cosine(q.values(), v.values())? })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    Ok(top_k(query_id, strategy, k, scored))
}

/// Cosine over base sentence vectors.
pub fn retrieve_kate(
    query_id: &str,
    pool: &Corpus,
    store: &EmbeddingStore,
    k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    single_channel(query_id, pool, store, k, Channel::Sentence, Strategy::Kate, KATE_HINT)
}

/// Cosine over externally supplied entity-aware relation vectors.
pub fn retrieve_ftrr(
    query_id: &str,
    pool: &Corpus,
    store: &EmbeddingStore,
    k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    single_channel(query_id, pool, store, k, Channel::PureRelation, Strategy::Ftrr, FTRR_HINT)
}

/// Weighted cosine over the fine-tuned sentence and entity channels.
pub fn retrieve_rar(
    query_id: &str,
    pool: &Corpus,
    store: &EmbeddingStore,
    weights: &RetrievalWeights,
    k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    weights.validate()?;
    let ids = candidates(query_id, pool, k)?;
    let channels = [Channel::FtSentence, Channel::FtE1, Channel::FtE2];
    let q = channels.iter().map(|c| fetch(store, query_id, *c, RAR_HINT)).collect::<Result<Vec<_>, _>>()?;
    let scored = ids
        .into_iter()
        .map(|id| {
            let mut cos = [0.0; 3];
            for (slot, c) in channels.iter().enumerate() {
                cos[slot] = cosine(q[slot].values(), fetch(store, id, *c, RAR_HINT)?.values())?;
            }
            Ok(ScoredDemo { id: id.to_string(), score: weights.combine(cos[0], cos[1], cos[2]) })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    Ok(top_k(query_id, Strategy::Rar, k, scored))
}

/// Dispatches on `ctx.strategy`. The random strategy uses `ctx.seed`
/// unchanged.
pub fn retrieve(query_id: &str, ctx: &RetrievalContext<'_>) -> Result<RetrievalResult, RetrievalError> {
    match ctx.strategy {
        Strategy::Random => retrieve_random(query_id, ctx.pool, ctx.k, ctx.seed),
        Strategy::Kate => retrieve_kate(query_id, ctx.pool, ctx.store, ctx.k),
        Strategy::Ftrr => retrieve_ftrr(query_id, ctx.pool, ctx.store, ctx.k),
        Strategy::Rar => retrieve_rar(query_id, ctx.pool, ctx.store, &ctx.weights, ctx.k),
    }
}

/// Retrieves for every query in parallel; results keep query order. With
/// `per_query_seed`, the random strategy derives a seed per query id.
pub fn retrieve_batch(
    query_ids: &[&str],
    ctx: &RetrievalContext<'_>,
    per_query_seed: bool,
) -> Vec<Result<RetrievalResult, RetrievalError>> {
    query_ids
        .par_iter()
        .map(|id| {
            let mut local = *ctx;
            if per_query_seed {
                local.seed = query_seed(ctx.seed, id);
            }
            retrieve(id, &local)
        })
        .collect()
}

pub fn write_dump(results: &[RetrievalResult], path: &Path) -> Result<(), RetrievalError> {
    let err = |e: String| RetrievalError::Dump { path: path.to_path_buf(), message: e };
    let file = std::fs::File::create(path).map_err(|e| err(e.to_string()))?;
    let mut w = std::io::BufWriter::new(file);
    for r in results {
        let line = serde_json::to_string(r).map_err(|e| err(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| err(e.to_string()))?;
    }
    w.flush().map_err(|e| err(e.to_string()))
}

pub fn read_dump(path: &Path) -> Result<Vec<RetrievalResult>, RetrievalError> {
    let err = |e: String| RetrievalError::Dump { path: path.to_path_buf(), message: e };
    let file = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::Strategy;
    use super::*;
    use crate::corpus::{ConceptType, EntityMention, Lang, REInstance, Split};
    use crate::label::RelationLabel;
    use proptest::prelude::*;
    use rand::Rng;

    fn instance(id: &str) -> REInstance {
        let sentence = "Urinalysis was positive for protein.".to_string();
        REInstance {
            id: id.to_string(),
            lang: Lang::En,
            e1: EntityMention::locate(&sentence, "Urinalysis", ConceptType::Test).unwrap(),
            e2: EntityMention::locate(&sentence, "positive for protein", ConceptType::Problem).unwrap(),
            sentence,
            gold: RelationLabel::TeRP,
        }
    }

    fn pool(n: usize) -> Corpus {
        Corpus::from_instances(Split::Train, (0..n).map(|i| instance(&format!("p{i:03}"))).collect()).unwrap()
    }

    fn random_store(n: usize, dim: usize, seed: u64, channels: &[Channel]) -> EmbeddingStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = EmbeddingStore::new();
        let ids = (0..n).map(|i| format!("p{i:03}")).chain(std::iter::once("q".to_string()));
        for id in ids {
            for c in channels {
                let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                store.insert(id.clone(), *c, v.into()).unwrap();
            }
        }
        store
    }

    /// Exhaustive oracle: repeatedly pick the best remaining candidate.
    fn oracle(scores: &[(String, f64)], k: usize) -> Vec<String> {
        let mut left: Vec<(String, f64)> = scores.to_vec();
        let mut out = Vec::new();
        for _ in 0..k {
            let mut best = 0;
            for i in 1..left.len() {
                let (ref id, s) = left[i];
                let (ref bid, bs) = left[best];
                if s > bs || (s == bs && id < bid) {
                    best = i;
                }
            }
            out.push(left.remove(best).0);
        }
        out
    }

    #[test]
    fn random_whole_pool_and_determinism() {
        let p = pool(6);
        let a = retrieve_random("q", &p, 6, 3).unwrap();
        assert_eq!(a.demos.len(), 6);
        assert!(a.demos.iter().all(|d| d.score == 0.0));
        let mut sorted = a.ids();
        sorted.sort();
        assert_eq!(sorted, p.iter().map(|i| i.id.as_str()).collect::<Vec<_>>());
        assert_eq!(a, retrieve_random("q", &p, 6, 3).unwrap());
        assert!(matches!(retrieve_random("q", &p, 7, 3), Err(RetrievalError::PoolTooSmall { k: 7, pool: 6 })));
        assert!(matches!(retrieve_random("q", &p, 0, 3), Err(RetrievalError::ZeroK)));
    }

    #[test]
    fn random_inclusion_is_uniform() {
        let p = pool(20);
        let seeds = 4000;
        let mut counts = std::collections::HashMap::new();
        for seed in 0..seeds {
            for d in retrieve_random("q", &p, 5, seed).unwrap().demos {
                *counts.entry(d.id).or_insert(0usize) += 1;
            }
        }
        assert_eq!(counts.len(), 20);
        for (id, c) in counts {
            let freq = c as f64 / seeds as f64;
            assert!((freq - 0.25).abs() < 0.05, "{id}: {freq}");
        }
    }

    #[test]
    fn self_is_excluded() {
        let p = pool(5);
        let store = random_store(5, 4, 1, &[Channel::Sentence]);
        let r = retrieve_kate("p002", &p, &store, 4).unwrap();
        assert!(!r.ids().contains(&"p002"));
        assert!(matches!(retrieve_kate("p002", &p, &store, 5), Err(RetrievalError::PoolTooSmall { .. })));
        assert!(!retrieve_random("p002", &p, 4, 1).unwrap().ids().contains(&"p002"));
    }

    #[test]
    fn kate_duplicate_ranks_first() {
        let p = pool(10);
        let mut store = random_store(10, 6, 2, &[Channel::Sentence]);
        let dup = store.get("p007", Channel::Sentence).unwrap().clone();
        let mut fresh = EmbeddingStore::new();
        for (id, c, v) in store.records() {
            if id != "q" {
                fresh.insert(id, c, v.clone()).unwrap();
            }
        }
        fresh.insert("q", Channel::Sentence, dup).unwrap();
        store = fresh;
        let r = retrieve_kate("q", &p, &store, 3).unwrap();
        assert_eq!(r.demos[0].id, "p007");
        assert!((r.demos[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_pool_falls_back_to_id_order() {
        let p = pool(4);
        let mut store = EmbeddingStore::new();
        store.insert("q", Channel::PureRelation, vec![1.0, 0.0].into()).unwrap();
        for id in ["p003", "p001", "p000", "p002"] {
            store.insert(id, Channel::PureRelation, vec![0.0, 2.0].into()).unwrap();
        }
        let r = retrieve_ftrr("q", &p, &store, 4).unwrap();
        assert_eq!(r.ids(), vec!["p000", "p001", "p002", "p003"]);
        assert!(r.demos.iter().all(|d| d.score == 0.0));
    }

    #[test]
    fn matches_exhaustive_oracle() {
        let p = pool(100);
        let store = random_store(
            100,
            8,
            7,
            &[Channel::Sentence, Channel::PureRelation, Channel::FtSentence, Channel::FtE1, Channel::FtE2],
        );
        let w = RetrievalWeights::default();
        for k in [1, 5, 15, 99] {
            for (strategy, channel) in [(Strategy::Kate, Channel::Sentence), (Strategy::Ftrr, Channel::PureRelation)] {
                let scores: Vec<(String, f64)> =
                    p.iter().map(|i| (i.id.clone(), store.cosine("q", &i.id, channel).unwrap())).collect();
                let ctx = RetrievalContext { pool: &p, store: &store, weights: w, k, strategy, seed: 0 };
                assert_eq!(retrieve("q", &ctx).unwrap().ids(), oracle(&scores, k));
            }
            let scores: Vec<(String, f64)> = p
                .iter()
                .map(|i| {
                    let c = |ch| store.cosine("q", &i.id, ch).unwrap();
                    let s = 0.5 * c(Channel::FtSentence) + 0.5 * (0.5 * c(Channel::FtE1) + 0.5 * c(Channel::FtE2));
                    (i.id.clone(), s)
                })
                .collect();
            let r = retrieve_rar("q", &p, &store, &w, k).unwrap();
            assert_eq!(r.ids(), oracle(&scores, k));
            for pair in r.demos.windows(2) {
                assert!(pair[0].score >= pair[1].score);
            }
        }
    }

    #[test]
    fn ftrr_ignores_sentence_channel() {
        let p = pool(3);
        let mut store = EmbeddingStore::new();
        store.insert("q", Channel::Sentence, vec![1.0, 0.0].into()).unwrap();
        store.insert("q", Channel::PureRelation, vec![1.0, 0.0].into()).unwrap();
        let rows =
            [("p000", [1.0, 0.1], [0.0, 1.0]), ("p001", [0.5, 0.5], [0.7, 0.7]), ("p002", [0.0, 1.0], [1.0, 0.1])];
        for (id, s, r) in rows {
            store.insert(id, Channel::Sentence, s.to_vec().into()).unwrap();
            store.insert(id, Channel::PureRelation, r.to_vec().into()).unwrap();
        }
        assert_eq!(retrieve_kate("q", &p, &store, 3).unwrap().ids(), vec!["p000", "p001", "p002"]);
        assert_eq!(retrieve_ftrr("q", &p, &store, 3).unwrap().ids(), vec!["p002", "p001", "p000"]);
    }

    #[test]
    fn rar_component_arithmetic() {
        let p = pool(1);
        let mut store = EmbeddingStore::new();
        let half = [0.5f32, 0.75f32.sqrt()];
        store.insert("q", Channel::FtSentence, vec![1.0, 0.0].into()).unwrap();
        store.insert("q", Channel::FtE1, vec![1.0, 0.0].into()).unwrap();
        store.insert("q", Channel::FtE2, vec![1.0, 0.0].into()).unwrap();
        store.insert("p000", Channel::FtSentence, vec![3.0, 0.0].into()).unwrap();
        store.insert("p000", Channel::FtE1, half.to_vec().into()).unwrap();
        store.insert("p000", Channel::FtE2, half.to_vec().into()).unwrap();
        let r = retrieve_rar("q", &p, &store, &RetrievalWeights::default(), 1).unwrap();
        assert!((r.demos[0].score - 0.75).abs() < 1e-6);
    }

    #[test]
    fn identical_query_scores_one_under_rar() {
        let p = pool(20);
        let mut store = random_store(20, 5, 9, &[Channel::FtSentence, Channel::FtE1, Channel::FtE2]);
        let mut fresh = EmbeddingStore::new();
        for (id, c, v) in store.records() {
            if id != "q" {
                fresh.insert(id, c, v.clone()).unwrap();
            }
        }
        for c in [Channel::FtSentence, Channel::FtE1, Channel::FtE2] {
            fresh.insert("q", c, store.get("p011", c).unwrap().clone()).unwrap();
        }
        store = fresh;
        let r = retrieve_rar("q", &p, &store, &RetrievalWeights::default(), 2).unwrap();
        assert_eq!(r.demos[0].id, "p011");
        assert!((r.demos[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sentence_only_rar_matches_kate_on_ft_sentence() {
        let p = pool(40);
        let store = random_store(40, 6, 10, &[Channel::FtSentence, Channel::FtE1, Channel::FtE2]);
        let w = RetrievalWeights::new(1.0, 0.0, 0.3, 0.7).unwrap();
        let rar = retrieve_rar("q", &p, &store, &w, 10).unwrap();
        let kate = single_channel("q", &p, &store, 10, Channel::FtSentence, Strategy::Kate, "").unwrap();
        assert_eq!(rar.ids(), kate.ids());
    }

    #[test]
    fn missing_channels_carry_hints() {
        let p = pool(3);
        let store = random_store(3, 3, 1, &[Channel::Sentence]);
        let e = retrieve_ftrr("q", &p, &store, 1).unwrap_err().to_string();
        assert!(e.contains("pure_relation"), "{e}");
        let e = retrieve_rar("q", &p, &store, &RetrievalWeights::default(), 1).unwrap_err().to_string();
        assert!(e.contains("head apply"), "{e}");
    }

    #[test]
    fn batch_keeps_query_order_and_dump_round_trips() {
        let p = pool(30);
        let store = random_store(30, 4, 12, &[Channel::Sentence]);
        let queries: Vec<&str> = vec!["p010", "q", "p003", "p029"];
        for strategy in [Strategy::Kate, Strategy::Random] {
            let ctx = RetrievalContext {
                pool: &p,
                store: &store,
                weights: RetrievalWeights::default(),
                k: 5,
                strategy,
                seed: 42,
            };
            let out: Vec<RetrievalResult> =
                retrieve_batch(&queries, &ctx, true).into_iter().map(Result::unwrap).collect();
            assert_eq!(out.iter().map(|r| r.query.as_str()).collect::<Vec<_>>(), queries);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("dump.jsonl");
            write_dump(&out, &path).unwrap();
            assert_eq!(read_dump(&path).unwrap(), out);
        }
    }

    fn scaled(store: &EmbeddingStore, channel: Channel, c: f32) -> EmbeddingStore {
        let mut out = EmbeddingStore::new();
        for (id, ch, v) in store.records() {
            let v =
                if ch == channel { v.values().iter().map(|x| x * c).collect::<Vec<f32>>().into() } else { v.clone() };
            out.insert(id, ch, v).unwrap();
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn rankings_survive_uniform_scaling(seed in 0u64..1000, c in prop::sample::select(vec![0.5f32, 2.0, 4.0, 8.0])) {
            let p = pool(25);
            let store = random_store(25, 6, seed, &[Channel::Sentence]);
            let a = retrieve_kate("q", &p, &store, 7).unwrap();
            let b = retrieve_kate("q", &p, &scaled(&store, Channel::Sentence, c), 7).unwrap();
            prop_assert_eq!(a.ids(), b.ids());
            for (x, y) in a.demos.iter().zip(&b.demos) {
                prop_assert!((x.score - y.score).abs() < 1e-6);
            }
        }

        #[test]
        fn results_have_k_distinct_pool_ids(seed in 0u64..1000, k in 1usize..20) {
            let p = pool(20);
            let store = random_store(20, 4, seed, &[Channel::Sentence]);
            for strategy in [Strategy::Random, Strategy::Kate] {
                let ctx = RetrievalContext { pool: &p, store: &store, weights: RetrievalWeights::default(), k, strategy, seed };
                let r = retrieve("q", &ctx).unwrap();
                let mut ids = r.ids();
                prop_assert_eq!(ids.len(), k);
                ids.sort();
                ids.dedup();
                prop_assert_eq!(ids.len(), k);
                prop_assert!(ids.iter().all(|id| p.contains(id)));
            }
        }
    }
}
