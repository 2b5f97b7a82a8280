//! Weighted train-time similarity and contrastive pair mining.

use std::cmp::Ordering;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, REInstance};
use crate::embedding::{relation_key, Channel, EmbeddingStore};
use crate::error::MiningError;
use crate::weights::MiningWeights;

pub const DEFAULT_PAIRS_PER_ANCHOR: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastivePair {
    #[serde(rename = "anchor")]
    pub anchor_id: String,
    #[serde(rename = "partner")]
    pub partner_id: String,
    pub polarity: Polarity,
    pub score: f64,
}

/// `α1·cos(s) + α2·(β1·cos(e1) + β2·cos(e2)) + α3·cos(r)` over the base
/// channels, where `r` is looked up by each instance's gold label.
pub fn train_similarity(
    a: &REInstance,
    b: &REInstance,
    store: &EmbeddingStore,
    w: &MiningWeights,
) -> Result<f64, MiningError> {
    let sentence = store.cosine(&a.id, &b.id, Channel::Sentence)?;
    let e1 = store.cosine(&a.id, &b.id, Channel::E1)?;
    let e2 = store.cosine(&a.id, &b.id, Channel::E2)?;
    let relation = store.cosine(&relation_key(a.gold), &relation_key(b.gold), Channel::Relation)?;
    Ok(w.combine(sentence, e1, e2, relation))
}

fn by_score_desc_then_id(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

fn by_score_asc_then_id(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

/// For each anchor, the `k` highest-scoring other instances become positives
/// and, from the remainder, the `k` lowest-scoring become negatives. Ties
/// break by ascending id. Output is ordered by (anchor id, polarity, rank).
pub fn mine_pairs(
    corpus: &Corpus,
    store: &EmbeddingStore,
    w: &MiningWeights,
    k: usize,
) -> Result<Vec<ContrastivePair>, MiningError> {
    if k == 0 {
        return Err(MiningError::ZeroK);
    }
    let needed = 2 * k + 1;
    if corpus.len() < needed {
        return Err(MiningError::CorpusTooSmall { size: corpus.len(), k, needed });
    }
    let mut anchors: Vec<&REInstance> = corpus.iter().collect();
    anchors.sort_by(|a, b| a.id.cmp(&b.id));

    let per_anchor: Vec<Vec<ContrastivePair>> = anchors
        .par_iter()
        .map(|anchor| {
            let mut scored = Vec::with_capacity(anchors.len() - 1);
            for other in &anchors {
                if other.id == anchor.id {
                    continue;
                }
                scored.push((train_similarity(anchor, other, store, w)?, other.id.as_str()));
            }
            scored.sort_by(by_score_desc_then_id);
            let (top, rest) = scored.split_at_mut(k);
            rest.sort_by(by_score_asc_then_id);
            let pair = |&(score, partner): &(f64, &str), polarity| ContrastivePair {
                anchor_id: anchor.id.clone(),
                partner_id: partner.to_string(),
                polarity,
                score,
            };
            let mut pairs: Vec<ContrastivePair> = top.iter().map(|p| pair(p, Polarity::Positive)).collect();
            pairs.extend(rest[..k].iter().map(|p| pair(p, Polarity::Negative)));
            Ok(pairs)
        })
        .collect::<Result<_, MiningError>>()?;
    Ok(per_anchor.into_iter().flatten().collect())
}

pub fn write_pairs(pairs: &[ContrastivePair], path: &Path) -> Result<(), MiningError> {
    let err = |message: String| MiningError::PairFile { path: path.to_path_buf(), message };
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).map_err(|e| err(e.to_string()))?);
        out.push('\n');
    }
    std::fs::File::create(path).and_then(|mut f| f.write_all(out.as_bytes())).map_err(|e| err(e.to_string()))
}

pub fn read_pairs(path: &Path) -> Result<Vec<ContrastivePair>, MiningError> {
    let err = |message: String| MiningError::PairFile { path: path.to_path_buf(), message };
    let file = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
    let mut pairs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: ContrastivePair = serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", n + 1)))?;
        if pair.anchor_id == pair.partner_id {
            return Err(err(format!("line {}: anchor paired with itself", n + 1)));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}
