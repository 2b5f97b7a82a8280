//! Contrastive fine-tuning of the projection head over mined pairs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Channel, EmbeddingStore};
use crate::error::{EmbeddingError, TrainError};
use crate::loss::{batch_loss_with, NegativeMode, Triplet};
use crate::mining::{ContrastivePair, Polarity};
use crate::projection::{HeadDims, ProjectionHead};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub temperature: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub negatives: NegativeMode,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            temperature: 0.05,
            learning_rate: 3e-5,
            epochs: 3,
            batch_size: 16,
            seed: 0,
            negatives: NegativeMode::InBatch,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(TrainError::BadTemperature(self.temperature));
        }
        if self.batch_size == 0 {
            return Err(TrainError::ZeroBatch);
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n: usize) -> Self {
        Adam { cfg, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.cfg.beta1.powi(self.t);
        let c2 = 1.0 - self.cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.cfg.beta1 * self.m[i] + (1.0 - self.cfg.beta1) * grad[i];
            self.v[i] = self.cfg.beta2 * self.v[i] + (1.0 - self.cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
        }
    }
}

/// Id-level triple: each anchor's rank-i positive zipped with its rank-i
/// negative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletIds {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
}

pub fn build_triplets(pairs: &[ContrastivePair]) -> Vec<TripletIds> {
    let mut order: Vec<&str> = Vec::new();
    let mut grouped: BTreeMap<&str, (Vec<&str>, Vec<&str>)> = BTreeMap::new();
    for p in pairs {
        let entry = grouped.entry(p.anchor_id.as_str()).or_insert_with(|| {
            order.push(p.anchor_id.as_str());
            (Vec::new(), Vec::new())
        });
        match p.polarity {
            Polarity::Positive => entry.0.push(&p.partner_id),
            Polarity::Negative => entry.1.push(&p.partner_id),
        }
    }
    let mut out = Vec::new();
    for anchor in order {
        let (pos, neg) = &grouped[anchor];
        for (p, n) in pos.iter().zip(neg) {
            out.push(TripletIds { anchor: anchor.to_string(), positive: p.to_string(), negative: n.to_string() });
        }
    }
    out
}

fn sentence_vector(store: &EmbeddingStore, id: &str) -> Result<Vec<f64>, TrainError> {
    store.get(id, Channel::Sentence).map(|v| v.to_f64()).ok_or_else(|| {
        TrainError::Embedding(EmbeddingError::Missing {
            id: id.to_string(),
            channel: Channel::Sentence.to_string(),
            hint: "every paired instance needs a sentence vector".into(),
        })
    })
}

pub fn resolve_triplets(ids: &[TripletIds], store: &EmbeddingStore) -> Result<Vec<Triplet>, TrainError> {
    ids.iter()
        .map(|t| {
            Ok(Triplet {
                anchor: sentence_vector(store, &t.anchor)?,
                positive: sentence_vector(store, &t.positive)?,
                negative: sentence_vector(store, &t.negative)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: ProjectionHead,
    /// Loss of the freshly initialized head.
    pub initial_loss: f64,
    /// Loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mean loss over all triples, batched in their canonical order.
pub fn dataset_loss(head: &ProjectionHead, triplets: &[Triplet], cfg: &TrainConfig) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for chunk in triplets.chunks(cfg.batch_size) {
        total += batch_loss_with(head, chunk, cfg.temperature, cfg.negatives, false)?.loss * chunk.len() as f64;
    }
    Ok(total / triplets.len() as f64)
}

pub fn train(
    head_init_seed: u64,
    pairs: &[ContrastivePair],
    store: &EmbeddingStore,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let ids = build_triplets(pairs);
    if ids.is_empty() {
        return Err(TrainError::NoPairs);
    }
    let triplets = resolve_triplets(&ids, store)?;
    let dim = triplets[0].anchor.len();
    let mut head = ProjectionHead::init(HeadDims::square(dim), head_init_seed);
    train_head(&mut head, &triplets, cfg).map(|(initial_loss, epoch_losses)| TrainOutcome {
        head,
        initial_loss,
        epoch_losses,
    })
}

/// Trains `head` in place; returns the initial loss and per-epoch losses.
pub fn train_head(
    head: &mut ProjectionHead,
    triplets: &[Triplet],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>), TrainError> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(TrainError::NoPairs);
    }
    let initial_loss = dataset_loss(head, triplets, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam, head.params().len());
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Triplet> = chunk.iter().map(|&i| triplets[i].clone()).collect();
            let diverged = TrainError::Diverged { epoch: epoch + 1, batch: b + 1 };
            let out = match batch_loss_with(head, &batch, cfg.temperature, cfg.negatives, true) {
                Ok(out) => out,
                Err(TrainError::NonFinite) => return Err(diverged),
                Err(e) => return Err(e),
            };
            if !out.loss.is_finite() || out.grad.iter().any(|g| !g.is_finite()) {
                return Err(diverged);
            }
            adam.step(head.params_mut(), &out.grad, cfg.learning_rate);
            if head.params().iter().any(|p| !p.is_finite()) {
                return Err(diverged);
            }
        }
        losses.push(dataset_loss(head, triplets, cfg)?);
    }
    Ok((initial_loss, losses))
}
