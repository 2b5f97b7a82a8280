//! Temperature-scaled contrastive loss over (anchor, positive, negative)
//! triples with exact gradients for every head parameter.
//!
//! For triple `i` with projected vectors `f(a_i)`, `f(p_i)` and negatives
//! `f(n_j)`:
//!
//! ```text
//! ℓ_i = -log( exp(s⁺_i/τ) / (exp(s⁺_i/τ) + Σ_j exp(s⁻_ij/τ)) )
//! ```
//!
//! where `s` is cosine similarity and `j` ranges over every negative in the
//! batch ([`NegativeMode::InBatch`]) or only the triple's own negative
//! ([`NegativeMode::Paired`]). The batch loss is the mean of `ℓ_i`.

use serde::{Deserialize, Serialize};

use crate::error::{EmbeddingError, TrainError};
use crate::projection::{ForwardTrace, ProjectionHead};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    #[default]
    InBatch,
    Paired,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// `-log softmax_0` over `[s⁺, s⁻_1, …]/τ`, computed with a max shift.
pub fn contrastive_term(positive: f64, negatives: &[f64], temperature: f64) -> f64 {
    let logits: Vec<f64> =
        std::iter::once(positive).chain(negatives.iter().copied()).map(|s| s / temperature).collect();
    neg_log_softmax_first(&logits).0
}

/// Returns `-log softmax(l)_0` and the softmax probabilities.
fn neg_log_softmax_first(logits: &[f64]) -> (f64, Vec<f64>) {
    let (argmax, max) =
        logits
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, l)| if l > best.1 { (i, l) } else { best });
    let shifted: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    // The argmax term is exactly 1; summing the rest separately keeps
    // precision when they are tiny.
    let rest: f64 = shifted.iter().enumerate().filter(|(i, _)| *i != argmax).map(|(_, e)| e).sum();
    let total = 1.0 + rest;
    // `max - l0` is exactly zero when the positive dominates, so the result
    // keeps full precision even at extreme separations.
    ((max - logits[0]) + rest.ln_1p(), shifted.iter().map(|e| e / total).collect())
}

/// Cosine plus its gradients with respect to both arguments.
fn cosine_with_grad(u: &[f64], v: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), EmbeddingError> {
    let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let c = dot / (nu * nv);
    let inv = 1.0 / (nu * nv);
    let du = u.iter().zip(v).map(|(a, b)| b * inv - c * a / (nu * nu)).collect();
    let dv = u.iter().zip(v).map(|(a, b)| a * inv - c * b / (nv * nv)).collect();
    Ok((c, du, dv))
}

fn add_scaled(target: &mut [f64], source: &[f64], scale: f64) {
    for (t, s) in target.iter_mut().zip(source) {
        *t += scale * s;
    }
}

struct Projected {
    input: Vec<f64>,
    trace: ForwardTrace,
    d_output: Vec<f64>,
}

impl Projected {
    fn new(head: &ProjectionHead, input: &[f64]) -> Result<Self, TrainError> {
        let trace = head.forward_trace(input)?;
        let d_output = vec![0.0; trace.output.len()];
        Ok(Projected { input: input.to_vec(), trace, d_output })
    }
}

/// Mean contrastive loss over `batch`, optionally with its gradient.
pub fn batch_loss_with(
    head: &ProjectionHead,
    batch: &[Triplet],
    temperature: f64,
    mode: NegativeMode,
    with_grad: bool,
) -> Result<LossAndGrad, TrainError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(TrainError::BadTemperature(temperature));
    }
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let project = |xs: Vec<&Vec<f64>>| -> Result<Vec<Projected>, TrainError> {
        xs.into_iter().map(|x| Projected::new(head, x)).collect()
    };
    let mut anchors = project(batch.iter().map(|t| &t.anchor).collect())?;
    let mut positives = project(batch.iter().map(|t| &t.positive).collect())?;
    let mut negatives = project(batch.iter().map(|t| &t.negative).collect())?;

    let n = batch.len() as f64;
    let mut total = 0.0;
    for i in 0..batch.len() {
        let neg_range = match mode {
            NegativeMode::InBatch => 0..batch.len(),
            NegativeMode::Paired => i..i + 1,
        };
        let (s_pos, da_pos, dp) = cosine_with_grad(&anchors[i].trace.output, &positives[i].trace.output)?;
        let mut logits = vec![s_pos / temperature];
        let mut neg_grads = Vec::with_capacity(neg_range.len());
        for j in neg_range.clone() {
            let (s, da, dn) = cosine_with_grad(&anchors[i].trace.output, &negatives[j].trace.output)?;
            logits.push(s / temperature);
            neg_grads.push((j, da, dn));
        }
        let (term, probs) = neg_log_softmax_first(&logits);
        if !term.is_finite() {
            return Err(TrainError::NonFinite);
        }
        total += term;
        if with_grad {
            // ∂ℓ/∂s⁺ = (p0 - 1)/τ, ∂ℓ/∂s⁻_j = p_j/τ, then mean over the batch.
            let g_pos = (probs[0] - 1.0) / (temperature * n);
            add_scaled(&mut anchors[i].d_output, &da_pos, g_pos);
            add_scaled(&mut positives[i].d_output, &dp, g_pos);
            for (slot, (j, da, dn)) in neg_grads.iter().enumerate() {
                let g = probs[slot + 1] / (temperature * n);
                add_scaled(&mut anchors[i].d_output, da, g);
                add_scaled(&mut negatives[*j].d_output, dn, g);
            }
        }
    }

    let mut grad = Vec::new();
    if with_grad {
        grad = vec![0.0; head.params().len()];
        for p in anchors.iter().chain(&positives).chain(&negatives) {
            head.backward(&p.input, &p.trace, &p.d_output, &mut grad);
        }
    }
    Ok(LossAndGrad { loss: total / n, grad })
}

/// Mean loss and full parameter gradient.
pub fn batch_loss(
    head: &ProjectionHead,
    batch: &[Triplet],
    temperature: f64,
    mode: NegativeMode,
) -> Result<LossAndGrad, TrainError> {
    batch_loss_with(head, batch, temperature, mode, true)
}
