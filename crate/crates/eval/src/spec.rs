//! What an experiment is: strategy, CoT style, shot count and seeds.
//! File locations and endpoints live with the caller.

use rarex_core::corpus::Lang;
use rarex_core::prompt::{CoTStyle, DemoOrder};
use rarex_core::retrieval::Strategy;
use rarex_core::weights::RetrievalWeights;
use serde::{Deserialize, Serialize};

use crate::error::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub lang: Lang,
    /// `None` only for zero-shot styles.
    #[serde(default)]
    pub strategy: Option<Strategy>,
    pub style: CoTStyle,
    /// Demonstrations per query; zero for zero-shot styles.
    #[serde(default)]
    pub shots: usize,
    #[serde(default)]
    pub weights: RetrievalWeights,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub demo_order: DemoOrder,
}

impl ExperimentSpec {
    pub fn few_shot(name: impl Into<String>, lang: Lang, strategy: Strategy, style: CoTStyle, shots: usize) -> Self {
        ExperimentSpec {
            name: name.into(),
            lang,
            strategy: Some(strategy),
            style,
            shots,
            weights: RetrievalWeights::default(),
            seed: 0,
            demo_order: DemoOrder::default(),
        }
    }

    pub fn zero_shot(name: impl Into<String>, lang: Lang) -> Self {
        ExperimentSpec {
            name: name.into(),
            lang,
            strategy: None,
            style: CoTStyle::StaticZeroShot,
            shots: 0,
            weights: RetrievalWeights::default(),
            seed: 0,
            demo_order: DemoOrder::default(),
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.name.trim().is_empty() {
            return Err(EvalError::Spec("experiment name is empty".into()));
        }
        self.weights.validate()?;
        match (self.style, self.strategy) {
            (CoTStyle::StaticZeroShot, Some(s)) => {
                Err(EvalError::Spec(format!("style static_zero_shot takes no demonstrations; remove strategy `{s}`")))
            }
            (CoTStyle::StaticZeroShot, None) if self.shots != 0 => {
                Err(EvalError::Spec("style static_zero_shot requires shots = 0".into()))
            }
            (CoTStyle::StaticZeroShot, None) => Ok(()),
            (style, None) => Err(EvalError::Spec(format!(
                "style {style} needs demonstrations; set strategy to random, kate, ftrr or rar"
            ))),
            (style, Some(_)) if self.shots == 0 => Err(EvalError::Spec(format!("style {style} needs shots >= 1"))),
            _ => Ok(()),
        }
    }

    /// Whether the random strategy draws a fresh sample per query. The
    /// static few-shot design shows every query the same demonstrations.
    pub fn per_query_seed(&self) -> bool {
        self.style != CoTStyle::StaticFewShot
    }
}
