//! Core data model and algorithms for relation-aware demonstration
//! retrieval: corpora, embedding stores, pair mining, the projection head
//! and its contrastive trainer.

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod label;
pub mod loss;
pub mod metrics;
pub mod mining;
pub mod parse;
pub mod projection;
pub mod prompt;
pub mod retrieval;
pub mod training;
pub mod weights;

pub use corpus::{parse_corpus, stratified_sample, ConceptType, Corpus, EntityMention, Lang, REInstance, Split};
pub use embedding::{cosine, load_store, write_store, Channel, EmbeddingStore, EmbeddingVector};
pub use label::RelationLabel;
pub use mining::{mine_pairs, ContrastivePair, Polarity};
pub use projection::{apply_head, HeadDims, ProjectionHead};
pub use training::{train, TrainConfig};
pub use weights::{MiningWeights, RetrievalWeights};
