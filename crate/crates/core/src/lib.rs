//! Core algorithms for a two-stage text-embedding training pipeline.
//!
//! The crate covers the full desk-scale training stack for a dual-encoder
//! retriever and a cross-encoder reranker:
//!
//! - [`corpus`]: Unicode normalization, sentence handling, augmentation,
//!   pseudo-positive extraction, and dataset filters.
//! - [`lexical`]: character-bigram/word tokenization, inverted index, BM25
//!   scoring, and top-k lexical search.
//! - [`mining`]: reciprocal rank fusion of lexical and dense rankings plus
//!   rank-window hard-negative selection.
//! - [`embedder`]: a trainable dual-encoder (embedding table, mean pooling,
//!   unit norm) with role prefixes, the improved contrastive loss, analytic
//!   gradients, and a deterministic training loop.
//! - [`batching`]: task-homogeneous batch assembly with in-batch dedup.
//! - [`reranker`]: a feature-based cross-encoder scorer with listwise
//!   cross-entropy training in two stages.
//! - [`distill`]: reranker-to-embedder score distillation with min-max
//!   normalization and the decoupled loss dispatch.
//! - [`metrics`]: nDCG@k, MAP@k, Recall@k and run evaluation.
//!
//! The crate is `no_std`-compatible (`alloc` required); disable the default
//! `std` feature for embedded use. All float math goes through [`libm`] so
//! results are identical in both configurations. Everything is deterministic
//! for a fixed seed: shuffles use ChaCha8, collections iterate in sorted
//! order, and training applies gradients serially.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod batching;
pub mod corpus;
pub mod distill;
pub mod embedder;
pub mod lexical;
pub mod metrics;
pub mod mining;
pub mod reranker;

mod math;

pub use batching::Batch;
pub use corpus::{FilterConfig, TextRecord, TrainTriplet};
pub use embedder::{EmbedderParams, TrainingConfig};
pub use lexical::{Bm25Params, InvertedIndex};
pub use metrics::{Metric, QRels};
pub use mining::{MiningConfig, RankedList};
pub use reranker::{RerankerParams, StageConfig};
