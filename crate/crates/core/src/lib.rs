//! Evaluation harness for single-cell drug-response prediction.
//!
//! The crate covers the path from expression matrices to benchmark tables:
//! dataset ingestion and labeling ([`dataset`]), per-model input preparation
//! ([`tokens`]), the embedding exchange format and pooling ([`embedding`]),
//! a small deterministic transformer encoder standing in for pretrained
//! models ([`encoder`]), the MLP classifier head ([`head`]), low-rank
//! adaptation ([`lora`]), cross-validated evaluation and metrics ([`eval`]),
//! few-shot prompting of hosted language models ([`prompt`]) and run
//! orchestration, profiling and reporting ([`bench`]).

pub mod bench;
pub mod dataset;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod export;
pub mod head;
pub mod lora;
pub mod prompt;
pub mod rng;
pub mod tokens;

pub use error::{Error, Result};
