//! Retrieval-augmented ASR post-processing engine.
//!
//! The crate is organized around five subsystems:
//!
//! - [`retriever`]: a dual-tower cross-modal embedding model (speech tower:
//!   convolutions + MLP + attention pooling; text tower: hashed n-gram
//!   features + projection) trained with a contrastive objective.
//! - [`index`]: a vector store over keyword embeddings with exact and
//!   IVF-style approximate cosine search, persisted to a checksummed binary
//!   format.
//! - [`fusion`]: multi-stream hypothesis alignment with weighted slot voting
//!   and retrieval-driven keyword correction.
//! - [`eval`]: WER/CER scoring, a semantic-consistency metric over sentence
//!   embeddings, and corpus-level reporting.
//! - [`pipeline`]: streaming orchestration of partial hypotheses, per-partial
//!   retrieval, fusion, and finalization with an optional external
//!   correction service.

pub mod error;
pub mod eval;
pub mod fusion;
pub mod index;
pub mod linalg;
pub mod pipeline;
pub mod retriever;
pub mod rng;

pub use error::{Error, Result};
