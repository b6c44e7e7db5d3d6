//! Multi-domain relation classification over the six-domain CrossRE 2.0
//! corpus, comparing domain-encoding strategies: dataset embeddings, special
//! domain markers and (fine/coarse) typed entity markers.
//!
//! The pipeline covers corpus loading and validation, marker-augmented input
//! encoding, an f64 transformer encoder with a pair-classification head,
//! multi-seed training with early stopping, per-domain macro-F1 evaluation,
//! and PCA-based representation analysis.

pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod synth;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
