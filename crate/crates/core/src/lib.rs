//! Two-stage natural-language search over GUI screenshot repositories.
//!
//! Stage one decomposes a requirement into positive and negative constraints
//! per search dimension and ranks every GUI by a weighted, normalized cosine
//! score over precomputed annotation embeddings. Stage two asks a
//! (multimodal) model to score the top-k candidates 0 to 100 per dimension,
//! from either the text annotations or the screenshots themselves.

pub mod annotator;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod eval;
pub mod gateway;
pub mod index;
pub mod rerank;
pub mod retrieval;
pub mod service;
