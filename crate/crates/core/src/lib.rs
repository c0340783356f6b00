//! Hybrid structural and textual retrieval over text-rich graph knowledge bases.

pub mod cli;
pub mod config;
pub mod eval;
pub mod fixtures;
pub mod kb;
pub mod plan;
pub mod reranker;
pub mod scorer;
pub mod traversal;
