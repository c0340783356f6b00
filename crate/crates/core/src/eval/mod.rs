//! Metrics, the retrieval pipeline, ablations and the synthetic benchmark.

mod metrics;
mod pipeline;
mod report;
pub mod synth;

use thiserror::Error;

pub use metrics::{hit_at_k, mrr, read_queries, recall_at_k, write_queries, QueryRecord};
pub use pipeline::{signature_of, CandidatePool, Hit, HitStep, Indexes, Pipeline, Planner, PoolEntry, Retrieval};
pub use report::{
    evaluate, evaluate_detailed, ratio_analysis, train_reranker, AblationRun, Metrics, MetricsReport, PatternMetrics,
    QueryMetrics, RatioInput, RatioReport, Ranker, RerankSettings, Variant, RECALL_DEPTH,
};
pub use synth::{synth_generate, CategorySpec, EdgeSpec, SynthConfig, SynthDataset};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("queries line {line}: {message}")]
    Queries { line: usize, message: String },
    #[error("synthetic config: {0}")]
    Synth(String),
    #[error(transparent)]
    Kb(#[from] crate::kb::KbError),
    #[error(transparent)]
    Reranker(#[from] crate::reranker::RerankerError),
}
