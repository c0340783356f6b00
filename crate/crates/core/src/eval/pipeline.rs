//! Plan, traverse, score and rerank one query.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::QueryRecord;
use crate::kb::{NodeIdx, Tgkb};
use crate::plan::{parse_plan, validate_outcome, LlmPlanner, PlanOutcome, PlanningGraph, TemplatePlanner, DEFAULT_MAX_PATH_LEN};
use crate::reranker::{extract_features, rerank, RerankCandidate, RerankerModel, TrainExample, TrajectoryFeatures};
use crate::scorer::{HashedEmbeddingScorer, ScorerConfig, TextScorer};
use crate::traversal::{mixed_traverse, FallbackReason, StepKind, Trajectory, TraversalConfig};

pub enum Planner {
    /// Uses the plan stored with each query.
    Gold,
    Template(TemplatePlanner),
    Llm(Box<LlmPlanner>),
}

impl Planner {
    pub fn plan(&self, query: &QueryRecord) -> PlanOutcome {
        match self {
            Planner::Gold => match &query.plan {
                Some(text) => parse_plan(text),
                None => PlanOutcome::invalid("missing gold plan"),
            },
            Planner::Template(t) => t.plan(&query.text),
            Planner::Llm(l) => l.plan(&query.text),
        }
    }
}

/// Text scorer for traversal and features plus the initial-ranking scorer.
pub struct Indexes {
    pub text: Box<dyn TextScorer>,
    pub semantic: HashedEmbeddingScorer,
}

impl Indexes {
    pub fn build(kb: &Tgkb, cfg: &ScorerConfig) -> Self {
        Self {
            text: cfg.build_text_scorer(kb),
            semantic: cfg.build_semantic_scorer(kb),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub node: NodeIdx,
    pub initial: f64,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone)]
pub struct CandidatePool {
    pub plan: PlanOutcome,
    pub fallback: Option<FallbackReason>,
    /// Best `rerank_pool` candidates by initial score, best first.
    pub entries: Vec<PoolEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitStep {
    pub id: String,
    pub category: String,
    pub kind: StepKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    /// Relevance probability when reranked, otherwise the initial score.
    pub score: f64,
    pub initial_score: f64,
    pub trajectory: Vec<HitStep>,
}

impl Hit {
    pub fn final_kind(&self) -> StepKind {
        self.trajectory.last().map_or(StepKind::Textual, |s| s.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan_error: Option<String>,
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<FallbackReason>,
    pub hits: Vec<Hit>,
}

impl Retrieval {
    pub fn ids(&self) -> Vec<String> {
        self.hits.iter().map(|h| h.id.clone()).collect()
    }
}

pub struct Pipeline<'a> {
    pub kb: &'a Tgkb,
    pub indexes: &'a Indexes,
    pub traversal: TraversalConfig,
    pub max_path_len: usize,
}

impl<'a> Pipeline<'a> {
    pub fn new(kb: &'a Tgkb, indexes: &'a Indexes, traversal: TraversalConfig) -> Self {
        Self {
            kb,
            indexes,
            traversal,
            max_path_len: DEFAULT_MAX_PATH_LEN,
        }
    }

    /// Validates the plan, traverses, and keeps the best candidates by initial score.
    pub fn candidates(&self, query: &str, plan: PlanOutcome) -> CandidatePool {
        let plan = validate_outcome(plan, self.kb, self.max_path_len);
        let outcome = mixed_traverse(self.kb, self.indexes.text.as_ref(), query, &plan, &self.traversal);
        let nodes: Vec<NodeIdx> = outcome.candidates.nodes().collect();
        let scores = self.indexes.semantic.score_many(query, &nodes);
        let mut entries: Vec<PoolEntry> = outcome
            .candidates
            .iter()
            .zip(scores)
            .map(|((node, traj), initial)| PoolEntry {
                node,
                initial,
                trajectory: traj.clone(),
            })
            .collect();
        entries.sort_by(|a, b| (b.initial + 0.0).total_cmp(&(a.initial + 0.0)).then(a.node.cmp(&b.node)));
        entries.truncate(self.traversal.rerank_pool);
        CandidatePool {
            plan,
            fallback: outcome.fallback,
            entries,
        }
    }

    pub fn features(&self, query: &str, pool: &CandidatePool) -> Vec<TrajectoryFeatures> {
        pool.entries
            .iter()
            .map(|e| extract_features(self.kb, &e.trajectory, pool.plan.plan(), query, self.indexes.text.as_ref(), e.initial))
            .collect()
    }

    fn hit(&self, e: &PoolEntry, score: f64) -> Hit {
        Hit {
            id: self.kb.id(e.node).to_string(),
            score,
            initial_score: e.initial,
            trajectory: e
                .trajectory
                .steps
                .iter()
                .map(|s| HitStep {
                    id: self.kb.id(s.node).to_string(),
                    category: self.kb.category_name(s.category).to_string(),
                    kind: s.kind,
                })
                .collect(),
        }
    }

    /// Full retrieval for one query: the top `k` hits, reranked when a model is given.
    pub fn retrieve(&self, query: &str, plan: PlanOutcome, model: Option<&RerankerModel>, k: usize) -> Retrieval {
        let pool = self.candidates(query, plan);
        let hits = match model {
            None => pool.entries.iter().take(k).map(|e| self.hit(e, e.initial)).collect(),
            Some(model) => {
                let items: Vec<RerankCandidate> = self
                    .features(query, &pool)
                    .into_iter()
                    .zip(&pool.entries)
                    .map(|(features, e)| RerankCandidate {
                        id: self.kb.id(e.node).to_string(),
                        features,
                        initial_score: e.initial,
                    })
                    .collect();
                let by_id = |id: &str| {
                    pool.entries
                        .iter()
                        .find(|e| self.kb.id(e.node) == id)
                        .expect("ranked ids come from the pool")
                };
                rerank(model, &items, k)
                    .into_iter()
                    .map(|r| self.hit(by_id(&r.id), r.p1))
                    .collect()
            }
        };
        Retrieval {
            query_id: None,
            plan: pool.plan.plan().map(crate::plan::serialize_plan),
            plan_error: pool.plan.reason().map(str::to_string),
            fallback: pool.fallback.is_some(),
            fallback_reason: pool.fallback,
            hits,
        }
    }

    /// Labeled trajectories for training: every answer in the pool plus up to
    /// `negatives_per_positive` times as many of the best-scored non-answers.
    pub fn training_examples(&self, planner: &Planner, queries: &[QueryRecord], negatives_per_positive: usize) -> Vec<TrainExample> {
        queries
            .par_iter()
            .map(|q| {
                let pool = self.candidates(&q.text, planner.plan(q));
                let features = self.features(&q.text, &pool);
                let labels: Vec<bool> = pool.entries.iter().map(|e| q.answers.contains(self.kb.id(e.node))).collect();
                let positives = labels.iter().filter(|l| **l).count();
                let mut negatives_left = positives * negatives_per_positive;
                let mut out = Vec::new();
                // Entries are sorted by initial score, so negatives come best first.
                for (x, y) in features.into_iter().zip(labels) {
                    if !y {
                        if negatives_left == 0 {
                            continue;
                        }
                        negatives_left -= 1;
                    }
                    out.push(TrainExample {
                        query_id: q.id.clone(),
                        features: x,
                        label: y,
                    });
                }
                out
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    }
}

/// Orders plan signatures for reporting; invalid plans sort last.
pub fn signature_of(plan: Option<&PlanningGraph>) -> String {
    plan.map_or_else(|| "invalid".to_string(), PlanningGraph::signature)
}
