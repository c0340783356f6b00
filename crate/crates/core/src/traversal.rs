//! Mixed structural/textual traversal along the paths of a planning graph.
//!
//! Each reasoning path is walked layer by layer. Layer one is seeded by
//! textual matching against the first node's restriction. Every later layer
//! is the union of
//!
//! * structural expansion: neighbors of the previous layer whose category
//!   matches the path node, and
//! * textual matching: the top `t` nodes of that category for the query
//!   joined with the node's restriction.
//!
//! The last layers of all paths are intersected. Every candidate carries the
//! trajectory that reached it; when a node is reached more than once the
//! most informative trajectory is kept (longest, then most structural
//! steps, then smallest node-id sequence).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kb::{CategoryIdx, NodeIdx, Tgkb};
use crate::plan::{PlanOutcome, PlanningGraph, ReasoningPath};
use crate::scorer::{expand_query, score_pool, tokenize, TextScorer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraversalConfig {
    /// Seeds taken by textual matching at layer one.
    pub n_seeds: usize,
    /// Textual matches added at each later layer; 0 disables textual augmentation.
    pub per_layer_text: usize,
    /// Candidates returned by the plan-free fallback.
    pub fallback_k: usize,
    /// Candidates kept for reranking, by initial score.
    pub rerank_pool: usize,
    /// Whether layers expand along edges at all.
    pub structural: bool,
    /// Exhaustive mode: seed with every node whose document contains all
    /// restriction tokens and drop restricted-layer nodes that do not.
    pub restriction_filter: bool,
}

impl Default for TraversalConfig {
    fn default() -> Self {
        Self {
            n_seeds: 5,
            per_layer_text: 10,
            fallback_k: 20,
            rerank_pool: 100,
            structural: true,
            restriction_filter: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Seed,
    Structural,
    Textual,
}

impl StepKind {
    /// Seeds come from textual matching.
    pub fn is_textual(self) -> bool {
        !matches!(self, StepKind::Structural)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrajectoryStep {
    pub node: NodeIdx,
    pub category: CategoryIdx,
    pub kind: StepKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    /// Which plan path produced this trajectory (0 for fallback retrieval).
    pub path_index: usize,
    /// Index of the path node matched by `steps[0]`.
    pub start_layer: usize,
}

impl Trajectory {
    fn single(kb: &Tgkb, node: NodeIdx, kind: StepKind, path_index: usize, layer: usize) -> Self {
        Self {
            steps: vec![TrajectoryStep {
                node,
                category: kb.category_of(node),
                kind,
            }],
            path_index,
            start_layer: layer,
        }
    }

    fn extended(&self, kb: &Tgkb, node: NodeIdx) -> Self {
        let mut steps = self.steps.clone();
        steps.push(TrajectoryStep {
            node,
            category: kb.category_of(node),
            kind: StepKind::Structural,
        });
        Self {
            steps,
            path_index: self.path_index,
            start_layer: self.start_layer,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> &TrajectoryStep {
        self.steps.last().expect("trajectories are non-empty")
    }

    /// Path-node index for each step.
    pub fn layers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.steps.len()).map(move |i| self.start_layer + i)
    }

    pub fn structural_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.kind == StepKind::Structural).count()
    }
}

/// Retention order: the preferred trajectory compares as `Less`.
pub fn informativeness(a: &Trajectory, b: &Trajectory) -> Ordering {
    b.len()
        .cmp(&a.len())
        .then_with(|| b.structural_steps().cmp(&a.structural_steps()))
        .then_with(|| a.steps.iter().map(|s| s.node).cmp(b.steps.iter().map(|s| s.node)))
        .then_with(|| a.path_index.cmp(&b.path_index))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidateSet {
    candidates: BTreeMap<NodeIdx, Trajectory>,
}

impl CandidateSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn contains(&self, v: NodeIdx) -> bool {
        self.candidates.contains_key(&v)
    }

    pub fn get(&self, v: NodeIdx) -> Option<&Trajectory> {
        self.candidates.get(&v)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeIdx> + '_ {
        self.candidates.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeIdx, &Trajectory)> {
        self.candidates.iter().map(|(v, t)| (*v, t))
    }

    /// Inserts, keeping the more informative trajectory on collision.
    pub fn offer(&mut self, v: NodeIdx, traj: Trajectory) {
        debug_assert_eq!(traj.last().node, v);
        match self.candidates.get_mut(&v) {
            Some(existing) => {
                if informativeness(&traj, existing) == Ordering::Less {
                    *existing = traj;
                }
            }
            None => {
                self.candidates.insert(v, traj);
            }
        }
    }

    pub fn merge(&mut self, other: CandidateSet) {
        for (v, t) in other.candidates {
            self.offer(v, t);
        }
    }

    fn retain(&mut self, mut keep: impl FnMut(NodeIdx) -> bool) {
        self.candidates.retain(|v, _| keep(*v));
    }

    pub fn id_set(&self, kb: &Tgkb) -> BTreeSet<String> {
        self.nodes().map(|v| kb.id(v).to_string()).collect()
    }
}

/// Neighbors of category `c` of every node in `prev`. A child reached from
/// several parents extends the trajectory of the smallest parent.
pub fn expand_structural(kb: &Tgkb, prev: &CandidateSet, c: CategoryIdx) -> CandidateSet {
    let mut out = CandidateSet::new();
    for (parent, traj) in prev.iter() {
        for &child in kb.neighbors_in(parent, c) {
            if !out.contains(child) {
                out.candidates.insert(child, traj.extended(kb, child));
            }
        }
    }
    out
}

/// Top-`t` nodes of category `c` for the query joined with `restriction`.
/// Only positively scored nodes count as textual matches.
#[allow(clippy::too_many_arguments)]
pub fn expand_textual(
    kb: &Tgkb,
    scorer: &dyn TextScorer,
    query: &str,
    restriction: Option<&str>,
    c: CategoryIdx,
    t: usize,
    kind: StepKind,
    path_index: usize,
    layer: usize,
) -> CandidateSet {
    let expanded = expand_query(query, restriction);
    let mut out = CandidateSet::new();
    for s in score_pool(scorer, &expanded, kb.members(c), t) {
        if s.score > 0.0 {
            out.offer(s.node, Trajectory::single(kb, s.node, kind, path_index, layer));
        }
    }
    out
}

/// Per-layer counts, one record per (path, layer).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub path_index: usize,
    pub layer: usize,
    pub struct_count: usize,
    pub text_count: usize,
    pub union_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub candidates: CandidateSet,
    pub trace: Vec<LayerTrace>,
}

struct RestrictionFilter {
    tokens: Vec<String>,
}

impl RestrictionFilter {
    fn new(restriction: Option<&str>) -> Option<Self> {
        restriction.map(|r| Self { tokens: tokenize(r) })
    }

    fn accepts(&self, kb: &Tgkb, v: NodeIdx) -> bool {
        let doc: HashSet<String> = tokenize(kb.document(v)).into_iter().collect();
        self.tokens.iter().all(|t| doc.contains(t))
    }
}

/// Walks one reasoning path and returns its final layer.
pub fn traverse_path(
    kb: &Tgkb,
    scorer: &dyn TextScorer,
    query: &str,
    path: &ReasoningPath,
    path_index: usize,
    cfg: &TraversalConfig,
) -> PathResult {
    let mut trace = Vec::with_capacity(path.len());
    let first = &path.nodes()[0];
    let mut layer = match kb.category_idx(first.category()) {
        None => CandidateSet::new(),
        Some(first_cat) if cfg.restriction_filter => {
            let filter = RestrictionFilter::new(first.restriction());
            let mut seeds = CandidateSet::new();
            for &v in kb.members(first_cat) {
                if filter.as_ref().is_none_or(|f| f.accepts(kb, v)) {
                    seeds.offer(v, Trajectory::single(kb, v, StepKind::Seed, path_index, 0));
                }
            }
            seeds
        }
        Some(first_cat) => {
            expand_textual(kb, scorer, query, first.restriction(), first_cat, cfg.n_seeds, StepKind::Seed, path_index, 0)
        }
    };
    trace.push(LayerTrace {
        path_index,
        layer: 1,
        struct_count: layer.len(),
        text_count: layer.len(),
        union_count: layer.len(),
    });

    for (l, node) in path.nodes().iter().enumerate().skip(1) {
        let Some(cat) = kb.category_idx(node.category()) else {
            layer = CandidateSet::new();
            trace.push(LayerTrace {
                path_index,
                layer: l + 1,
                struct_count: 0,
                text_count: 0,
                union_count: 0,
            });
            continue;
        };
        let structural = if cfg.structural {
            expand_structural(kb, &layer, cat)
        } else {
            CandidateSet::new()
        };
        let textual = if cfg.per_layer_text > 0 {
            expand_textual(kb, scorer, query, node.restriction(), cat, cfg.per_layer_text, StepKind::Textual, path_index, l)
        } else {
            CandidateSet::new()
        };
        let (struct_count, text_count) = (structural.len(), textual.len());
        let mut union = structural;
        union.merge(textual);
        if cfg.restriction_filter {
            if let Some(filter) = RestrictionFilter::new(node.restriction()) {
                union.retain(|v| filter.accepts(kb, v));
            }
        }
        trace.push(LayerTrace {
            path_index,
            layer: l + 1,
            struct_count,
            text_count,
            union_count: union.len(),
        });
        layer = union;
    }
    PathResult {
        candidates: layer,
        trace,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackReason {
    /// The plan was invalid; candidates come from plan-free textual matching.
    InvalidPlan,
    /// Paths shared no candidate; the union of path results is returned.
    EmptyIntersection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraversalOutcome {
    pub candidates: CandidateSet,
    pub fallback: Option<FallbackReason>,
    pub trace: Vec<LayerTrace>,
}

impl TraversalOutcome {
    pub fn fallback_flag(&self) -> bool {
        self.fallback.is_some()
    }
}

/// Plan-free retrieval: the best `k` nodes over the whole knowledge base.
pub fn textual_fallback(kb: &Tgkb, scorer: &dyn TextScorer, query: &str, k: usize) -> CandidateSet {
    let all: Vec<NodeIdx> = (0..kb.len() as u32).map(NodeIdx).collect();
    let mut out = CandidateSet::new();
    for s in score_pool(scorer, query, &all, k) {
        if s.score > 0.0 {
            out.offer(s.node, Trajectory::single(kb, s.node, StepKind::Textual, 0, 0));
        }
    }
    out
}

/// Runs every path of a valid plan and intersects their final layers.
pub fn mixed_traverse(
    kb: &Tgkb,
    scorer: &dyn TextScorer,
    query: &str,
    plan: &PlanOutcome,
    cfg: &TraversalConfig,
) -> TraversalOutcome {
    let Some(plan) = plan.plan() else {
        return TraversalOutcome {
            candidates: textual_fallback(kb, scorer, query, cfg.fallback_k),
            fallback: Some(FallbackReason::InvalidPlan),
            trace: Vec::new(),
        };
    };
    let results: Vec<PathResult> = plan
        .paths()
        .par_iter()
        .enumerate()
        .map(|(i, p)| traverse_path(kb, scorer, query, p, i, cfg))
        .collect();
    let trace = results.iter().flat_map(|r| r.trace.iter().cloned()).collect();

    let mut common: BTreeSet<NodeIdx> = results[0].candidates.nodes().collect();
    for r in &results[1..] {
        common.retain(|v| r.candidates.contains(*v));
    }
    let mut merged = CandidateSet::new();
    for r in results {
        merged.merge(r.candidates);
    }
    if common.is_empty() && !merged.is_empty() && plan.paths().len() > 1 {
        return TraversalOutcome {
            candidates: merged,
            fallback: Some(FallbackReason::EmptyIntersection),
            trace,
        };
    }
    merged.retain(|v| common.contains(&v));
    TraversalOutcome {
        candidates: merged,
        fallback: None,
        trace,
    }
}

/// Exhaustive reference retrieval used to check traversal and to label
/// synthetic queries.
///
/// Enumerates every walk in the raw edge list whose categories follow a
/// path and whose restricted nodes contain every restriction token, then
/// intersects the walk endpoints across paths. Exponential in path length.
pub struct BruteForceOracle<'a> {
    kb: &'a Tgkb,
    adjacency: Vec<Vec<NodeIdx>>,
}

impl<'a> BruteForceOracle<'a> {
    pub fn new(kb: &'a Tgkb) -> Self {
        let mut adjacency = vec![Vec::new(); kb.len()];
        for (s, d, _) in kb.edges() {
            adjacency[s.index()].push(d);
            adjacency[d.index()].push(s);
        }
        Self { kb, adjacency }
    }

    fn admits(&self, v: NodeIdx, category: &str, restriction: Option<&[String]>) -> bool {
        if self.kb.node(v).category != category {
            return false;
        }
        match restriction {
            None => true,
            Some(tokens) => {
                let doc = tokenize(self.kb.document(v));
                tokens.iter().all(|t| doc.contains(t))
            }
        }
    }

    fn walk(&self, v: NodeIdx, depth: usize, steps: &[(String, Option<Vec<String>>)], out: &mut BTreeSet<NodeIdx>) {
        if depth + 1 == steps.len() {
            out.insert(v);
            return;
        }
        let (category, restriction) = &steps[depth + 1];
        for &u in &self.adjacency[v.index()] {
            if self.admits(u, category, restriction.as_deref()) {
                self.walk(u, depth + 1, steps, out);
            }
        }
    }

    pub fn path_endpoints(&self, path: &ReasoningPath) -> BTreeSet<NodeIdx> {
        let steps: Vec<(String, Option<Vec<String>>)> = path
            .nodes()
            .iter()
            .map(|n| (n.category().to_string(), n.restriction().map(tokenize)))
            .collect();
        let mut out = BTreeSet::new();
        for i in 0..self.kb.len() {
            let v = NodeIdx(i as u32);
            if self.admits(v, &steps[0].0, steps[0].1.as_deref()) {
                self.walk(v, 0, &steps, &mut out);
            }
        }
        out
    }

    pub fn retrieve(&self, plan: &PlanningGraph) -> BTreeSet<NodeIdx> {
        let mut sets = plan.paths().iter().map(|p| self.path_endpoints(p));
        let mut acc = sets.next().unwrap_or_default();
        for s in sets {
            acc.retain(|v| s.contains(v));
        }
        acc
    }
}

pub fn brute_force_retrieve(kb: &Tgkb, plan: &PlanningGraph) -> BTreeSet<NodeIdx> {
    BruteForceOracle::new(kb).retrieve(plan)
}
