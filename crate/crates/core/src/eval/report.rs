use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{hit_at_k, mrr, recall_at_k, QueryRecord};
use super::pipeline::{signature_of, Indexes, Pipeline, Planner, Retrieval};
use super::EvalError;
use crate::kb::Tgkb;
use crate::plan::validate_outcome;
use crate::reranker::{train, FeatureMask, ModelConfig, RerankerModel, TrainConfig};
use crate::traversal::{BruteForceOracle, TraversalConfig};

pub const RECALL_DEPTH: usize = 20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hit1: f64,
    pub hit5: f64,
    pub recall20: f64,
    pub mrr: f64,
}

impl Metrics {
    pub fn of(ranked: &[String], answers: &std::collections::BTreeSet<String>) -> Self {
        Self {
            hit1: hit_at_k(ranked, answers, 1),
            hit5: hit_at_k(ranked, answers, 5),
            recall20: recall_at_k(ranked, answers, RECALL_DEPTH),
            mrr: mrr(ranked, answers),
        }
    }

    fn mean<'a>(items: impl IntoIterator<Item = &'a Metrics>) -> Self {
        let mut sum = Metrics::default();
        let mut n = 0usize;
        for m in items {
            sum.hit1 += m.hit1;
            sum.hit5 += m.hit5;
            sum.recall20 += m.recall20;
            sum.mrr += m.mrr;
            n += 1;
        }
        if n == 0 {
            return sum;
        }
        let n = n as f64;
        Metrics {
            hit1: sum.hit1 / n,
            hit5: sum.hit5 / n,
            recall20: sum.recall20 / n,
            mrr: sum.mrr / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub id: String,
    pub pattern: String,
    pub fallback: bool,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternMetrics {
    pub queries: usize,
    #[serde(flatten)]
    pub mean: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub queries: usize,
    pub mean: Metrics,
    pub fallback_rate: f64,
    /// Keyed by the gold plan's category signature, e.g. `I→A→P;F→P`.
    pub patterns: BTreeMap<String, PatternMetrics>,
    pub per_query: Vec<QueryMetrics>,
}

impl MetricsReport {
    pub fn from_queries(name: impl Into<String>, per_query: Vec<QueryMetrics>) -> Self {
        let mut groups: BTreeMap<String, Vec<&Metrics>> = BTreeMap::new();
        for q in &per_query {
            groups.entry(q.pattern.clone()).or_default().push(&q.metrics);
        }
        let patterns = groups
            .into_iter()
            .map(|(k, v)| {
                (
                    k,
                    PatternMetrics {
                        queries: v.len(),
                        mean: Metrics::mean(v),
                    },
                )
            })
            .collect();
        let fallback = per_query.iter().filter(|q| q.fallback).count();
        Self {
            name: name.into(),
            queries: per_query.len(),
            mean: Metrics::mean(per_query.iter().map(|q| &q.metrics)),
            fallback_rate: if per_query.is_empty() {
                0.0
            } else {
                fallback as f64 / per_query.len() as f64
            },
            patterns,
            per_query,
        }
    }

    /// Plain-text table in H@1, H@5, R@20, MRR order, values in percent.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>7} {:>7} {:>7} {:>7} {:>6}", "", "H@1", "H@5", "R@20", "MRR", "n");
        let mut row = |label: &str, m: &Metrics, n: usize| {
            let _ = writeln!(
                out,
                "{:<24} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>6}",
                label,
                100.0 * m.hit1,
                100.0 * m.hit5,
                100.0 * m.recall20,
                100.0 * m.mrr,
                n
            );
        };
        row(&self.name, &self.mean, self.queries);
        for (pattern, p) in &self.patterns {
            row(&format!("  {pattern}"), &p.mean, p.queries);
        }
        let _ = writeln!(out, "fallback rate {:.2}%", 100.0 * self.fallback_rate);
        out
    }
}

pub enum Ranker<'m> {
    /// Pool order by initial score.
    Initial,
    Model(&'m RerankerModel),
    /// Exhaustive retrieval over the validated plan, ids ascending.
    Oracle,
}

/// Runs every query and keeps the retrievals alongside the report.
pub fn evaluate_detailed(
    name: &str,
    pipeline: &Pipeline,
    planner: &Planner,
    queries: &[QueryRecord],
    ranker: Ranker,
) -> (MetricsReport, Vec<Retrieval>) {
    let depth = pipeline.traversal.rerank_pool.max(RECALL_DEPTH);
    let oracle = matches!(ranker, Ranker::Oracle).then(|| BruteForceOracle::new(pipeline.kb));
    let rows: Vec<(QueryMetrics, Retrieval)> = queries
        .par_iter()
        .map(|q| {
            let plan = planner.plan(q);
            let pattern = q
                .plan
                .as_deref()
                .map(|p| signature_of(crate::plan::parse_plan(p).plan()))
                .unwrap_or_else(|| signature_of(plan.plan()));
            let mut r = match (&ranker, &oracle) {
                (Ranker::Oracle, Some(oracle)) => oracle_retrieval(pipeline.kb, oracle, plan, pipeline.max_path_len),
                (Ranker::Model(m), _) => pipeline.retrieve(&q.text, plan, Some(m), depth),
                _ => pipeline.retrieve(&q.text, plan, None, depth),
            };
            r.query_id = Some(q.id.clone());
            let metrics = Metrics::of(&r.ids(), &q.answers);
            (
                QueryMetrics {
                    id: q.id.clone(),
                    pattern,
                    fallback: r.fallback,
                    metrics,
                },
                r,
            )
        })
        .collect();
    let (per_query, retrievals): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    (MetricsReport::from_queries(name, per_query), retrievals)
}

pub fn evaluate(name: &str, pipeline: &Pipeline, planner: &Planner, queries: &[QueryRecord], ranker: Ranker) -> MetricsReport {
    evaluate_detailed(name, pipeline, planner, queries, ranker).0
}

fn oracle_retrieval(kb: &Tgkb, oracle: &BruteForceOracle, plan: crate::plan::PlanOutcome, max_len: usize) -> Retrieval {
    let plan = validate_outcome(plan, kb, max_len);
    let hits = plan
        .plan()
        .map(|g| {
            oracle
                .retrieve(g)
                .into_iter()
                .map(|v| super::pipeline::Hit {
                    id: kb.id(v).to_string(),
                    score: 1.0,
                    initial_score: 1.0,
                    trajectory: Vec::new(),
                })
                .collect()
        })
        .unwrap_or_default();
    Retrieval {
        query_id: None,
        plan: plan.plan().map(crate::plan::serialize_plan),
        plan_error: plan.reason().map(str::to_string),
        fallback: false,
        fallback_reason: None,
        hits,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoRerank,
    NoText,
    NoStruct,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoRerank, Variant::NoText, Variant::NoStruct];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRerank => "no_rerank",
            Variant::NoText => "no_text",
            Variant::NoStruct => "no_struct",
        }
    }

    pub fn traversal(self, base: &TraversalConfig) -> TraversalConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full | Variant::NoRerank => {}
            Variant::NoText => cfg.per_layer_text = 0,
            Variant::NoStruct => cfg.structural = false,
        }
        cfg
    }

    pub fn reranks(self) -> bool {
        self != Variant::NoRerank
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub negatives_per_positive: usize,
}

impl Default for RerankSettings {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            negatives_per_positive: 5,
        }
    }
}

/// Trains a reranker on `train_queries` using the given traversal settings.
pub fn train_reranker(
    pipeline: &Pipeline,
    planner: &Planner,
    train_queries: &[QueryRecord],
    settings: &RerankSettings,
    mask: FeatureMask,
) -> Result<(RerankerModel, Vec<f64>), EvalError> {
    let data = pipeline.training_examples(planner, train_queries, settings.negatives_per_positive);
    let mut model_cfg = settings.model.clone();
    model_cfg.mask = mask;
    let init = RerankerModel::new(model_cfg, pipeline.kb.categories());
    let out = train(&init, &data, &settings.train)?;
    Ok((out.model, out.loss_curve))
}

pub struct AblationRun<'a> {
    pub kb: &'a Tgkb,
    pub indexes: &'a Indexes,
    pub planner: &'a Planner,
    pub traversal: TraversalConfig,
    pub train_queries: &'a [QueryRecord],
    pub test_queries: &'a [QueryRecord],
    pub settings: RerankSettings,
}

impl AblationRun<'_> {
    pub fn run_name(variant: Variant, mask: FeatureMask) -> String {
        if variant.reranks() {
            format!("{}-{}", variant.name(), mask.label())
        } else {
            variant.name().to_string()
        }
    }

    /// One variant under one feature mask. Reranking variants train their own model.
    pub fn run(&self, variant: Variant, mask: FeatureMask) -> Result<MetricsReport, EvalError> {
        Ok(self.run_detailed(variant, mask)?.0)
    }

    pub fn run_detailed(&self, variant: Variant, mask: FeatureMask) -> Result<(MetricsReport, Vec<Retrieval>), EvalError> {
        let pipeline = Pipeline::new(self.kb, self.indexes, variant.traversal(&self.traversal));
        let name = Self::run_name(variant, mask);
        if !variant.reranks() {
            return Ok(evaluate_detailed(&name, &pipeline, self.planner, self.test_queries, Ranker::Initial));
        }
        let (model, _) = train_reranker(&pipeline, self.planner, self.train_queries, &self.settings, mask)?;
        Ok(evaluate_detailed(&name, &pipeline, self.planner, self.test_queries, Ranker::Model(&model)))
    }
}

/// Fractions of structurally and textually retrieved results.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub structure_all: Option<f64>,
    pub text_all: Option<f64>,
    pub structure_answer: Option<f64>,
    pub text_answer: Option<f64>,
    /// Word counts of start-node restrictions versus target restrictions in
    /// the gold plans; an approximation of query information content.
    pub structure_information: Option<f64>,
    pub text_information: Option<f64>,
}

/// Per-query input to [`ratio_analysis`].
#[derive(Debug, Clone, PartialEq)]
pub struct RatioInput {
    pub fallback: bool,
    /// `(final step is textual, is an answer)` for each of the top results.
    pub top: Vec<(bool, bool)>,
    pub structural_words: usize,
    pub textual_words: usize,
}

impl RatioInput {
    pub fn new(retrieval: &Retrieval, query: &QueryRecord, depth: usize) -> Self {
        let top = retrieval
            .hits
            .iter()
            .take(depth)
            .map(|h| (h.final_kind().is_textual(), query.answers.contains(&h.id)))
            .collect();
        let (mut structural_words, mut textual_words) = (0, 0);
        if let Some(g) = query.plan.as_deref().and_then(|p| crate::plan::parse_plan(p).plan().cloned()) {
            for path in g.paths() {
                let last = path.len() - 1;
                for (l, n) in path.nodes().iter().enumerate() {
                    let words = n.restriction().map_or(0, |r| r.split_whitespace().count());
                    if l == last {
                        textual_words += words;
                    } else {
                        structural_words += words;
                    }
                }
            }
        }
        Self {
            fallback: retrieval.fallback,
            top,
            structural_words,
            textual_words,
        }
    }
}

fn pair(structural: usize, textual: usize) -> (Option<f64>, Option<f64>) {
    let total = structural + textual;
    if total == 0 {
        (None, None)
    } else {
        (Some(structural as f64 / total as f64), Some(textual as f64 / total as f64))
    }
}

/// Micro-averaged ratios over non-fallback queries. A pair with an empty
/// denominator is reported as undefined.
pub fn ratio_analysis(inputs: &[RatioInput]) -> RatioReport {
    let (mut s_all, mut t_all, mut s_ans, mut t_ans, mut s_info, mut t_info) = (0, 0, 0, 0, 0, 0);
    for q in inputs.iter().filter(|q| !q.fallback) {
        for &(textual, answer) in &q.top {
            if textual {
                t_all += 1;
                t_ans += usize::from(answer);
            } else {
                s_all += 1;
                s_ans += usize::from(answer);
            }
        }
        s_info += q.structural_words;
        t_info += q.textual_words;
    }
    let (structure_all, text_all) = pair(s_all, t_all);
    let (structure_answer, text_answer) = pair(s_ans, t_ans);
    let (structure_information, text_information) = pair(s_info, t_info);
    RatioReport {
        structure_all,
        text_all,
        structure_answer,
        text_answer,
        structure_information,
        text_information,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::synth::{synth_generate, SynthConfig};
    use crate::scorer::ScorerConfig;

    fn input(top: Vec<(bool, bool)>) -> RatioInput {
        RatioInput {
            fallback: false,
            top,
            structural_words: 3,
            textual_words: 1,
        }
    }

    #[test]
    fn ratio_arithmetic() {
        let mut top = vec![(false, false); 12];
        top.extend(vec![(true, false); 8]);
        let r = ratio_analysis(&[input(top)]);
        assert_eq!(r.structure_all, Some(0.6));
        assert_eq!(r.text_all, Some(0.4));
        assert_eq!(r.structure_answer, None);
        assert_eq!(r.text_answer, None);
        assert_eq!(r.structure_information, Some(0.75));

        let r = ratio_analysis(&[input(vec![(false, true); 3])]);
        assert_eq!(r.structure_all, Some(1.0));
        assert_eq!(r.structure_answer, Some(1.0));
        assert_eq!(r.text_answer, Some(0.0));

        let mut skipped = input(vec![(true, true)]);
        skipped.fallback = true;
        assert_eq!(ratio_analysis(&[skipped]), RatioReport {
            structure_all: None,
            text_all: None,
            structure_answer: None,
            text_answer: None,
            structure_information: None,
            text_information: None,
        });
    }

    #[test]
    fn oracle_evaluation_has_full_recall_and_is_deterministic() {
        let data = synth_generate(&SynthConfig {
            test_queries: 15,
            train_queries: 0,
            ..SynthConfig::scaled(500)
        })
        .unwrap();
        let idx = Indexes::build(&data.kb, &ScorerConfig::default());
        let p = Pipeline::new(&data.kb, &idx, TraversalConfig::default());
        let report = evaluate("oracle", &p, &Planner::Gold, &data.test, Ranker::Oracle);
        assert_eq!(report.mean.recall20, 1.0);
        assert_eq!(report.fallback_rate, 0.0);
        let again = evaluate("initial", &p, &Planner::Gold, &data.test, Ranker::Initial);
        assert_eq!(again, evaluate("initial", &p, &Planner::Gold, &data.test, Ranker::Initial));
        let table = again.table();
        let header = table.lines().next().unwrap();
        let cols: Vec<&str> = header.split_whitespace().collect();
        assert_eq!(cols, ["H@1", "H@5", "R@20", "MRR", "n"]);
    }

    #[test]
    fn report_means_and_patterns() {
        let q = |id: &str, pattern: &str, hit1: f64, fallback: bool| QueryMetrics {
            id: id.into(),
            pattern: pattern.into(),
            fallback,
            metrics: Metrics {
                hit1,
                hit5: 1.0,
                recall20: 0.5,
                mrr: hit1,
            },
        };
        let r = MetricsReport::from_queries("x", vec![q("a", "A→P", 1.0, false), q("b", "A→P", 0.0, true), q("c", "F→P", 1.0, false)]);
        assert!((r.mean.hit1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.fallback_rate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.patterns["A→P"].queries, 2);
        assert_eq!(r.patterns["A→P"].mean.hit1, 0.5);
    }

    #[test]
    fn reversed_answers_beyond_depth() {
        // 25 answers ranked in reverse after 20 distractors.
        let answers: std::collections::BTreeSet<String> = (0..25).map(|i| format!("a{i:02}")).collect();
        let mut ranked: Vec<String> = (0..20).map(|i| format!("x{i}")).collect();
        ranked.extend(answers.iter().rev().cloned());
        let m = Metrics::of(&ranked, &answers);
        assert_eq!(m.recall20, recall_at_k(&ranked, &answers, 20));
        assert_eq!(m.recall20, 0.0);
        assert!((m.mrr - 1.0 / 21.0).abs() < 1e-15);
    }
}
