//! End-to-end evaluation on a small generated benchmark: initial ranking, reranking and the oracle.
//!
//! Usage: cargo run --release --example evaluation

use mixtrail::eval::{
    evaluate, hit_at_k, mrr, recall_at_k, synth_generate, train_reranker, Indexes, Pipeline, Planner, Ranker,
    RerankSettings, SynthConfig,
};
use mixtrail::reranker::FeatureMask;
use mixtrail::scorer::ScorerConfig;
use mixtrail::traversal::TraversalConfig;

fn main() {
    let ranked = ["b", "a", "c"].map(String::from);
    let gold = ["a".to_string()].into();
    println!("hit@1 {} hit@5 {} recall@20 {} mrr {}", hit_at_k(&ranked, &gold, 1), hit_at_k(&ranked, &gold, 5), recall_at_k(&ranked, &gold, 20), mrr(&ranked, &gold));

    let data = synth_generate(&SynthConfig { train_queries: 100, test_queries: 100, ..SynthConfig::scaled(3000) }).unwrap();
    let indexes = Indexes::build(&data.kb, &ScorerConfig::default());
    let pipeline = Pipeline::new(&data.kb, &indexes, TraversalConfig::default());
    let planner = Planner::Gold;

    let (model, _) = train_reranker(&pipeline, &planner, &data.train, &RerankSettings::default(), FeatureMask::ALL).unwrap();
    for (name, ranker) in [("initial", Ranker::Initial), ("rerank", Ranker::Model(&model)), ("oracle", Ranker::Oracle)] {
        print!("{}", evaluate(name, &pipeline, &planner, &data.test, ranker).table());
    }
}
