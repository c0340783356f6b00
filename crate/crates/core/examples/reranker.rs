//! Train the trajectory reranker, inspect step saliency and round-trip a checkpoint.
//!
//! Usage: cargo run --release --example reranker

use mixtrail::reranker::{
    rerank, separable_examples, tf_saliency, train, ModelConfig, RerankCandidate, RerankerModel, TrainConfig,
};

fn main() {
    let categories = ["Author", "Paper", "Field-of-Study"].map(String::from);
    let data = separable_examples(40, 5, &categories, 1);
    let held_out = separable_examples(20, 5, &categories, 2);
    let init = RerankerModel::new(ModelConfig { embed_dim: 32, hidden: 16, ..Default::default() }, &categories);
    let outcome = train(&init, &data, &TrainConfig::default()).unwrap();
    let curve = &outcome.loss_curve;
    println!("loss {:.3} -> {:.3} over {} epochs", curve[0], curve[curve.len() - 1], curve.len() - 1);

    let mut hits = 0;
    for group in held_out.chunks(5) {
        let pool: Vec<RerankCandidate> = group
            .iter()
            .enumerate()
            .map(|(i, e)| RerankCandidate { id: format!("c{i}"), features: e.features.clone(), initial_score: 0.0 })
            .collect();
        hits += usize::from(rerank(&outcome.model, &pool, 1)[0].id == "c0");
    }
    println!("held-out hit@1 {:.2}", hits as f64 / 20.0);

    let s = tf_saliency(&outcome.model, &held_out[0].features);
    println!("step saliency {:?} padding {:?}", s.values, s.padding);

    let mut buf = Vec::new();
    outcome.model.save(&mut buf).unwrap();
    let loaded = RerankerModel::load(buf.as_slice()).unwrap();
    let x = &held_out[0].features;
    assert_eq!(loaded.forward(x).p1, outcome.model.forward(x).p1);
    println!("checkpoint {} bytes", buf.len());
}
