//! Trajectory reranking: features, the scoring network, training and ranking.

mod features;
mod model;

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{extract_features, TrajectoryFeatures, TraversalId, TF_WIDTH, TRAJECTORY_SLOTS};
pub use model::{Activation, Encoded, FeatureMask, ModelConfig, Params, Prediction, RerankerModel, PADDING_TOKEN, UNKNOWN_TOKEN};

#[derive(Debug, Error)]
pub enum RerankerError {
    #[error("training data needs both positive and negative examples")]
    SingleLabel,
    #[error("training data is empty")]
    EmptyDataset,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint tensor {tensor} has shape {found:?}, expected {expected:?}")]
    DimensionMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub query_id: String,
    pub features: TrajectoryFeatures,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-2,
            batch_size: 32,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RerankerModel,
    /// Summed loss over the whole dataset before training and after each epoch.
    pub loss_curve: Vec<f64>,
}

/// Mini-batch gradient descent on the summed cross-entropy. Each step moves
/// against the batch-mean gradient; batches come from a seeded shuffle.
pub fn train(init: &RerankerModel, data: &[TrainExample], cfg: &TrainConfig) -> Result<TrainOutcome, RerankerError> {
    if data.is_empty() {
        return Err(RerankerError::EmptyDataset);
    }
    let positives = data.iter().filter(|e| e.label).count();
    if positives == 0 || positives == data.len() {
        return Err(RerankerError::SingleLabel);
    }
    let mut model = init.clone();
    let xs: Vec<Encoded> = data.iter().map(|e| model.encode(&e.features)).collect();
    let ys: Vec<bool> = data.iter().map(|e| e.label).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch_size = cfg.batch_size.max(1);

    let mut loss_curve = vec![model.loss_encoded(&xs, &ys)];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let bx: Vec<Encoded> = chunk.iter().map(|&i| xs[i]).collect();
            let by: Vec<bool> = chunk.iter().map(|&i| ys[i]).collect();
            let (_, grad) = model.loss_and_grad_encoded(&bx, &by);
            model.params.add_scaled(&grad, -cfg.learning_rate / chunk.len() as f64);
        }
        let loss = model.loss_encoded(&xs, &ys);
        log::debug!("epoch {} loss {loss:.6}", epoch + 1);
        loss_curve.push(loss);
    }
    Ok(TrainOutcome { model, loss_curve })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankCandidate {
    pub id: String,
    pub features: TrajectoryFeatures,
    pub initial_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub id: String,
    pub p1: f64,
    pub initial_score: f64,
}

fn ranked_order(a: &RankedCandidate, b: &RankedCandidate) -> Ordering {
    b.p1.total_cmp(&a.p1)
        .then_with(|| b.initial_score.total_cmp(&a.initial_score))
        .then_with(|| a.id.cmp(&b.id))
}

/// Scores the pool and returns the best `k` by relevance probability.
pub fn rerank(model: &RerankerModel, pool: &[RerankCandidate], k: usize) -> Vec<RankedCandidate> {
    let xs: Vec<Encoded> = pool.iter().map(|c| model.encode(&c.features)).collect();
    let preds = model.predict_encoded(&xs);
    let mut ranked: Vec<RankedCandidate> = pool
        .iter()
        .zip(preds)
        .map(|(c, p)| RankedCandidate {
            id: c.id.clone(),
            p1: p.p1,
            initial_score: c.initial_score,
        })
        .collect();
    ranked.sort_by(ranked_order);
    ranked.truncate(k);
    ranked
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TfSaliency {
    /// `|dp1 / dtf[l]|` for the three step slots.
    pub values: [f64; TRAJECTORY_SLOTS],
    /// Slots that hold padding rather than a trajectory step.
    pub padding: [bool; TRAJECTORY_SLOTS],
}

pub fn tf_saliency(model: &RerankerModel, x: &TrajectoryFeatures) -> TfSaliency {
    let grad = model.tf_gradient(x);
    TfSaliency {
        values: std::array::from_fn(|l| grad[l].abs()),
        padding: x.padding_mask(),
    }
}

/// Random features for one candidate; only `tf[3]` carries the label when
/// the construction is separable.
fn random_features(rng: &mut ChaCha8Rng, categories: &[String]) -> TrajectoryFeatures {
    let len = rng.gen_range(1..=TRAJECTORY_SLOTS);
    let pad = TRAJECTORY_SLOTS - len;
    let mut tf = [0.0; TF_WIDTH];
    let mut sf: [Option<String>; TRAJECTORY_SLOTS] = Default::default();
    let mut ti = [TraversalId::Pad; TRAJECTORY_SLOTS];
    for slot in pad..TRAJECTORY_SLOTS {
        tf[slot] = rng.gen_range(0.0..3.0);
        sf[slot] = Some(categories[rng.gen_range(0..categories.len())].clone());
        ti[slot] = if rng.gen_bool(0.5) {
            TraversalId::Structural
        } else {
            TraversalId::Textual
        };
    }
    TrajectoryFeatures { tf, sf, ti }
}

/// Grouped examples where positives have `tf[3] = +1` and negatives `-1`;
/// every other feature is noise. The first candidate of each group is positive.
pub fn separable_examples(groups: usize, per_group: usize, categories: &[String], seed: u64) -> Vec<TrainExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(groups * per_group);
    for g in 0..groups {
        for j in 0..per_group {
            let mut features = random_features(&mut rng, categories);
            let label = j == 0;
            features.tf[TRAJECTORY_SLOTS] = if label { 1.0 } else { -1.0 };
            out.push(TrainExample {
                query_id: format!("q{g}"),
                features,
                label,
            });
        }
    }
    out
}

/// Random-feature examples with random labels, for gradient checks and smoke tests.
pub fn random_examples(n: usize, categories: &[String], seed: u64) -> Vec<TrainExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut features = random_features(&mut rng, categories);
            features.tf[TRAJECTORY_SLOTS] = rng.gen_range(-1.0..1.0);
            TrainExample {
                query_id: format!("q{}", i / 4),
                features,
                label: rng.gen_bool(0.5),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cats() -> Vec<String> {
        ["Author", "Field-of-Study", "Institution", "Paper"].map(String::from).to_vec()
    }

    fn small_config(seed: u64) -> ModelConfig {
        ModelConfig {
            embed_dim: 6,
            hidden: 5,
            seed,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = RerankerModel::zeros(ModelConfig::default(), &cats());
        let x = &random_examples(1, &cats(), 1)[0].features;
        let p = m.forward(x);
        assert_eq!(p.logits, [0.0, 0.0]);
        assert_eq!(p.p1, 0.5);
        let (loss, _) = m.loss_and_grad_encoded(&[m.encode(x)], &[true]);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(tf_saliency(&m, x).values, [0.0; 3]);
    }

    #[test]
    fn vocabulary_layout() {
        let m = RerankerModel::zeros(ModelConfig::default(), &["Paper".into(), "Author".into(), "Paper".into()]);
        assert_eq!(m.vocab(), ["padding", "Author", "Paper", "<unk>"]);
        let x = TrajectoryFeatures {
            tf: [0.0; 4],
            sf: [None, Some("Venue".into()), Some("Paper".into())],
            ti: [TraversalId::Pad, TraversalId::Textual, TraversalId::Structural],
        };
        assert_eq!(m.encode(&x).sf, [0, 3, 2]);
        assert_eq!(m.encode(&x).ti, [2, 1, 0]);
    }

    #[test]
    fn duplicated_example_doubles_loss_and_gradient() {
        let m = RerankerModel::new(small_config(3), &cats());
        let e = &random_examples(1, &cats(), 9)[0];
        let x = m.encode(&e.features);
        let (l1, g1) = m.loss_and_grad_encoded(&[x], &[e.label]);
        let (l2, g2) = m.loss_and_grad_encoded(&[x, x], &[e.label, e.label]);
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
        for (a, b) in g1.groups().iter().zip(g2.groups()) {
            for (x, y) in a.iter().zip(b) {
                assert!((2.0 * x - y).abs() < 1e-12);
            }
        }
    }

    /// Central differences over every parameter group, relative error with a
    /// small floor so exact zeros compare cleanly.
    fn max_grad_error(model: &RerankerModel, data: &[TrainExample]) -> f64 {
        let xs: Vec<Encoded> = data.iter().map(|e| model.encode(&e.features)).collect();
        let ys: Vec<bool> = data.iter().map(|e| e.label).collect();
        let (_, grad) = model.loss_and_grad_encoded(&xs, &ys);
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for g in 0..10 {
            let n = grad.groups()[g].len();
            for i in 0..n {
                let mut plus = model.clone();
                plus.params.groups_mut()[g][i] += eps;
                let mut minus = model.clone();
                minus.params.groups_mut()[g][i] -= eps;
                let numeric = (plus.loss_encoded(&xs, &ys) - minus.loss_encoded(&xs, &ys)) / (2.0 * eps);
                let analytic = grad.groups()[g][i];
                let err = (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let m = RerankerModel::new(small_config(seed), &cats());
            let data = random_examples(5, &cats(), 100 + seed);
            let err = max_grad_error(&m, &data);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn masked_branches_get_no_gradient() {
        let mut cfg = small_config(4);
        cfg.mask = FeatureMask {
            tf: true,
            sf: false,
            ti: false,
        };
        let m = RerankerModel::new(cfg, &cats());
        let data = random_examples(6, &cats(), 5);
        let xs: Vec<Encoded> = data.iter().map(|e| m.encode(&e.features)).collect();
        let ys: Vec<bool> = data.iter().map(|e| e.label).collect();
        let (_, g) = m.loss_and_grad_encoded(&xs, &ys);
        for name in ["cat_embed", "sf_w", "sf_b", "ti_embed"] {
            let idx = Params::GROUP_NAMES.iter().position(|n| *n == name).unwrap();
            assert!(g.groups()[idx].iter().all(|v| *v == 0.0), "{name}");
        }
        assert!(max_grad_error(&m, &data) < 1e-4);
    }

    #[test]
    fn tf_saliency_matches_finite_differences() {
        let m = RerankerModel::new(small_config(11), &cats());
        let x = random_examples(1, &cats(), 12)[0].features.clone();
        let s = tf_saliency(&m, &x);
        let eps = 1e-5;
        for l in 0..3 {
            let mut a = x.clone();
            a.tf[l] += eps;
            let mut b = x.clone();
            b.tf[l] -= eps;
            let numeric = ((m.forward(&a).p1 - m.forward(&b).p1) / (2.0 * eps)).abs();
            let err = (numeric - s.values[l]).abs() / numeric.max(s.values[l]).max(1e-6);
            assert!(err < 1e-4, "slot {l}: {numeric} vs {}", s.values[l]);
        }
        assert_eq!(s.padding, x.padding_mask());
    }

    #[test]
    fn training_rejects_single_label_data() {
        let m = RerankerModel::new(small_config(0), &cats());
        let mut data = random_examples(4, &cats(), 0);
        data.iter_mut().for_each(|e| e.label = true);
        assert!(matches!(train(&m, &data, &TrainConfig::default()), Err(RerankerError::SingleLabel)));
        assert!(matches!(train(&m, &[], &TrainConfig::default()), Err(RerankerError::EmptyDataset)));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let m = RerankerModel::new(small_config(1), &cats());
        let data = separable_examples(4, 4, &cats(), 2);
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&m, &data, &cfg).unwrap();
        assert_eq!(out.model.params, m.params);
        assert_eq!(out.loss_curve.len(), 4);
    }

    #[test]
    fn training_is_deterministic_and_separates() {
        let init = RerankerModel::new(ModelConfig::default(), &cats());
        let data = separable_examples(40, 5, &cats(), 21);
        let cfg = TrainConfig::default();
        let a = train(&init, &data, &cfg).unwrap();
        let b = train(&init, &data, &cfg).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert!(a.loss_curve.last().unwrap() <= &a.loss_curve[0]);

        let held_out = separable_examples(20, 5, &cats(), 22);
        for group in held_out.chunks(5) {
            let pool: Vec<RerankCandidate> = group
                .iter()
                .enumerate()
                .map(|(i, e)| RerankCandidate {
                    id: format!("c{i}"),
                    features: e.features.clone(),
                    initial_score: 0.0,
                })
                .collect();
            let ranked = rerank(&a.model, &pool, 5);
            assert_eq!(ranked[0].id, "c0");
        }
    }

    #[test]
    fn zero_model_falls_back_to_initial_score() {
        let m = RerankerModel::zeros(ModelConfig::default(), &cats());
        let pool: Vec<RerankCandidate> = random_examples(5, &cats(), 3)
            .into_iter()
            .enumerate()
            .map(|(i, e)| RerankCandidate {
                id: format!("n{i}"),
                features: e.features,
                initial_score: [0.3, 0.9, 0.1, 0.9, 0.5][i],
            })
            .collect();
        let ids: Vec<String> = rerank(&m, &pool, 4).into_iter().map(|r| r.id).collect();
        assert_eq!(ids, ["n1", "n3", "n4", "n0"]);
        assert_eq!(rerank(&m, &pool[..1], 10).len(), 1);
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let m = RerankerModel::new(small_config(8), &cats());
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = RerankerModel::load(buf.as_slice()).unwrap();
        assert_eq!(back, m);

        let mut v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        v["config"]["embed_dim"] = 7.into();
        let err = RerankerModel::load(v.to_string().as_bytes()).unwrap_err();
        assert!(matches!(err, RerankerError::DimensionMismatch { .. }), "{err}");
        assert!(RerankerModel::load(&b"{}"[..]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn probabilities_normalized(seed in 0u64..1000, shift in -50.0f64..50.0) {
            let mut m = RerankerModel::new(small_config(seed), &cats());
            let x = random_examples(1, &cats(), seed)[0].features.clone();
            let p = m.forward(&x);
            prop_assert!((p.p0 + p.p1 - 1.0).abs() < 1e-12);
            prop_assert!(p.p1 > 0.0 && p.p1 < 1.0);
            m.params.out_b[0] += shift;
            m.params.out_b[1] += shift;
            let q = m.forward(&x);
            prop_assert!((q.p1 - p.p1).abs() < 1e-9);
            let (loss, _) = m.loss_and_grad_encoded(&[m.encode(&x)], &[seed % 2 == 0]);
            prop_assert!(loss >= 0.0);
        }

        #[test]
        fn ranking_ignores_pool_order(seed in 0u64..1000, rot in 0usize..8) {
            let m = RerankerModel::new(small_config(seed), &cats());
            let pool: Vec<RerankCandidate> = random_examples(8, &cats(), seed)
                .into_iter()
                .enumerate()
                .map(|(i, e)| RerankCandidate { id: format!("n{i}"), initial_score: e.features.tf[3], features: e.features })
                .collect();
            let mut rotated = pool.clone();
            rotated.rotate_left(rot);
            rotated.reverse();
            prop_assert_eq!(rerank(&m, &pool, 8), rerank(&m, &rotated, 8));
        }

        #[test]
        fn zero_structure_embeddings_rank_by_tf(seed in 0u64..1000) {
            let mut m = RerankerModel::new(small_config(seed), &cats());
            m.params.cat_embed.fill(0.0);
            m.params.ti_embed.fill(0.0);
            let base = random_examples(1, &cats(), seed)[0].features.clone();
            let mut other = random_examples(1, &cats(), seed + 1)[0].features.clone();
            other.tf = base.tf;
            prop_assert!((m.forward(&base).p1 - m.forward(&other).p1).abs() < 1e-12);
        }
    }
}
