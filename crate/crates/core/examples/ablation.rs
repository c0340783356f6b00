//! Ablation grid on a generated benchmark.
//!
//! Usage: cargo run --release --example ablation -- [nodes] [text_informativeness] [seed]

use std::time::Instant;

use mixtrail::eval::{ratio_analysis, synth_generate, AblationRun, Indexes, Planner, RatioInput, RerankSettings, SynthConfig, Variant};
use mixtrail::reranker::FeatureMask;
use mixtrail::scorer::ScorerConfig;
use mixtrail::traversal::TraversalConfig;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let nodes: usize = args.first().map_or(10_000, |a| a.parse().expect("nodes"));
    let tau: f64 = args.get(1).map_or(0.5, |a| a.parse().expect("text_informativeness"));
    let seed: u64 = args.get(2).map_or(1, |a| a.parse().expect("seed"));

    let started = Instant::now();
    let data = synth_generate(&SynthConfig {
        text_informativeness: tau,
        seed,
        ..SynthConfig::scaled(nodes)
    })
    .expect("generate");
    let indexes = Indexes::build(&data.kb, &ScorerConfig::default());
    println!(
        "{} nodes, {} train / {} test queries, generated in {:.2?}",
        data.kb.len(),
        data.train.len(),
        data.test.len(),
        started.elapsed()
    );

    let run = AblationRun {
        kb: &data.kb,
        indexes: &indexes,
        planner: &Planner::Gold,
        traversal: TraversalConfig::default(),
        train_queries: &data.train,
        test_queries: &data.test,
        settings: RerankSettings::default(),
    };
    for variant in Variant::ALL {
        let t = Instant::now();
        let (report, retrievals) = run.run_detailed(variant, FeatureMask::ALL).expect("run");
        let inputs: Vec<RatioInput> = retrievals.iter().zip(&data.test).map(|(r, q)| RatioInput::new(r, q, 20)).collect();
        let ratios = ratio_analysis(&inputs);
        print!("{}", report.table());
        println!(
            "  text/all {:?}  text/answer {:?}  ({:.2?})",
            ratios.text_all,
            ratios.text_answer,
            t.elapsed()
        );
    }
}
