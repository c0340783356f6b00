//! Mixed structural and textual traversal over a plan, checked against exhaustive retrieval.
//!
//! Usage: cargo run --example traversal

use mixtrail::fixtures::{f1, F1_PLAN, F1_QUERY};
use mixtrail::plan::{parse_plan, PlanOutcome};
use mixtrail::scorer::Bm25Index;
use mixtrail::traversal::{brute_force_retrieve, mixed_traverse, TraversalConfig};

fn main() {
    let kb = f1();
    let bm25 = Bm25Index::build(&kb);
    let cfg = TraversalConfig::default();

    let outcome = mixed_traverse(&kb, &bm25, F1_QUERY, &parse_plan(F1_PLAN), &cfg);
    for t in &outcome.trace {
        println!(
            "path {} layer {}: {} structural, {} textual, {} kept",
            t.path_index, t.layer, t.struct_count, t.text_count, t.union_count
        );
    }
    for (v, traj) in outcome.candidates.iter() {
        let steps: Vec<_> = traj.steps.iter().map(|s| format!("{}({:?})", kb.id(s.node), s.kind)).collect();
        println!("{} via {}", kb.id(v), steps.join(" -> "));
    }

    let plan = parse_plan(F1_PLAN);
    let exact: Vec<_> = brute_force_retrieve(&kb, plan.plan().unwrap()).into_iter().map(|v| kb.id(v)).collect();
    println!("exhaustive answer set {exact:?}");

    let invalid = mixed_traverse(&kb, &bm25, F1_QUERY, &PlanOutcome::invalid("no plan"), &cfg);
    println!("invalid plan: {:?} with {:?}", invalid.fallback, invalid.candidates.id_set(&kb));
    let disjoint = parse_plan("Institution<Point Park University> -> Author<Bob Jones> -> Paper ; Field-of-Study -> Paper");
    let structural_only = TraversalConfig { per_layer_text: 0, ..cfg };
    let split = mixed_traverse(&kb, &bm25, "graph", &disjoint, &structural_only);
    println!("disjoint paths: {:?} with {:?}", split.fallback, split.candidates.id_set(&kb));
}
