//! Plans from the plan language, from template rules and from a chat-completion prompt.
//!
//! Usage: cargo run --example planning

use mixtrail::fixtures::{f1, F1_PLAN, F1_QUERY};
use mixtrail::plan::{
    parse_plan, parse_planner_output, serialize_plan, validate_outcome, Demonstration, LlmEndpoint, LlmPlanner,
    TemplatePlanner, TemplateRule, DEFAULT_MAX_PATH_LEN,
};

fn main() {
    let kb = f1();

    let outcome = parse_plan(F1_PLAN);
    let plan = outcome.plan().expect("valid");
    println!("signature {}  target {}", plan.signature(), plan.target_category());
    for (i, path) in plan.paths().iter().enumerate() {
        let cats: Vec<_> = path.nodes().iter().map(|n| (n.category(), n.restriction())).collect();
        println!("  path {i}: {cats:?}");
    }
    println!("round trip: {}", serialize_plan(plan));

    for bad in ["Paper -> -> Author", "Venue -> Paper", "Author -> Paper ; Author", "A -> B -> C -> D"] {
        let checked = validate_outcome(parse_plan(bad), &kb, DEFAULT_MAX_PATH_LEN);
        println!("{bad:?}: {}", checked.reason().unwrap_or("valid"));
    }

    let rules = [
        TemplateRule::new(
            "Can you give me publications by {inst} authors on {topic}",
            "Field-of-Study<{topic}> -> Paper ; Institution<{inst}> -> Author -> Paper",
        ),
        TemplateRule::new("papers on {topic}", "Paper<{topic}>"),
    ];
    let templates = TemplatePlanner::new(&rules).unwrap();
    println!("template: {:?}", templates.plan(F1_QUERY).plan().map(serialize_plan));
    println!("no rule: {:?}", templates.plan("who won the cup").reason());

    let planner = LlmPlanner::new(
        LlmEndpoint {
            base_url: "http://localhost:8000/v1".into(),
            model: "planner".into(),
            api_key_env: None,
            timeout_ms: 1_000,
        },
        kb.categories().to_vec(),
        vec![Demonstration {
            query: "papers by Alice Smith".into(),
            metapath: "Author -> Paper".into(),
            restriction: [("Author".to_string(), "Alice Smith".to_string())].into(),
        }],
    );
    println!("\n{}\n", planner.system_prompt());
    let reply = r#"Metapath: "Institution -> Author -> Paper, Field-of-Study -> Paper", Restriction: {"Institution": "Point Park University", "Field-of-Study": "Stellar Populations"}"#;
    println!("parsed reply: {:?}", parse_planner_output(reply).plan().map(serialize_plan));
    println!("garbled reply: {:?}", parse_planner_output("Metapath: nope").reason());
}
