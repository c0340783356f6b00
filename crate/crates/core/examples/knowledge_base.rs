//! Build a knowledge base from records, round-trip it through JSON lines and query its structure.
//!
//! Usage: cargo run --example knowledge_base

use mixtrail::fixtures::f1;
use mixtrail::kb::{EdgeRecord, NodeRecord, Tgkb};

fn main() {
    let kb = f1();
    println!("{} nodes in categories {:?}", kb.len(), kb.categories());

    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    kb.write_nodes(&mut nodes).unwrap();
    kb.write_edges(&mut edges).unwrap();
    print!("{}", String::from_utf8_lossy(&nodes));

    let reloaded = Tgkb::load(nodes.as_slice(), edges.as_slice()).unwrap();
    assert_eq!(reloaded.nodes(), kb.nodes());
    println!("reloaded {} edges", reloaded.edges().count());

    // Edges are undirected: the paper reaches its author and its field.
    println!("P1 authors: {:?}", kb.neighbors_of_category("P1", "Author").unwrap());
    println!("I1 authors: {:?}", kb.neighbors_of_category("I1", "Author").unwrap());

    let broken = Tgkb::from_records(
        vec![NodeRecord::new("X", "Paper", "orphan"), NodeRecord::new("Y", "Paper", "")],
        vec![],
    )
    .unwrap();
    let report = broken.validate();
    println!("isolated {:?}, empty documents {:?}", report.isolated, report.empty_documents);

    let dangling = Tgkb::from_records(vec![NodeRecord::new("X", "Paper", "x")], vec![EdgeRecord::new("X", "Z", "cites")]);
    println!("dangling edge: {}", dangling.unwrap_err());
}
