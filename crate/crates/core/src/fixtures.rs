//! Small hand-built knowledge bases used by tests, examples and docs.

use crate::kb::{EdgeRecord, NodeRecord, Tgkb};

/// The query the `f1` fixture is built around.
pub const F1_QUERY: &str =
    "Can you give me publications by Point Park University authors on stellar populations in tidal tails";

/// Gold plan for [`F1_QUERY`] in the plan DSL.
pub const F1_PLAN: &str =
    "Field-of-Study<Stellar Populations> -> Paper ; Institution<Point Park University> -> Author -> Paper";

/// Six-node academic graph: one institution, two authors, two papers and a
/// field of study.
///
/// ```text
/// I1 -- A1 -- P1 -- F1c
///  \
///   A2 -- P2
/// ```
pub fn f1() -> Tgkb {
    let nodes = vec![
        NodeRecord::new("I1", "Institution", "Point Park University"),
        NodeRecord::new("A1", "Author", "Alice Smith"),
        NodeRecord::new("A2", "Author", "Bob Jones"),
        NodeRecord::new("P1", "Paper", "stellar populations in tidal tails"),
        NodeRecord::new("P2", "Paper", "graph neural networks"),
        NodeRecord::new("F1c", "Field-of-Study", "Stellar Populations"),
    ];
    let edges = vec![
        EdgeRecord::new("I1", "A1", "affiliated_with"),
        EdgeRecord::new("I1", "A2", "affiliated_with"),
        EdgeRecord::new("A1", "P1", "writes"),
        EdgeRecord::new("A2", "P2", "writes"),
        EdgeRecord::new("F1c", "P1", "has_topic"),
    ];
    Tgkb::from_records(nodes, edges).expect("fixture is well formed")
}
