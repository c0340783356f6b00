//! Planning graphs: typed category paths with optional textual restrictions.
//!
//! A plan is written as one line of text. Paths are separated by `;`, nodes
//! by `->`, and a restriction sits in angle brackets directly after its
//! category:
//!
//! ```text
//! Field-of-Study<Stellar Populations> -> Paper ; Institution<Point Park University> -> Author -> Paper
//! ```
//!
//! Converging chains such as `A -> C <- B` are split into one path per
//! source, each reading towards the shared target. `\<`, `\>`, `\;` and `\\`
//! escape the special characters. The canonical form puts single spaces
//! around `->` and `;` and sorts paths lexicographically.

mod dsl;
pub mod llm;
pub mod template;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::kb::Tgkb;

pub use dsl::parse_plan;
pub use llm::{parse_planner_output, Demonstration, LlmEndpoint, LlmPlanner};
pub use template::{plan_template, TemplatePlanner, TemplateRule};

pub const DEFAULT_MAX_PATH_LEN: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathNode {
    category: String,
    restriction: Option<String>,
}

impl PathNode {
    /// Trims both fields. A restriction that is blank after trimming is rejected.
    pub fn new(category: &str, restriction: Option<&str>) -> Result<Self, String> {
        let category = category.trim();
        if category.is_empty() {
            return Err("empty category".into());
        }
        let restriction = match restriction.map(str::trim) {
            Some("") => return Err("empty restriction".into()),
            other => other.map(str::to_string),
        };
        Ok(Self {
            category: category.to_string(),
            restriction,
        })
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn restriction(&self) -> Option<&str> {
        self.restriction.as_deref()
    }
}

/// An ordered category chain; the last node is the target.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReasoningPath {
    nodes: Vec<PathNode>,
}

impl ReasoningPath {
    pub fn new(nodes: Vec<PathNode>) -> Result<Self, String> {
        if nodes.is_empty() {
            return Err("empty path".into());
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[PathNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn target(&self) -> &PathNode {
        self.nodes.last().expect("paths are non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PlanningGraph {
    paths: Vec<ReasoningPath>,
}

impl PlanningGraph {
    /// Deduplicates and sorts paths into canonical order. All paths must end
    /// in the same category.
    pub fn new(paths: Vec<ReasoningPath>) -> Result<Self, String> {
        let Some(first) = paths.first() else {
            return Err("empty plan".into());
        };
        let target = first.target().category().to_string();
        if paths.iter().any(|p| p.target().category() != target) {
            return Err("mixed target categories".into());
        }
        let mut keyed: Vec<(String, ReasoningPath)> = paths.into_iter().map(|p| (p.to_string(), p)).collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        keyed.dedup_by(|a, b| a.0 == b.0);
        Ok(Self {
            paths: keyed.into_iter().map(|(_, p)| p).collect(),
        })
    }

    pub fn paths(&self) -> &[ReasoningPath] {
        &self.paths
    }

    pub fn target_category(&self) -> &str {
        self.paths[0].target().category()
    }

    /// Category-initial signature such as `F→P;I→A→P`, used to group queries
    /// by logical pattern.
    pub fn signature(&self) -> String {
        self.paths
            .iter()
            .map(|p| {
                p.nodes()
                    .iter()
                    .map(|n| n.category().chars().next().unwrap_or('?').to_string())
                    .collect::<Vec<_>>()
                    .join("→")
            })
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Same graph with every restriction removed.
    pub fn without_restrictions(&self) -> PlanningGraph {
        let paths = self
            .paths
            .iter()
            .map(|p| ReasoningPath {
                nodes: p
                    .nodes
                    .iter()
                    .map(|n| PathNode {
                        category: n.category.clone(),
                        restriction: None,
                    })
                    .collect(),
            })
            .collect();
        PlanningGraph::new(paths).expect("same targets as self")
    }
}

pub(crate) fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        if matches!(ch, '\\' | '<' | '>' | ';') {
            out.push('\\');
        }
        out.push(ch);
    }
    out
}

impl fmt::Display for PathNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&escape(&self.category))?;
        if let Some(r) = &self.restriction {
            write!(f, "<{}>", escape(r))?;
        }
        Ok(())
    }
}

impl fmt::Display for ReasoningPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.nodes.iter().enumerate() {
            if i > 0 {
                f.write_str(" -> ")?;
            }
            write!(f, "{n}")?;
        }
        Ok(())
    }
}

impl fmt::Display for PlanningGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.paths.iter().enumerate() {
            if i > 0 {
                f.write_str(" ; ")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

/// Canonical DSL text for a plan.
pub fn serialize_plan(g: &PlanningGraph) -> String {
    g.to_string()
}

/// Result of any planner. Failures never abort the pipeline; they select
/// the plan-free textual fallback downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PlanOutcome {
    Valid {
        #[serde(with = "plan_text")]
        plan: PlanningGraph,
    },
    Invalid {
        reason: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        raw: Option<String>,
    },
}

mod plan_text {
    use super::{parse_plan, PlanOutcome, PlanningGraph};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(g: &PlanningGraph, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&g.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<PlanningGraph, D::Error> {
        let text = String::deserialize(d)?;
        match parse_plan(&text) {
            PlanOutcome::Valid { plan } => Ok(plan),
            PlanOutcome::Invalid { reason, .. } => Err(D::Error::custom(reason)),
        }
    }
}

impl PlanOutcome {
    pub fn valid(plan: PlanningGraph) -> Self {
        PlanOutcome::Valid { plan }
    }

    pub fn invalid(reason: impl Into<String>) -> Self {
        PlanOutcome::Invalid {
            reason: reason.into(),
            raw: None,
        }
    }

    pub fn invalid_with_raw(reason: impl Into<String>, raw: impl Into<String>) -> Self {
        PlanOutcome::Invalid {
            reason: reason.into(),
            raw: Some(raw.into()),
        }
    }

    pub fn plan(&self) -> Option<&PlanningGraph> {
        match self {
            PlanOutcome::Valid { plan } => Some(plan),
            PlanOutcome::Invalid { .. } => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, PlanOutcome::Valid { .. })
    }

    pub fn reason(&self) -> Option<&str> {
        match self {
            PlanOutcome::Valid { .. } => None,
            PlanOutcome::Invalid { reason, .. } => Some(reason),
        }
    }
}

/// Checks a plan against the knowledge-base schema and the path length cap.
pub fn validate_plan(g: &PlanningGraph, kb: &Tgkb, max_path_len: usize) -> PlanOutcome {
    for path in g.paths() {
        for node in path.nodes() {
            if !kb.has_category(node.category()) {
                return PlanOutcome::invalid(format!("unknown category {}", node.category()));
            }
        }
        if path.len() > max_path_len {
            return PlanOutcome::invalid("path too long");
        }
    }
    PlanOutcome::valid(g.clone())
}

/// Validates an outcome in place of a plan; invalid outcomes pass through.
pub fn validate_outcome(outcome: PlanOutcome, kb: &Tgkb, max_path_len: usize) -> PlanOutcome {
    match outcome {
        PlanOutcome::Valid { plan } => validate_plan(&plan, kb, max_path_len),
        invalid => invalid,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn valid(text: &str) -> PlanningGraph {
        match parse_plan(text) {
            PlanOutcome::Valid { plan } => plan,
            other => panic!("{text:?} -> {other:?}"),
        }
    }

    #[test]
    fn validate_against_f1() {
        let kb = fixtures::f1();
        let g = valid(fixtures::F1_PLAN);
        assert_eq!(validate_plan(&g, &kb, 3), PlanOutcome::valid(g.clone()));

        let g = valid("Venue -> Paper");
        assert_eq!(validate_plan(&g, &kb, 3).reason(), Some("unknown category Venue"));

        let g = valid("Paper -> Author -> Paper -> Author -> Paper");
        assert_eq!(validate_plan(&g, &kb, 3).reason(), Some("path too long"));
        assert!(validate_plan(&g, &kb, 5).is_valid());
    }

    #[test]
    fn signature_uses_category_initials() {
        assert_eq!(valid(fixtures::F1_PLAN).signature(), "F→P;I→A→P");
    }

    #[test]
    fn outcome_serializes_as_plan_text() {
        let o = PlanOutcome::valid(valid("Author<a\\;b> -> Paper"));
        let json = serde_json::to_string(&o).unwrap();
        assert_eq!(json, r#"{"status":"valid","plan":"Author<a\\;b> -> Paper"}"#);
        assert_eq!(serde_json::from_str::<PlanOutcome>(&json).unwrap(), o);
    }

    #[test]
    fn restriction_must_be_non_blank() {
        assert!(PathNode::new("Paper", Some("  ")).is_err());
        assert!(PathNode::new(" ", None).is_err());
        assert_eq!(PathNode::new(" Paper ", Some(" x ")).unwrap().restriction(), Some("x"));
    }
}
