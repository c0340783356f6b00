//! The text-rich graph knowledge base.
//!
//! A [`Tgkb`] holds typed nodes, each carrying a category and a free-text
//! document, connected by relation-labelled edges. Edges are undirected for
//! traversal. Node ids are interned in ascending id order, so every id list
//! handed out by the store is sorted and iteration order is reproducible.
//!
//! The on-disk format is two line-delimited JSON files:
//!
//! ```text
//! nodes.jsonl  {"id": "P1", "category": "Paper", "text": "...", "meta": {...}}
//! edges.jsonl  {"src": "A1", "dst": "P1", "rel": "writes"}
//! ```

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense handle for a node. Ordering matches ascending string id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeIdx(pub u32);

impl NodeIdx {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Dense handle for a category. Ordering matches ascending category name order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CategoryIdx(pub u32);

impl CategoryIdx {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("{file} line {line}: malformed record: {message}")]
    Malformed {
        file: &'static str,
        line: usize,
        message: String,
    },
    #[error("duplicate node id {0}")]
    DuplicateNode(String),
    #[error("unknown node id {id}{}", line.map(|l| format!(" (edges line {l})")).unwrap_or_default())]
    UnknownNode { id: String, line: Option<usize> },
    #[error("node {0} has an empty category")]
    EmptyCategory(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub category: String,
    #[serde(rename = "text")]
    pub document: String,
    #[serde(rename = "meta", default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<BTreeMap<String, String>>,
}

impl NodeRecord {
    pub fn new(id: impl Into<String>, category: impl Into<String>, document: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            category: category.into(),
            document: document.into(),
            metadata: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: String,
    pub dst: String,
    #[serde(rename = "rel", default, skip_serializing_if = "String::is_empty")]
    pub relation: String,
}

impl EdgeRecord {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, relation: impl Into<String>) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            relation: relation.into(),
        }
    }
}

/// Immutable, fully indexed knowledge base.
#[derive(Debug, Clone, PartialEq)]
pub struct Tgkb {
    nodes: Vec<NodeRecord>,
    id_lookup: HashMap<String, NodeIdx>,
    categories: Vec<String>,
    category_lookup: HashMap<String, CategoryIdx>,
    node_category: Vec<CategoryIdx>,
    category_members: Vec<Vec<NodeIdx>>,
    // Per node: neighbors sorted by (category, node), and the slice bounds of
    // each category inside that list.
    neighbors: Vec<Vec<NodeIdx>>,
    neighbor_ranges: Vec<Vec<(CategoryIdx, u32, u32)>>,
    edges: Vec<(NodeIdx, NodeIdx, String)>,
}

impl Default for Tgkb {
    fn default() -> Self {
        Self::from_records(Vec::new(), Vec::new()).expect("empty kb is valid")
    }
}

impl Tgkb {
    /// Builds and indexes a knowledge base from in-memory records.
    pub fn from_records(mut nodes: Vec<NodeRecord>, edges: Vec<EdgeRecord>) -> Result<Self, KbError> {
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in nodes.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(KbError::DuplicateNode(pair[0].id.clone()));
            }
        }
        if let Some(n) = nodes.iter().find(|n| n.category.is_empty()) {
            return Err(KbError::EmptyCategory(n.id.clone()));
        }

        let id_lookup: HashMap<String, NodeIdx> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), NodeIdx(i as u32)))
            .collect();

        let mut categories: Vec<String> = nodes.iter().map(|n| n.category.clone()).collect();
        categories.sort();
        categories.dedup();
        let category_lookup: HashMap<String, CategoryIdx> = categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), CategoryIdx(i as u32)))
            .collect();
        let node_category: Vec<CategoryIdx> = nodes.iter().map(|n| category_lookup[&n.category]).collect();
        let mut category_members = vec![Vec::new(); categories.len()];
        for (i, c) in node_category.iter().enumerate() {
            category_members[c.index()].push(NodeIdx(i as u32));
        }

        let mut resolved = Vec::with_capacity(edges.len());
        for e in edges {
            let resolve = |id: &str| {
                id_lookup.get(id).copied().ok_or_else(|| KbError::UnknownNode {
                    id: id.to_string(),
                    line: None,
                })
            };
            let s = resolve(&e.src)?;
            let d = resolve(&e.dst)?;
            resolved.push((s, d, e.relation));
        }
        resolved.sort();

        let mut neighbors: Vec<Vec<NodeIdx>> = vec![Vec::new(); nodes.len()];
        for (s, d, _) in &resolved {
            neighbors[s.index()].push(*d);
            if s != d {
                neighbors[d.index()].push(*s);
            }
        }
        let mut neighbor_ranges = Vec::with_capacity(nodes.len());
        for list in neighbors.iter_mut() {
            list.sort_by_key(|u| (node_category[u.index()], *u));
            list.dedup();
            let mut ranges: Vec<(CategoryIdx, u32, u32)> = Vec::new();
            for (pos, u) in list.iter().enumerate() {
                let c = node_category[u.index()];
                match ranges.last_mut() {
                    Some(last) if last.0 == c => last.2 = pos as u32 + 1,
                    _ => ranges.push((c, pos as u32, pos as u32 + 1)),
                }
            }
            neighbor_ranges.push(ranges);
        }

        Ok(Self {
            nodes,
            id_lookup,
            categories,
            category_lookup,
            node_category,
            category_members,
            neighbors,
            neighbor_ranges,
            edges: resolved,
        })
    }

    /// Parses the line-delimited JSON node and edge streams. Blank lines are skipped.
    pub fn load<N: BufRead, E: BufRead>(nodes_source: N, edges_source: E) -> Result<Self, KbError> {
        let mut nodes = Vec::new();
        for (i, line) in nodes_source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: NodeRecord = serde_json::from_str(&line).map_err(|e| KbError::Malformed {
                file: "nodes",
                line: i + 1,
                message: e.to_string(),
            })?;
            nodes.push(rec);
        }
        let mut edges = Vec::new();
        let mut edge_lines = Vec::new();
        for (i, line) in edges_source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EdgeRecord = serde_json::from_str(&line).map_err(|e| KbError::Malformed {
                file: "edges",
                line: i + 1,
                message: e.to_string(),
            })?;
            edges.push(rec);
            edge_lines.push(i + 1);
        }
        // Report unknown ids with their source line before indexing.
        let known: std::collections::HashSet<&str> = nodes.iter().map(|n| n.id.as_str()).collect();
        for (e, line) in edges.iter().zip(&edge_lines) {
            for id in [&e.src, &e.dst] {
                if !known.contains(id.as_str()) {
                    return Err(KbError::UnknownNode {
                        id: id.clone(),
                        line: Some(*line),
                    });
                }
            }
        }
        Self::from_records(nodes, edges)
    }

    /// Writes nodes sorted by id, one JSON object per line.
    pub fn write_nodes<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for n in &self.nodes {
            serde_json::to_writer(&mut out, n)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Writes edges sorted by (src, dst, rel), one JSON object per line.
    pub fn write_edges<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in self.edge_records() {
            serde_json::to_writer(&mut out, &e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The schema: every category present, sorted.
    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn has_category(&self, category: &str) -> bool {
        self.category_lookup.contains_key(category)
    }

    pub fn category_idx(&self, category: &str) -> Option<CategoryIdx> {
        self.category_lookup.get(category).copied()
    }

    pub fn category_name(&self, c: CategoryIdx) -> &str {
        &self.categories[c.index()]
    }

    pub fn idx(&self, id: &str) -> Option<NodeIdx> {
        self.id_lookup.get(id).copied()
    }

    pub fn node(&self, v: NodeIdx) -> &NodeRecord {
        &self.nodes[v.index()]
    }

    pub fn node_by_id(&self, id: &str) -> Option<&NodeRecord> {
        self.idx(id).map(|v| self.node(v))
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn id(&self, v: NodeIdx) -> &str {
        &self.nodes[v.index()].id
    }

    pub fn document(&self, v: NodeIdx) -> &str {
        &self.nodes[v.index()].document
    }

    pub fn category_of(&self, v: NodeIdx) -> CategoryIdx {
        self.node_category[v.index()]
    }

    /// All nodes of a category, ascending.
    pub fn members(&self, c: CategoryIdx) -> &[NodeIdx] {
        &self.category_members[c.index()]
    }

    /// All nodes of a named category; empty for categories not in the schema.
    pub fn members_of(&self, category: &str) -> &[NodeIdx] {
        match self.category_idx(category) {
            Some(c) => self.members(c),
            None => &[],
        }
    }

    /// Every neighbor of `v`, sorted by (category, node).
    pub fn all_neighbors(&self, v: NodeIdx) -> &[NodeIdx] {
        &self.neighbors[v.index()]
    }

    /// Neighbors of `v` whose category is `c`, ascending.
    pub fn neighbors_in(&self, v: NodeIdx, c: CategoryIdx) -> &[NodeIdx] {
        let ranges = &self.neighbor_ranges[v.index()];
        match ranges.binary_search_by_key(&c, |r| r.0) {
            Ok(i) => {
                let (_, start, end) = ranges[i];
                &self.neighbors[v.index()][start as usize..end as usize]
            }
            Err(_) => &[],
        }
    }

    /// String-id form of [`Tgkb::neighbors_in`]. Unknown categories yield an empty list.
    pub fn neighbors_of_category(&self, id: &str, category: &str) -> Result<Vec<&str>, KbError> {
        let v = self.idx(id).ok_or_else(|| KbError::UnknownNode {
            id: id.to_string(),
            line: None,
        })?;
        let Some(c) = self.category_idx(category) else {
            return Ok(Vec::new());
        };
        Ok(self.neighbors_in(v, c).iter().map(|u| self.id(*u)).collect())
    }

    /// Raw edge list in save order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeIdx, NodeIdx, &str)> + '_ {
        self.edges.iter().map(|(s, d, r)| (*s, *d, r.as_str()))
    }

    pub fn edge_records(&self) -> impl Iterator<Item = EdgeRecord> + '_ {
        self.edges
            .iter()
            .map(|(s, d, r)| EdgeRecord::new(self.id(*s), self.id(*d), r.clone()))
    }

    pub fn validate(&self) -> ValidationReport {
        let isolated = (0..self.len())
            .filter(|&i| self.neighbors[i].is_empty())
            .map(|i| self.nodes[i].id.clone())
            .collect();
        let empty_documents = self
            .nodes
            .iter()
            .filter(|n| n.document.trim().is_empty())
            .map(|n| n.id.clone())
            .collect();
        let category_counts = self
            .categories
            .iter()
            .zip(&self.category_members)
            .map(|(c, m)| (c.clone(), m.len()))
            .collect();
        ValidationReport {
            isolated,
            empty_documents,
            category_counts,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub isolated: Vec<String>,
    pub empty_documents: Vec<String>,
    pub category_counts: BTreeMap<String, usize>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.isolated.is_empty() && self.empty_documents.is_empty() && self.category_counts.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn empty_kb() {
        let kb = Tgkb::load(&b""[..], &b""[..]).unwrap();
        assert!(kb.is_empty());
        assert!(kb.categories().is_empty());
        assert!(kb.validate().is_empty());
    }

    #[test]
    fn f1_schema_and_neighbors() {
        let kb = fixtures::f1();
        assert_eq!(kb.categories(), ["Author", "Field-of-Study", "Institution", "Paper"]);
        assert_eq!(kb.neighbors_of_category("I1", "Author").unwrap(), ["A1", "A2"]);
        assert!(kb.neighbors_of_category("I1", "Paper").unwrap().is_empty());
        assert_eq!(kb.neighbors_of_category("A1", "Paper").unwrap(), ["P1"]);
        assert_eq!(kb.neighbors_of_category("P1", "Author").unwrap(), ["A1"]);
        assert!(kb.neighbors_of_category("I1", "Venue").unwrap().is_empty());
        assert!(matches!(
            kb.neighbors_of_category("ZZ", "Paper"),
            Err(KbError::UnknownNode { .. })
        ));
    }

    #[test]
    fn unknown_edge_endpoint_reports_line() {
        let nodes = br#"{"id":"I1","category":"Institution","text":"x"}"#;
        let edges = b"\n{\"src\":\"I1\",\"dst\":\"X9\"}\n";
        let err = Tgkb::load(&nodes[..], &edges[..]).unwrap_err();
        assert!(err.to_string().contains("unknown node id X9"), "{err}");
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn malformed_and_duplicate() {
        let nodes = b"{\"id\":\"a\",\"category\":\"C\",\"text\":\"\"}\n{oops\n";
        match Tgkb::load(&nodes[..], &b""[..]) {
            Err(KbError::Malformed { file: "nodes", line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        let nodes = b"{\"id\":\"a\",\"category\":\"C\",\"text\":\"\"}\n{\"id\":\"a\",\"category\":\"C\",\"text\":\"y\"}\n";
        assert!(matches!(
            Tgkb::load(&nodes[..], &b""[..]),
            Err(KbError::DuplicateNode(id)) if id == "a"
        ));
        let nodes = b"{\"id\":\"a\",\"category\":\"\",\"text\":\"\"}\n";
        assert!(matches!(Tgkb::load(&nodes[..], &b""[..]), Err(KbError::EmptyCategory(_))));
    }

    #[test]
    fn validation_report() {
        let kb = fixtures::f1();
        let report = kb.validate();
        assert!(report.isolated.is_empty());
        assert_eq!(report.category_counts["Institution"], 1);
        assert_eq!(report.category_counts["Author"], 2);
        assert_eq!(report.category_counts["Paper"], 2);
        assert_eq!(report.category_counts["Field-of-Study"], 1);

        let kb = Tgkb::from_records(vec![NodeRecord::new("N0", "Thing", "")], vec![]).unwrap();
        let report = kb.validate();
        assert_eq!(report.isolated, ["N0"]);
        assert_eq!(report.empty_documents, ["N0"]);
    }

    #[test]
    fn save_is_sorted_and_stable() {
        let kb = fixtures::f1();
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        kb.write_nodes(&mut nodes).unwrap();
        kb.write_edges(&mut edges).unwrap();
        let first = String::from_utf8(nodes.clone()).unwrap();
        assert!(first.starts_with(r#"{"id":"A1","category":"Author","text":"#));
        let again = Tgkb::load(&nodes[..], &edges[..]).unwrap();
        assert_eq!(again, kb);
        let mut nodes2 = Vec::new();
        again.write_nodes(&mut nodes2).unwrap();
        assert_eq!(nodes, nodes2);
    }

    #[test]
    fn duplicate_edges_and_self_loops_collapse_in_adjacency() {
        let nodes = vec![NodeRecord::new("a", "X", ""), NodeRecord::new("b", "X", "")];
        let edges = vec![
            EdgeRecord::new("a", "b", "r"),
            EdgeRecord::new("b", "a", "s"),
            EdgeRecord::new("a", "a", ""),
        ];
        let kb = Tgkb::from_records(nodes, edges).unwrap();
        assert_eq!(kb.neighbors_of_category("a", "X").unwrap(), ["a", "b"]);
        assert_eq!(kb.neighbors_of_category("b", "X").unwrap(), ["a"]);
        assert_eq!(kb.edges().count(), 3);
    }
}
