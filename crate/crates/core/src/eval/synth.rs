//! Synthetic text-rich graph benchmark.
//!
//! Named categories get documents made of one shared "kind" word (drawn
//! from a small pool, so many nodes share it) followed by distinctive name
//! words. Topical categories get a bag of topic words. Every word is a
//! pseudo-word and the per-category pools are disjoint.
//!
//! Queries are built backwards from a random anchor node of the target
//! category. A text-heavy query (probability `text_informativeness`) names
//! path starts by their shared kind word only and lists several of the
//! anchor's topic words; a structure-heavy query names path starts in full
//! and gives a single topic word. Answers come from the exhaustive oracle.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::QueryRecord;
use super::EvalError;
use crate::kb::{EdgeRecord, NodeIdx, NodeRecord, Tgkb};
use crate::plan::{parse_plan, serialize_plan, PathNode, PlanningGraph, ReasoningPath};
use crate::traversal::BruteForceOracle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    /// Prefix for node ids.
    pub id_prefix: String,
    pub count: usize,
    /// Size of the shared kind-word pool; 0 for no kind word.
    #[serde(default)]
    pub kind_pool: usize,
    /// Distinctive name words per node.
    #[serde(default)]
    pub name_words: usize,
    #[serde(default)]
    pub name_pool: usize,
    /// Topic words per node, drawn from the shared topic vocabulary.
    #[serde(default)]
    pub topic_words: usize,
}

/// Each node of `from` links to between `min` and `max` distinct nodes of `to`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    pub relation: String,
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub categories: Vec<CategorySpec>,
    pub edges: Vec<EdgeSpec>,
    pub topic_vocab: usize,
    /// Plan skeletons without restrictions, e.g. `Institution -> Author -> Paper`.
    pub templates: Vec<String>,
    pub train_queries: usize,
    pub test_queries: usize,
    /// Probability that a query carries its identifying signal in text.
    pub text_informativeness: f64,
    pub max_answers: usize,
    /// Anchor draws per query before it is skipped.
    pub max_attempts: usize,
    /// Topic words in text-heavy and structure-heavy queries.
    pub text_heavy_topics: usize,
    pub structure_heavy_topics: usize,
    pub seed: u64,
}

fn category(name: &str, id_prefix: &str, count: usize, kind_pool: usize, name_words: usize, name_pool: usize, topic_words: usize) -> CategorySpec {
    CategorySpec {
        name: name.into(),
        id_prefix: id_prefix.into(),
        count,
        kind_pool,
        name_words,
        name_pool,
        topic_words,
    }
}

fn edge(from: &str, to: &str, relation: &str, min: usize, max: usize) -> EdgeSpec {
    EdgeSpec {
        from: from.into(),
        to: to.into(),
        relation: relation.into(),
        min,
        max,
    }
}

impl Default for SynthConfig {
    /// Bibliographic schema with 10,000 nodes.
    fn default() -> Self {
        Self {
            categories: vec![
                category("Institution", "I", 200, 10, 2, 120, 0),
                category("Author", "A", 3000, 60, 1, 300, 0),
                category("Paper", "P", 6000, 0, 0, 0, 8),
                category("Field-of-Study", "F", 800, 12, 1, 400, 0),
            ],
            edges: vec![
                edge("Author", "Institution", "affiliated_with", 1, 1),
                edge("Paper", "Author", "written_by", 1, 3),
                edge("Paper", "Field-of-Study", "has_topic", 1, 2),
            ],
            topic_vocab: 300,
            templates: vec![
                "Institution -> Author -> Paper".into(),
                "Author -> Paper".into(),
                "Field-of-Study -> Paper".into(),
                "Institution -> Author -> Paper ; Field-of-Study -> Paper".into(),
            ],
            train_queries: 200,
            test_queries: 200,
            text_informativeness: 0.5,
            max_answers: 20,
            max_attempts: 50,
            text_heavy_topics: 4,
            structure_heavy_topics: 1,
            seed: 1,
        }
    }
}

impl SynthConfig {
    /// Same schema scaled down to roughly `nodes` nodes.
    pub fn scaled(nodes: usize) -> Self {
        let mut cfg = Self::default();
        let total: usize = cfg.categories.iter().map(|c| c.count).sum();
        for c in &mut cfg.categories {
            c.count = (c.count * nodes / total).max(2);
            c.name_pool = c.name_pool.min(c.count.max(8));
        }
        cfg
    }

    fn validate(&self) -> Result<(), EvalError> {
        let names: HashSet<&str> = self.categories.iter().map(|c| c.name.as_str()).collect();
        if names.len() != self.categories.len() {
            return Err(EvalError::Synth("duplicate category".into()));
        }
        for e in &self.edges {
            for c in [&e.from, &e.to] {
                if !names.contains(c.as_str()) {
                    return Err(EvalError::Synth(format!("edge references unknown category {c}")));
                }
            }
            if e.min > e.max {
                return Err(EvalError::Synth(format!("edge {} -> {} has min > max", e.from, e.to)));
            }
        }
        for t in &self.templates {
            let g = parse_plan(t);
            let g = g.plan().ok_or_else(|| EvalError::Synth(format!("bad template {t}")))?;
            for p in g.paths() {
                for n in p.nodes() {
                    if !names.contains(n.category()) {
                        return Err(EvalError::Synth(format!("template {t} uses unknown category {}", n.category())));
                    }
                }
            }
        }
        if !(0.0..=1.0).contains(&self.text_informativeness) {
            return Err(EvalError::Synth("text_informativeness must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub kb: Tgkb,
    pub train: Vec<QueryRecord>,
    pub test: Vec<QueryRecord>,
}

const CONSONANTS: &[u8] = b"bcdfghjklmnprstvwz";
const VOWELS: &[u8] = b"aeiou";

/// Draws `n` fresh pseudo-words not yet in `used`.
fn word_pool(rng: &mut ChaCha8Rng, n: usize, used: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
            w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
        }
        if rng.gen_bool(0.5) {
            w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
        }
        if used.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

struct NodeText {
    kind: Option<String>,
    name: Vec<String>,
    topics: Vec<String>,
}

impl NodeText {
    fn document(&self) -> String {
        self.kind
            .iter()
            .chain(&self.name)
            .chain(&self.topics)
            .cloned()
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn full_name(&self) -> String {
        self.kind.iter().chain(&self.name).cloned().collect::<Vec<_>>().join(" ")
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset, EvalError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut used = HashSet::new();
    let topics = word_pool(&mut rng, cfg.topic_vocab, &mut used);

    let mut records = Vec::new();
    let mut texts: BTreeMap<String, NodeText> = BTreeMap::new();
    let mut ids_by_cat: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for spec in &cfg.categories {
        let kinds = word_pool(&mut rng, spec.kind_pool, &mut used);
        let names = word_pool(&mut rng, if spec.name_words > 0 { spec.name_pool.max(1) } else { 0 }, &mut used);
        let width = spec.count.max(1).to_string().len();
        let mut ids = Vec::with_capacity(spec.count);
        for i in 0..spec.count {
            let id = format!("{}{:0width$}", spec.id_prefix, i);
            let text = NodeText {
                kind: (!kinds.is_empty()).then(|| kinds[rng.gen_range(0..kinds.len())].clone()),
                name: (0..spec.name_words).map(|_| names[rng.gen_range(0..names.len())].clone()).collect(),
                topics: topics
                    .choose_multiple(&mut rng, spec.topic_words.min(topics.len()))
                    .cloned()
                    .collect(),
            };
            records.push(NodeRecord::new(id.clone(), spec.name.clone(), text.document()));
            texts.insert(id.clone(), text);
            ids.push(id);
        }
        ids_by_cat.insert(spec.name.as_str(), ids);
    }

    let mut edges = Vec::new();
    for spec in &cfg.edges {
        let targets = &ids_by_cat[spec.to.as_str()];
        if targets.is_empty() {
            continue;
        }
        for src in &ids_by_cat[spec.from.as_str()] {
            let n = rng.gen_range(spec.min..=spec.max).min(targets.len());
            for dst in targets.choose_multiple(&mut rng, n) {
                edges.push(EdgeRecord::new(src.clone(), dst.clone(), spec.relation.clone()));
            }
        }
    }
    let kb = Tgkb::from_records(records, edges)?;

    let skeletons: Vec<PlanningGraph> = cfg
        .templates
        .iter()
        .filter_map(|t| parse_plan(t).plan().cloned())
        .collect();
    let oracle = BruteForceOracle::new(&kb);
    let make = |prefix: &str, n: usize, rng: &mut ChaCha8Rng| {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let id = format!("{prefix}{i:04}");
            match sample_query(&kb, &texts, &oracle, &skeletons, cfg, rng, &id) {
                Some(q) => out.push(q),
                None => log::warn!("skipping {id}: no satisfiable anchor in {} attempts", cfg.max_attempts),
            }
        }
        out
    };
    let train = make("train-", cfg.train_queries, &mut rng);
    let test = make("q", cfg.test_queries, &mut rng);
    Ok(SynthDataset { kb, train, test })
}

fn sample_query(
    kb: &Tgkb,
    texts: &BTreeMap<String, NodeText>,
    oracle: &BruteForceOracle,
    skeletons: &[PlanningGraph],
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    id: &str,
) -> Option<QueryRecord> {
    if skeletons.is_empty() {
        return None;
    }
    let skeleton = &skeletons[rng.gen_range(0..skeletons.len())];
    let text_heavy = rng.gen_bool(cfg.text_informativeness);
    for _ in 0..cfg.max_attempts {
        let targets = kb.members_of(skeleton.target_category());
        if targets.is_empty() {
            return None;
        }
        let anchor = targets[rng.gen_range(0..targets.len())];
        let anchor_topics = &texts[kb.id(anchor)].topics;
        let n_topics = if text_heavy {
            cfg.text_heavy_topics
        } else {
            cfg.structure_heavy_topics
        };
        let topic_words: Vec<String> = anchor_topics.choose_multiple(rng, n_topics.min(anchor_topics.len())).cloned().collect();
        let topic = (!topic_words.is_empty()).then(|| topic_words.join(" "));

        let mut paths = Vec::new();
        let mut phrases = Vec::new();
        let mut ok = true;
        for path in skeleton.paths() {
            let Some(start) = walk_back(kb, path, anchor, rng) else {
                ok = false;
                break;
            };
            let start_text = &texts[kb.id(start)];
            let restriction = if text_heavy {
                start_text.kind.clone().unwrap_or_else(|| start_text.full_name())
            } else {
                start_text.full_name()
            };
            let restriction = (!restriction.is_empty()).then_some(restriction);
            let last = path.len() - 1;
            let nodes = path
                .nodes()
                .iter()
                .enumerate()
                .map(|(l, n)| {
                    let r = match l {
                        0 if last > 0 => restriction.as_deref(),
                        l if l == last => topic.as_deref(),
                        _ => None,
                    };
                    PathNode::new(n.category(), r).expect("non-empty category and restriction")
                })
                .collect();
            if path.len() > 1 {
                if let Some(r) = &restriction {
                    phrases.push(format!("the {} {}", path.nodes()[0].category().to_lowercase(), r));
                }
            }
            paths.push(ReasoningPath::new(nodes).expect("non-empty path"));
        }
        if !ok {
            continue;
        }
        let plan = PlanningGraph::new(paths).expect("shared target");
        let answers: BTreeSet<String> = oracle.retrieve(&plan).into_iter().map(|v| kb.id(v).to_string()).collect();
        if answers.is_empty() || answers.len() > cfg.max_answers {
            continue;
        }
        let target = skeleton.target_category().to_lowercase();
        let mut text = format!("Which {target} entries are linked to {}", phrases.join(" and "));
        if let Some(t) = &topic {
            text.push_str(&format!(" and mention {t}"));
        }
        text.push('?');
        return Some(QueryRecord {
            id: id.to_string(),
            text,
            answers,
            plan: Some(serialize_plan(&plan)),
        });
    }
    None
}

/// A random walk from `anchor` back to the start of `path`, following its
/// categories in reverse.
fn walk_back(kb: &Tgkb, path: &crate::plan::ReasoningPath, anchor: NodeIdx, rng: &mut ChaCha8Rng) -> Option<NodeIdx> {
    let mut current = anchor;
    for node in path.nodes().iter().rev().skip(1) {
        let cat = kb.category_idx(node.category())?;
        let options = kb.neighbors_in(current, cat);
        current = *options.choose(rng)?;
    }
    Some(current)
}
