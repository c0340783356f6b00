//! Textual relevance scoring between a query and node documents.
//!
//! Two scorers share the [`TextScorer`] trait: an Okapi BM25 index and a
//! signed-hash bag-of-words embedding compared by cosine similarity. Both
//! are immutable after construction and pure in `(index, query, node)`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{NodeIdx, Tgkb};

#[derive(Debug, Error, PartialEq)]
pub enum ScorerError {
    #[error("unknown node id {0}")]
    UnknownNode(String),
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// `query` joined with an optional restriction by a single space.
pub fn expand_query(query: &str, restriction: Option<&str>) -> String {
    match restriction {
        Some(r) => format!("{query} {r}"),
        None => query.to_string(),
    }
}

pub trait TextScorer: Send + Sync {
    fn score(&self, query: &str, v: NodeIdx) -> f64;

    /// Scores many nodes against one query. Implementations may tokenize
    /// the query once.
    fn score_many(&self, query: &str, nodes: &[NodeIdx]) -> Vec<f64> {
        nodes.iter().map(|v| self.score(query, *v)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredNode {
    pub node: NodeIdx,
    pub score: f64,
}

/// Orders by score descending, then node ascending. Signed zeros compare equal.
pub fn rank_order(a: &ScoredNode, b: &ScoredNode) -> std::cmp::Ordering {
    (b.score + 0.0).total_cmp(&(a.score + 0.0)).then(a.node.cmp(&b.node))
}

/// The `k` best of `scored` under [`rank_order`], sorted.
pub fn top_k(mut scored: Vec<ScoredNode>, k: usize) -> Vec<ScoredNode> {
    if k == 0 {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    scored
}

/// Top-`k` nodes of `category` for `query`. Unknown categories give an empty list.
pub fn topk_by_category(kb: &Tgkb, scorer: &dyn TextScorer, query: &str, category: &str, k: usize) -> Vec<ScoredNode> {
    score_pool(scorer, query, kb.members_of(category), k)
}

pub fn score_pool(scorer: &dyn TextScorer, query: &str, pool: &[NodeIdx], k: usize) -> Vec<ScoredNode> {
    let scores = scorer.score_many(query, pool);
    let scored = pool
        .iter()
        .zip(scores)
        .map(|(node, score)| ScoredNode { node: *node, score })
        .collect();
    top_k(scored, k)
}

// ---------------------------------------------------------------------------
// BM25
// ---------------------------------------------------------------------------

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    vocab: HashMap<String, u32>,
    doc_freq: Vec<u32>,
    // per node, (term, count) sorted by term
    term_freq: Vec<Vec<(u32, u32)>>,
    doc_len: Vec<u32>,
    avg_doc_len: f64,
    n_docs: usize,
    k1: f64,
    b: f64,
}

impl Bm25Index {
    pub fn build(kb: &Tgkb) -> Self {
        Self::with_params(kb, DEFAULT_K1, DEFAULT_B)
    }

    pub fn with_params(kb: &Tgkb, k1: f64, b: f64) -> Self {
        assert!(k1 > 0.0 && (0.0..=1.0).contains(&b), "bm25 requires k1 > 0 and 0 <= b <= 1");
        let docs: Vec<Vec<String>> = kb.nodes().iter().map(|n| tokenize(&n.document)).collect();
        // Term ids follow sorted term order so rebuilding is reproducible.
        let terms: BTreeSet<&str> = docs.iter().flatten().map(String::as_str).collect();
        let vocab: HashMap<String, u32> = terms.iter().enumerate().map(|(i, t)| (t.to_string(), i as u32)).collect();

        let mut doc_freq = vec![0u32; vocab.len()];
        let mut term_freq = Vec::with_capacity(docs.len());
        let mut doc_len = Vec::with_capacity(docs.len());
        for tokens in &docs {
            let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
            for t in tokens {
                *counts.entry(vocab[t]).or_default() += 1;
            }
            for term in counts.keys() {
                doc_freq[*term as usize] += 1;
            }
            term_freq.push(counts.into_iter().collect());
            doc_len.push(tokens.len() as u32);
        }
        let n_docs = docs.len();
        let avg_doc_len = if n_docs == 0 {
            0.0
        } else {
            doc_len.iter().map(|&l| l as f64).sum::<f64>() / n_docs as f64
        };
        Self {
            vocab,
            doc_freq,
            term_freq,
            doc_len,
            avg_doc_len,
            n_docs,
            k1,
            b,
        }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Number of documents containing `term` (already tokenized form).
    pub fn doc_freq(&self, term: &str) -> usize {
        self.vocab.get(term).map_or(0, |&t| self.doc_freq[t as usize] as usize)
    }

    pub fn doc_len(&self, v: NodeIdx) -> usize {
        self.doc_len[v.index()] as usize
    }

    fn idf(&self, df: u32) -> f64 {
        let n = self.n_docs as f64;
        let df = df as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Distinct known query terms with their idf. Query-side repeats count once.
    fn prepare(&self, query: &str) -> Vec<(u32, f64)> {
        let terms: BTreeSet<u32> = tokenize(query).iter().filter_map(|t| self.vocab.get(t).copied()).collect();
        terms.into_iter().map(|t| (t, self.idf(self.doc_freq[t as usize]))).collect()
    }

    fn score_prepared(&self, prepared: &[(u32, f64)], v: NodeIdx) -> f64 {
        let tfs = &self.term_freq[v.index()];
        if tfs.is_empty() {
            return 0.0;
        }
        let norm = self.k1 * (1.0 - self.b + self.b * self.doc_len[v.index()] as f64 / self.avg_doc_len);
        prepared
            .iter()
            .filter_map(|&(term, idf)| {
                let i = tfs.binary_search_by_key(&term, |p| p.0).ok()?;
                let tf = tfs[i].1 as f64;
                Some(idf * tf / (tf + norm))
            })
            .fold(0.0, |acc, x| acc + x)
    }

    /// BM25 of `query` against the node with string id `id`.
    pub fn bm25_score(&self, kb: &Tgkb, query: &str, id: &str) -> Result<f64, ScorerError> {
        let v = kb.idx(id).ok_or_else(|| ScorerError::UnknownNode(id.to_string()))?;
        Ok(self.score(query, v))
    }

    /// Summary suitable for writing as a build artifact.
    pub fn summary(&self, kb: &Tgkb) -> Bm25Summary {
        let mut doc_freq = BTreeMap::new();
        for (term, &t) in &self.vocab {
            doc_freq.insert(term.clone(), self.doc_freq[t as usize]);
        }
        Bm25Summary {
            k1: self.k1,
            b: self.b,
            n_docs: self.n_docs,
            avg_doc_len: self.avg_doc_len,
            doc_freq,
            doc_len: kb.nodes().iter().zip(&self.doc_len).map(|(n, &l)| (n.id.clone(), l)).collect(),
        }
    }
}

impl TextScorer for Bm25Index {
    fn score(&self, query: &str, v: NodeIdx) -> f64 {
        self.score_prepared(&self.prepare(query), v)
    }

    fn score_many(&self, query: &str, nodes: &[NodeIdx]) -> Vec<f64> {
        let prepared = self.prepare(query);
        nodes.iter().map(|v| self.score_prepared(&prepared, *v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Summary {
    pub k1: f64,
    pub b: f64,
    pub n_docs: usize,
    pub avg_doc_len: f64,
    pub doc_freq: BTreeMap<String, u32>,
    pub doc_len: BTreeMap<String, u32>,
}

// ---------------------------------------------------------------------------
// Hashed embeddings
// ---------------------------------------------------------------------------

pub const DEFAULT_EMBED_DIM: usize = 256;
pub const DEFAULT_EMBED_SEED: u64 = 0x5eed;

/// Sparse, L2-normalized vector; indices strictly increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec(Vec<(u32, f64)>);

impl SparseVec {
    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.0
    }
}

fn token_hash(token: &str, seed: u64) -> u64 {
    // FNV-1a over the token, then a splitmix64 finalizer mixed with the seed.
    let mut h: u64 = 0xcbf29ce484222325;
    for byte in token.as_bytes() {
        h ^= *byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mut z = h ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashedEmbeddingScorer {
    dim: usize,
    seed: u64,
    docs: Vec<SparseVec>,
}

impl HashedEmbeddingScorer {
    pub fn build(kb: &Tgkb, dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let mut s = Self {
            dim,
            seed,
            docs: Vec::new(),
        };
        s.docs = kb.nodes().iter().map(|n| s.embed(&n.document)).collect();
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Normalized sum of signed one-hot vectors, one per token occurrence.
    pub fn embed(&self, text: &str) -> SparseVec {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for token in tokenize(text) {
            let h = token_hash(&token, self.seed);
            let index = (h % self.dim as u64) as u32;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            *acc.entry(index).or_default() += sign;
        }
        let norm = acc.values().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return SparseVec::default();
        }
        SparseVec(acc.into_iter().filter(|(_, x)| *x != 0.0).map(|(i, x)| (i, x / norm)).collect())
    }

    /// Cosine similarity of two texts; 0 when either embeds to the zero vector.
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        self.embed(a).dot(&self.embed(b))
    }

    pub fn embed_score(&self, kb: &Tgkb, query: &str, id: &str) -> Result<f64, ScorerError> {
        let v = kb.idx(id).ok_or_else(|| ScorerError::UnknownNode(id.to_string()))?;
        Ok(self.score(query, v))
    }
}

impl TextScorer for HashedEmbeddingScorer {
    fn score(&self, query: &str, v: NodeIdx) -> f64 {
        self.embed(query).dot(&self.docs[v.index()])
    }

    fn score_many(&self, query: &str, nodes: &[NodeIdx]) -> Vec<f64> {
        let q = self.embed(query);
        nodes.iter().map(|v| q.dot(&self.docs[v.index()])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    Bm25,
    Hashed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub scorer: ScorerKind,
    pub k1: f64,
    pub b: f64,
    pub dim: usize,
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            scorer: ScorerKind::Bm25,
            k1: DEFAULT_K1,
            b: DEFAULT_B,
            dim: DEFAULT_EMBED_DIM,
            seed: DEFAULT_EMBED_SEED,
        }
    }
}

impl ScorerConfig {
    /// The textual matching scorer selected by this config.
    pub fn build_text_scorer(&self, kb: &Tgkb) -> Box<dyn TextScorer> {
        match self.scorer {
            ScorerKind::Bm25 => Box::new(Bm25Index::with_params(kb, self.k1, self.b)),
            ScorerKind::Hashed => Box::new(HashedEmbeddingScorer::build(kb, self.dim, self.seed)),
        }
    }

    /// The semantic scorer used for initial candidate scores.
    pub fn build_semantic_scorer(&self, kb: &Tgkb) -> HashedEmbeddingScorer {
        HashedEmbeddingScorer::build(kb, self.dim, self.seed)
    }
}
