//! BM25 and hashed-embedding scores over node documents.
//!
//! Usage: cargo run --example scoring

use mixtrail::fixtures::{f1, F1_QUERY};
use mixtrail::kb::{NodeRecord, Tgkb};
use mixtrail::scorer::{expand_query, topk_by_category, Bm25Index, HashedEmbeddingScorer, DEFAULT_EMBED_DIM, DEFAULT_EMBED_SEED};

fn main() {
    let kb = Tgkb::from_records(
        vec![
            NodeRecord::new("d1", "Doc", "graph retrieval with text"),
            NodeRecord::new("d2", "Doc", "text text retrieval"),
            NodeRecord::new("d3", "Doc", "neural networks"),
        ],
        vec![],
    )
    .unwrap();
    let bm25 = Bm25Index::build(&kb);
    println!("N={} avgdl={:.3} k1={} b={}", bm25.n_docs(), bm25.avg_doc_len(), bm25.k1(), bm25.b());
    for id in ["d1", "d2", "d3"] {
        println!("  bm25(\"text retrieval\", {id}) = {:.6}", bm25.bm25_score(&kb, "text retrieval", id).unwrap());
    }

    let kb = f1();
    let bm25 = Bm25Index::build(&kb);
    let query = expand_query(F1_QUERY, Some("Point Park University"));
    println!("\nexpanded query: {query}");
    for hit in topk_by_category(&kb, &bm25, &query, "Institution", 3) {
        println!("  {} {:.4}", kb.id(hit.node), hit.score);
    }

    let embed = HashedEmbeddingScorer::build(&kb, DEFAULT_EMBED_DIM, DEFAULT_EMBED_SEED);
    for id in ["P1", "P2"] {
        println!("cosine(query, {id}) = {:.4}", embed.embed_score(&kb, F1_QUERY, id).unwrap());
    }
}
