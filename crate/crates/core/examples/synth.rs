//! Generate a synthetic text-rich graph benchmark and write it as JSON lines.
//!
//! Usage: cargo run --release --example synth -- [out_dir] [nodes] [text_informativeness]

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use mixtrail::eval::{synth_generate, write_queries, SynthConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = PathBuf::from(args.first().map_or("synth-out", String::as_str));
    let nodes: usize = args.get(1).map_or(2_000, |a| a.parse().expect("nodes"));
    let tau: f64 = args.get(2).map_or(0.5, |a| a.parse().expect("text_informativeness"));

    let cfg = SynthConfig { text_informativeness: tau, ..SynthConfig::scaled(nodes) };
    let data = synth_generate(&cfg).unwrap();
    std::fs::create_dir_all(&dir).unwrap();
    data.kb.write_nodes(BufWriter::new(File::create(dir.join("nodes.jsonl")).unwrap())).unwrap();
    data.kb.write_edges(BufWriter::new(File::create(dir.join("edges.jsonl")).unwrap())).unwrap();
    write_queries(&data.train, BufWriter::new(File::create(dir.join("train_queries.jsonl")).unwrap())).unwrap();
    write_queries(&data.test, BufWriter::new(File::create(dir.join("queries.jsonl")).unwrap())).unwrap();

    for cat in data.kb.categories() {
        println!("{cat}: {}", data.kb.members_of(cat).len());
    }
    for q in data.test.iter().take(3) {
        println!("{}  plan {:?}  answers {:?}", q.text, q.plan.as_deref().unwrap_or(""), q.answers);
    }
    println!("wrote {}", dir.display());
}
