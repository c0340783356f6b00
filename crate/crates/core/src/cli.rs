//! Command-line front end. Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{EngineConfig, PlannerMode};
use crate::eval::{
    evaluate, read_queries, synth_generate, write_queries, AblationRun, Indexes, Pipeline, Planner, QueryRecord, Ranker,
};
use crate::kb::Tgkb;
use crate::plan::{validate_outcome, Demonstration, LlmPlanner, PlanOutcome, TemplatePlanner, TemplateRule};
use crate::reranker::{train, RerankerModel};
use crate::scorer::Bm25Index;

#[derive(Debug, Parser)]
#[command(name = "mixtrail", version, about = "Hybrid structural and textual retrieval over graph knowledge bases")]
pub struct Cli {
    /// JSON engine config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-query and per-path parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Sets every named seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Config override, e.g. `--set traversal.per_layer_text=0`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Node file, overriding `kb.nodes`.
    #[arg(long, global = true)]
    pub nodes: Option<PathBuf>,
    /// Edge file, overriding `kb.edges`.
    #[arg(long, global = true)]
    pub edges: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and validate a knowledge base; write canonical files and index statistics.
    Build,
    /// Produce plans for queries.
    Plan(QueryArgs),
    /// Retrieve ranked candidates as JSON lines.
    Retrieve {
        #[command(flatten)]
        input: QueryArgs,
        /// Results per query.
        #[arg(long)]
        k: Option<usize>,
        /// Reranker checkpoint; enables reranking.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train a reranker checkpoint.
    Train {
        /// Training queries, overriding `train_queries`.
        #[arg(long)]
        queries: Option<PathBuf>,
    },
    /// Evaluate a pipeline and write a metrics report.
    Eval {
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Rank by exhaustive retrieval over the plan.
        #[arg(long)]
        oracle: bool,
    },
    /// Train and evaluate each configured variant and feature mask.
    Ablate,
    /// Generate a synthetic knowledge base with train and test queries.
    Synth,
}

#[derive(Debug, clap::Args)]
pub struct QueryArgs {
    /// A single query text.
    #[arg(long, conflicts_with = "queries")]
    pub query: Option<String>,
    /// Plan for `--query`, in the plan language.
    #[arg(long, requires = "query")]
    pub plan: Option<String>,
    /// Queries file, overriding `queries`.
    #[arg(long)]
    pub queries: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
    /// Standard output was closed by the reader.
    Closed,
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
            CliError::Closed => 0,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
            CliError::Closed => f.write_str("output closed"),
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(CliError::Closed) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => EngineConfig::load(path).map_err(CliError::Usage)?,
        None => EngineConfig::default(),
    };
    for o in &cli.overrides {
        cfg.set(o).map_err(CliError::Usage)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(n) = &cli.nodes {
        cfg.kb.nodes = Some(n.clone());
    }
    if let Some(e) = &cli.edges {
        cfg.kb.edges = Some(e.clone());
    }
    cfg.validate().map_err(CliError::Usage)?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build().map_err(runtime)?;
    pool.install(|| dispatch(&cli.command, &cfg))
}

fn dispatch(command: &Command, cfg: &EngineConfig) -> Result<(), CliError> {
    match command {
        Command::Build => cmd_build(cfg),
        Command::Plan(input) => cmd_plan(cfg, input),
        Command::Retrieve { input, k, model } => cmd_retrieve(cfg, input, *k, model.as_deref()),
        Command::Train { queries } => cmd_train(cfg, queries.as_deref()),
        Command::Eval { queries, model, oracle } => cmd_eval(cfg, queries.as_deref(), model.as_deref(), *oracle),
        Command::Ablate => cmd_ablate(cfg),
        Command::Synth => cmd_synth(cfg),
    }
}

fn existing(path: Option<&Path>, what: &str) -> Result<PathBuf, CliError> {
    match path {
        None => Err(CliError::Usage(format!("missing input: no {what} configured"))),
        Some(p) if !p.is_file() => Err(CliError::Usage(format!("missing input: {what} {}", p.display()))),
        Some(p) => Ok(p.to_path_buf()),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_kb(cfg: &EngineConfig) -> Result<Tgkb, CliError> {
    let nodes = existing(cfg.kb.nodes.as_deref(), "nodes file")?;
    let nodes = open(&nodes)?;
    let kb = match cfg.kb.edges.as_deref() {
        Some(_) => {
            let edges = existing(cfg.kb.edges.as_deref(), "edges file")?;
            Tgkb::load(nodes, open(&edges)?)
        }
        None => Tgkb::load(nodes, std::io::empty()),
    };
    kb.map_err(runtime)
}

fn load_queries(path: Option<&Path>) -> Result<Vec<QueryRecord>, CliError> {
    let path = existing(path, "queries file")?;
    read_queries(open(&path)?).map_err(runtime)
}

fn single_or_file(cfg: &EngineConfig, input: &QueryArgs) -> Result<Vec<QueryRecord>, CliError> {
    match &input.query {
        Some(text) => Ok(vec![QueryRecord {
            id: "query".into(),
            text: text.clone(),
            answers: Default::default(),
            plan: input.plan.clone(),
        }]),
        None => load_queries(input.queries.as_deref().or(cfg.queries.as_deref())),
    }
}

fn emit<W: Write, T: Serialize>(out: &mut W, value: &T) -> Result<(), CliError> {
    let mut line = serde_json::to_vec(value).map_err(runtime)?;
    line.push(b'\n');
    out.write_all(&line).map_err(|e| match e.kind() {
        std::io::ErrorKind::BrokenPipe => CliError::Closed,
        _ => runtime(e),
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let reader = open(path)?;
    serde_json::from_reader(reader).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn build_planner(cfg: &EngineConfig, kb: &Tgkb) -> Result<Planner, CliError> {
    match cfg.planner.mode {
        PlannerMode::Gold => Ok(Planner::Gold),
        PlannerMode::Template => {
            let path = existing(cfg.planner.templates.as_deref(), "template rules")?;
            let rules: Vec<TemplateRule> = read_json(&path)?;
            TemplatePlanner::new(&rules)
                .map(Planner::Template)
                .map_err(|e| CliError::Usage(e.to_string()))
        }
        PlannerMode::Llm => {
            let endpoint = cfg.planner.endpoint.clone().expect("validated");
            let demos: Vec<Demonstration> = match cfg.planner.demonstrations.as_deref() {
                Some(p) => read_json(&existing(Some(p), "demonstrations")?)?,
                None => Vec::new(),
            };
            Ok(Planner::Llm(Box::new(LlmPlanner::new(endpoint, kb.categories().to_vec(), demos))))
        }
    }
}

fn load_model(cfg: &EngineConfig, flag: Option<&Path>) -> Result<Option<RerankerModel>, CliError> {
    let path = match flag {
        Some(p) => p,
        None if cfg.reranker.enabled => cfg.reranker.checkpoint.as_deref().expect("validated"),
        None => return Ok(None),
    };
    let path = existing(Some(path), "model checkpoint")?;
    RerankerModel::load(open(&path)?).map(Some).map_err(runtime)
}

fn out_dir(cfg: &EngineConfig, sub: Option<&str>) -> Result<PathBuf, CliError> {
    let dir = match sub {
        Some(s) => cfg.out.join(s),
        None => cfg.out.clone(),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(runtime)?;
    w.write_all(b"\n").map_err(runtime)?;
    w.flush().map_err(runtime)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn pipeline<'a>(cfg: &EngineConfig, kb: &'a Tgkb, indexes: &'a Indexes) -> Pipeline<'a> {
    let mut p = Pipeline::new(kb, indexes, cfg.traversal.clone());
    p.max_path_len = cfg.planner.max_path_len;
    p
}

fn cmd_build(cfg: &EngineConfig) -> Result<(), CliError> {
    let kb = load_kb(cfg)?;
    let dir = out_dir(cfg, None)?;
    let mut nodes = create(&dir.join("nodes.jsonl"))?;
    kb.write_nodes(&mut nodes).and_then(|_| nodes.flush()).map_err(runtime)?;
    let mut edges = create(&dir.join("edges.jsonl"))?;
    kb.write_edges(&mut edges).and_then(|_| edges.flush()).map_err(runtime)?;
    let index = Bm25Index::with_params(&kb, cfg.scorer.k1, cfg.scorer.b);
    write_json(&dir.join("bm25.json"), &index.summary(&kb))?;
    let report = kb.validate();
    write_json(&dir.join("validation.json"), &report)?;
    println!(
        "{} nodes, {} edges, {} categories, {} isolated, {} empty documents",
        kb.len(),
        kb.edges().count(),
        kb.categories().len(),
        report.isolated.len(),
        report.empty_documents.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct PlanLine<'a> {
    id: &'a str,
    #[serde(flatten)]
    outcome: &'a PlanOutcome,
}

fn cmd_plan(cfg: &EngineConfig, input: &QueryArgs) -> Result<(), CliError> {
    let kb = match cfg.kb.nodes {
        Some(_) => Some(load_kb(cfg)?),
        None => None,
    };
    let queries = single_or_file(cfg, input)?;
    let planner = match &kb {
        Some(kb) => build_planner(cfg, kb)?,
        None => build_planner(cfg, &Tgkb::from_records(vec![], vec![]).map_err(runtime)?)?,
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for q in &queries {
        let mut outcome = planner.plan(q);
        if let Some(kb) = &kb {
            outcome = validate_outcome(outcome, kb, cfg.planner.max_path_len);
        }
        emit(&mut out, &PlanLine { id: &q.id, outcome: &outcome })?;
    }
    Ok(())
}

fn cmd_retrieve(cfg: &EngineConfig, input: &QueryArgs, k: Option<usize>, model: Option<&Path>) -> Result<(), CliError> {
    let kb = load_kb(cfg)?;
    let queries = single_or_file(cfg, input)?;
    let planner = build_planner(cfg, &kb)?;
    let model = load_model(cfg, model)?;
    let indexes = Indexes::build(&kb, &cfg.scorer);
    let p = pipeline(cfg, &kb, &indexes);
    let k = k.unwrap_or(cfg.eval.k);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for q in &queries {
        let mut r = p.retrieve(&q.text, planner.plan(q), model.as_ref(), k);
        r.query_id = Some(q.id.clone());
        emit(&mut out, &r)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    examples: usize,
    positives: usize,
    loss_curve: Vec<f64>,
}

fn cmd_train(cfg: &EngineConfig, queries: Option<&Path>) -> Result<(), CliError> {
    let kb = load_kb(cfg)?;
    let queries = load_queries(queries.or(cfg.train_queries.as_deref()).or(cfg.queries.as_deref()))?;
    let planner = build_planner(cfg, &kb)?;
    let indexes = Indexes::build(&kb, &cfg.scorer);
    let p = pipeline(cfg, &kb, &indexes);
    let data = p.training_examples(&planner, &queries, cfg.reranker.negatives_per_positive);
    let init = RerankerModel::new(cfg.reranker.model.clone(), kb.categories());
    let outcome = train(&init, &data, &cfg.reranker.train).map_err(runtime)?;
    let dir = out_dir(cfg, None)?;
    let mut w = create(&dir.join("reranker.json"))?;
    outcome.model.save(&mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    let summary = TrainSummary {
        examples: data.len(),
        positives: data.iter().filter(|e| e.label).count(),
        loss_curve: outcome.loss_curve,
    };
    write_json(&dir.join("training.json"), &summary)?;
    println!(
        "trained on {} examples ({} positive); loss {:.4} -> {:.4}",
        summary.examples,
        summary.positives,
        summary.loss_curve.first().copied().unwrap_or_default(),
        summary.loss_curve.last().copied().unwrap_or_default()
    );
    Ok(())
}

fn cmd_eval(cfg: &EngineConfig, queries: Option<&Path>, model: Option<&Path>, oracle: bool) -> Result<(), CliError> {
    let kb = load_kb(cfg)?;
    let queries = load_queries(queries.or(cfg.queries.as_deref()))?;
    let planner = build_planner(cfg, &kb)?;
    let model = if oracle { None } else { load_model(cfg, model)? };
    let indexes = Indexes::build(&kb, &cfg.scorer);
    let p = pipeline(cfg, &kb, &indexes);
    let (name, ranker) = match (&model, oracle) {
        (_, true) => ("oracle", Ranker::Oracle),
        (Some(m), false) => ("rerank", Ranker::Model(m)),
        (None, false) => ("initial", Ranker::Initial),
    };
    let report = evaluate(name, &p, &planner, &queries, ranker);
    let dir = out_dir(cfg, None)?;
    write_json(&dir.join("report.json"), &report)?;
    let table = report.table();
    write_text(&dir.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_ablate(cfg: &EngineConfig) -> Result<(), CliError> {
    let kb = load_kb(cfg)?;
    let train_queries = load_queries(cfg.train_queries.as_deref())?;
    let test_queries = load_queries(cfg.queries.as_deref())?;
    let planner = build_planner(cfg, &kb)?;
    let indexes = Indexes::build(&kb, &cfg.scorer);
    let run = AblationRun {
        kb: &kb,
        indexes: &indexes,
        planner: &planner,
        traversal: cfg.traversal.clone(),
        train_queries: &train_queries,
        test_queries: &test_queries,
        settings: cfg.reranker.settings(),
    };
    let dir = out_dir(cfg, Some("ablation"))?;
    let mut summary = String::new();
    for &variant in &cfg.eval.variants {
        let masks = if variant.reranks() { cfg.eval.masks.clone() } else { vec![Default::default()] };
        for mask in masks {
            let report = run.run(variant, mask).map_err(runtime)?;
            write_json(&dir.join(format!("{}.json", report.name)), &report)?;
            summary.push_str(&report.table());
        }
    }
    write_text(&dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_synth(cfg: &EngineConfig) -> Result<(), CliError> {
    let data = synth_generate(&cfg.synth).map_err(|e| CliError::Usage(e.to_string()))?;
    let dir = out_dir(cfg, None)?;
    let mut nodes = create(&dir.join("nodes.jsonl"))?;
    data.kb.write_nodes(&mut nodes).and_then(|_| nodes.flush()).map_err(runtime)?;
    let mut edges = create(&dir.join("edges.jsonl"))?;
    data.kb.write_edges(&mut edges).and_then(|_| edges.flush()).map_err(runtime)?;
    for (name, qs) in [("train_queries.jsonl", &data.train), ("queries.jsonl", &data.test)] {
        let mut w = create(&dir.join(name))?;
        write_queries(qs, &mut w).and_then(|_| w.flush()).map_err(runtime)?;
    }
    write_json(&dir.join("synth.json"), &cfg.synth)?;
    println!(
        "{} nodes, {} edges, {} train and {} test queries in {}",
        data.kb.len(),
        data.kb.edges().count(),
        data.train.len(),
        data.test.len(),
        dir.display()
    );
    Ok(())
}
