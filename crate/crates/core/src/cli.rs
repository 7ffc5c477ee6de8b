//! Command-line entry point. Exit codes: 0 success, 1 domain error,
//! 2 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::annotator::{annotate_dataset, AnnotationJob, DEFAULT_FAILURE_THRESHOLD};
use crate::config::{default_store_path, Config, DatasetEntry};
use crate::dataset::{default_dimension_set, load_manifest, AnnotationStore, DimensionSet, SearchDimension};
use crate::engine::{Engine, LoadedDataset, PricedUsage};
use crate::eval::{
    evaluate_run, expected_random_map, format_cost_table, load_rankings, load_usage, project_all,
    GoldStandard, NdcgGain, RunUsage, DEFAULT_BINARIZE,
};
use crate::gateway::PriceTable;
use crate::index::{build_index, EmbeddingIndex, DEFAULT_BATCH_SIZE};
use crate::rerank::{RerankMode, RerankRequest, DEFAULT_K};
use crate::retrieval::{search, WeightProfile};

#[derive(Debug, Parser)]
#[command(name = "guirerank", version, about = "Natural-language search over GUI screenshot repositories")]
pub struct Cli {
    /// TOML config file (falls back to $GUIRERANK_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Model used by the subcommand's model stage.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Use the deterministic offline provider for every model call.
    #[arg(long, global = true)]
    pub stub: bool,
    /// Machine-readable JSON on standard output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Annotate every GUI of a dataset along each search dimension.
    Annotate(AnnotateArgs),
    /// Embed an annotation store into a binary index.
    Embed(EmbedArgs),
    /// Stage-one search over an index.
    Search(SearchArgs),
    /// Stage-one search followed by model reranking of the top k.
    Rerank(RerankArgs),
    /// Score rankings against a gold standard, or project costs.
    Eval(EvalArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Annotation store path (default: <name>.annotations.jsonl beside the manifest).
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Skip GUIs that already have every dimension annotated.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_FAILURE_THRESHOLD)]
    pub failure_threshold: f64,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Dataset manifest; supplies the name, dimension set and default model.
    #[arg(long, required_unless_present = "store")]
    pub manifest: Option<PathBuf>,
    /// Annotation store (default: <name>.annotations.jsonl beside the manifest).
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Index path (default: <name>.index beside the store).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub query: String,
    /// Per-dimension weights, e.g. domain=1,design=2.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub query: String,
    #[arg(long)]
    pub mode: String,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long)]
    pub weights: Option<String>,
    /// Annotation store (default: <dataset>.annotations.jsonl beside the index).
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    /// Append a usage record (JSON line) for cost projection.
    #[arg(long)]
    pub usage_out: Option<PathBuf>,
    /// Number of entries to print (all by default).
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct EvalArgs {
    #[command(subcommand)]
    pub command: Option<EvalCommand>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub rankings: Option<PathBuf>,
    /// Grades at or above this value count as relevant.
    #[arg(long, default_value_t = DEFAULT_BINARIZE)]
    pub binarize: u32,
    #[arg(long, default_value = "linear")]
    pub ndcg_gain: String,
    /// Row label in the printed table.
    #[arg(long, default_value = "run")]
    pub label: String,
    /// Group label in the printed table.
    #[arg(long, default_value = "")]
    pub group: String,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Project token usage, cost and time to k = 100 and 500.
    Cost {
        #[arg(long)]
        usage: PathBuf,
        #[arg(long)]
        prices: Option<PathBuf>,
    },
    /// Mean AP of random rankings over many seeds vs. its expectation.
    Baseline {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = DEFAULT_BINARIZE)]
        binarize: u32,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bind: Option<String>,
    /// Extra dataset as name=index_path (store beside the index).
    #[arg(long = "dataset")]
    pub datasets: Vec<String>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut c = Config::discover(cli.config.as_deref())?;
    if cli.stub {
        c.stub = true;
    }
    Ok(c)
}

fn parse_weights(w: Option<&str>) -> Result<WeightProfile> {
    Ok(match w {
        Some(s) => s.parse()?,
        None => WeightProfile::new(),
    })
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn fmt_cost(c: Option<f64>) -> String {
    c.map(|v| format!("${v:.6}")).unwrap_or_else(|| "unpriced".into())
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Annotate(a) => annotate(cli, a),
        Command::Embed(a) => embed(cli, a),
        Command::Search(a) => search_cmd(cli, a),
        Command::Rerank(a) => rerank_cmd(cli, a),
        Command::Eval(a) => eval_cmd(cli, a),
        Command::Serve(a) => serve_cmd(cli, a),
    }
}

fn annotate(cli: &Cli, a: &AnnotateArgs) -> Result<()> {
    let config = load_config(cli)?;
    let engine = Engine::from_config(Config {
        datasets: Vec::new(),
        ..config
    })?;
    let manifest = load_manifest(&a.manifest)?;
    let model = cli.model.clone().unwrap_or_else(|| engine.config().models.annotate.clone());
    let gateway = engine.gateway(&model)?;
    let model_id = gateway.model_id();
    let mut job = AnnotationJob::new(&manifest, gateway);
    job.resume = a.resume;
    job.width = a.width.unwrap_or(engine.config().concurrency);
    job.failure_threshold = a.failure_threshold;
    if let Some(s) = &a.store {
        job.store_path = s.clone();
    }
    let store_path = job.store_path.clone();
    let outcome = annotate_dataset(job)?;
    let cost = PricedUsage::new(&model_id, &outcome.usage, engine.prices());
    if cli.json {
        print_json(&json!({
            "store": store_path,
            "gui_count": outcome.store.len(),
            "attempted": outcome.attempted,
            "failures": outcome.failures.iter().map(|f| json!({"gui_id": f.gui_id, "error": f.error})).collect::<Vec<_>>(),
            "usage": outcome.usage,
            "cost": cost,
        }))?;
    } else {
        println!(
            "annotated {} of {} GUIs with {} ({} failed) -> {}",
            outcome.attempted - outcome.failures.len(),
            outcome.attempted,
            model_id,
            outcome.failures.len(),
            store_path.display()
        );
        for f in &outcome.failures {
            println!("  failed {}: {}", f.gui_id, f.error);
        }
        println!(
            "tokens in {} out {} requests {} cost {}",
            cost.input_tokens,
            cost.output_tokens,
            cost.request_count,
            fmt_cost(cost.cost)
        );
    }
    Ok(())
}

/// `smoke.annotations.jsonl` names the dataset `smoke`.
fn dataset_name_from_store(path: &Path) -> String {
    let file = path.file_name().and_then(|f| f.to_str()).unwrap_or("dataset");
    file.strip_suffix(".annotations.jsonl")
        .or_else(|| file.strip_suffix(".jsonl"))
        .unwrap_or(file)
        .to_string()
}

/// The default dimension set when the store uses exactly its ids, otherwise
/// a set built from the ids found in the store with unit default weights.
fn dimensions_from_store(store: &AnnotationStore) -> Result<DimensionSet> {
    let ids: std::collections::BTreeSet<&str> = store
        .iter()
        .flat_map(|e| e.annotations.keys().map(String::as_str))
        .collect();
    let default = default_dimension_set();
    if ids == default.ids().into_iter().collect() {
        return Ok(default);
    }
    Ok(DimensionSet::new(
        ids.into_iter().map(|id| SearchDimension::new(id, id, "", 1.0)).collect(),
    )?)
}

fn embed(cli: &Cli, a: &EmbedArgs) -> Result<()> {
    let config = load_config(cli)?;
    let manifest = a.manifest.as_deref().map(load_manifest).transpose()?;
    let model = cli
        .model
        .clone()
        .or_else(|| manifest.as_ref().and_then(|m| m.embedding_model.clone()))
        .unwrap_or_else(|| config.models.embed.clone());
    let engine = Engine::from_config(Config {
        datasets: Vec::new(),
        ..config
    })?;
    let store_path = match (&a.store, &manifest) {
        (Some(p), _) => p.clone(),
        (None, Some(m)) => m.store_path(),
        (None, None) => unreachable!("clap requires --manifest or --store"),
    };
    let store = AnnotationStore::load(&store_path)?;
    let (name, dimensions) = match manifest {
        Some(m) => (m.name, m.dimensions),
        None => (dataset_name_from_store(&store_path), dimensions_from_store(&store)?),
    };
    let out = a.out.clone().unwrap_or_else(|| {
        store_path
            .parent()
            .unwrap_or(Path::new(""))
            .join(format!("{name}.index"))
    });
    let gateway = engine.gateway(&model)?;
    let (index, usage) = build_index(&store, &dimensions, &name, &gateway, a.batch_size)?;
    index.save(&out)?;
    let cost = PricedUsage::new(&gateway.model_id(), &usage, engine.prices());
    if cli.json {
        print_json(&json!({
            "index": out,
            "dataset": index.dataset(),
            "model": index.model_id(),
            "gui_count": index.gui_count(),
            "dimensions": index.dimensions().ids(),
            "width": index.width(),
            "usage": usage,
            "cost": cost,
        }))?;
    } else {
        println!(
            "indexed {} GUIs x {} dimensions (width {}) with {} -> {}",
            index.gui_count(),
            index.dimensions().len(),
            index.width(),
            index.model_id(),
            out.display()
        );
        println!(
            "tokens in {} requests {} cost {}",
            cost.input_tokens,
            cost.request_count,
            fmt_cost(cost.cost)
        );
    }
    Ok(())
}

fn search_cmd(cli: &Cli, a: &SearchArgs) -> Result<()> {
    if a.top == 0 {
        bail!("--top must be at least 1");
    }
    let config = load_config(cli)?;
    let decompose_model = cli.model.clone().unwrap_or_else(|| config.models.decompose.clone());
    let engine = Engine::from_config(Config {
        datasets: Vec::new(),
        ..config
    })?;
    let index = EmbeddingIndex::load(&a.index).with_context(|| format!("loading {}", a.index.display()))?;
    let overrides = parse_weights(a.weights.as_deref())?;
    let decomposer = engine.gateway(&decompose_model)?;
    let embedder = engine.gateway(index.model_id())?;
    let r = search(&index, &a.query, &overrides, Some(a.top), &decomposer, &embedder, engine.scoring())?;
    for d in &r.decomposition.diagnostics {
        eprintln!("note: {d}");
    }
    if cli.json {
        print_json(&r.result.entries)?;
        return Ok(());
    }
    println!("query: {}", r.decomposition.query);
    for (dim, c) in &r.decomposition.dimensions {
        let pos: Vec<String> = c.positives.iter().map(|p| format!("+\"{p}\"")).collect();
        let neg: Vec<String> = c.negatives.iter().map(|p| format!("-\"{p}\"")).collect();
        println!("  {dim}: {}", pos.into_iter().chain(neg).collect::<Vec<_>>().join(" "));
    }
    println!("{:>4}  {:<24} {:>8}", "rank", "gui_id", "total");
    for (i, e) in r.result.entries.iter().enumerate() {
        println!("{:>4}  {:<24} {:>8.4}", i + 1, e.gui_id, e.total);
    }
    Ok(())
}

fn rerank_cmd(cli: &Cli, a: &RerankArgs) -> Result<()> {
    let mode: RerankMode = a.mode.parse()?;
    let config = load_config(cli)?;
    let rerank_model = cli.model.clone().unwrap_or_else(|| config.models.rerank.clone());
    let width = a.width.unwrap_or(config.concurrency);
    let engine = Engine::from_config(Config {
        datasets: Vec::new(),
        ..config
    })?;
    let index = EmbeddingIndex::load(&a.index).with_context(|| format!("loading {}", a.index.display()))?;
    let name = index.dataset().to_string();
    let store = a.store.clone().unwrap_or_else(|| default_store_path(&a.index, &name));
    let engine = engine.with_dataset(LoadedDataset::open(&name, &a.index, &store)?);

    let mut request = RerankRequest::new(&a.query, mode);
    request.k = a.k;
    request.weights = parse_weights(a.weights.as_deref())?;
    request.width = width;
    request.batch_size = a.batch_size;
    let out = engine.rerank(&name, &request, Some(&rerank_model))?;
    let ranking = &out.ranking;
    eprintln!(
        "reranked {} GUIs in {:.2}s",
        ranking.head_len(),
        ranking.elapsed.as_secs_f64()
    );
    if let Some(path) = &a.usage_out {
        RunUsage {
            model: ranking.model.clone(),
            mode,
            gui_count: ranking.head_len(),
            usage: ranking.usage,
            elapsed_secs: Some(ranking.elapsed.as_secs_f64()),
        }
        .append_to(path)?;
    }
    let shown = a.top.unwrap_or(ranking.entries.len());
    if cli.json {
        let mut v = serde_json::to_value(&out)?;
        if let Some(entries) = v["ranking"]["entries"].as_array_mut() {
            entries.truncate(shown);
        }
        print_json(&v)?;
        return Ok(());
    }
    println!("{:>4}  {:<24} {:>9} {:>8}  flags", "rank", "gui_id", "aggregate", "stage1");
    for e in ranking.entries.iter().take(shown) {
        let agg = e.aggregate.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        let flags = e.flags.first().map(String::as_str).unwrap_or("");
        println!("{:>4}  {:<24} {:>9} {:>8.4}  {}", e.rank, e.gui_id, agg, e.stage_one_total, flags);
    }
    for c in &out.cost {
        println!(
            "{}: tokens in {} out {} requests {} cost {}",
            c.model,
            c.input_tokens,
            c.output_tokens,
            c.request_count,
            fmt_cost(c.cost)
        );
    }
    Ok(())
}

fn eval_cmd(cli: &Cli, a: &EvalArgs) -> Result<()> {
    match &a.command {
        Some(EvalCommand::Cost { usage, prices }) => {
            let prices = match prices {
                Some(p) => PriceTable::load(p)?,
                None => load_config(cli)?.price_table()?,
            };
            let runs = load_usage(usage)?;
            let rows = project_all(&runs, &prices)?;
            if cli.json {
                print_json(&rows)?;
            } else {
                print!("{}", format_cost_table(&rows));
            }
            Ok(())
        }
        Some(EvalCommand::Baseline { gold, seeds, binarize }) => {
            let gold = GoldStandard::load(gold)?;
            let config = crate::eval::EvalConfig {
                binarize: *binarize,
                gain: NdcgGain::Linear,
            };
            let mut sum = 0.0;
            for seed in 0..*seeds {
                sum += evaluate_run(&gold, &gold.random_rankings(seed), config)?.mean.ap;
            }
            let mean = sum / (*seeds).max(1) as f64;
            let expected = expected_random_map(&gold, *binarize);
            if cli.json {
                print_json(&json!({"seeds": seeds, "mean_ap": mean, "expected_ap": expected}))?;
            } else {
                println!("random baseline over {seeds} seeds: mean AP {mean:.4}, expected {expected:.4}");
            }
            Ok(())
        }
        None => {
            let gold = a.gold.as_ref().ok_or_else(|| anyhow!("--gold is required"))?;
            let rankings = a.rankings.as_ref().ok_or_else(|| anyhow!("--rankings is required"))?;
            let gold = GoldStandard::load(gold)?;
            let rankings = load_rankings(rankings)?;
            let config = crate::eval::EvalConfig {
                binarize: a.binarize,
                gain: a.ndcg_gain.parse()?,
            };
            let report = evaluate_run(&gold, &rankings, config)?;
            if let Some(out) = &a.out {
                std::fs::write(out, serde_json::to_string_pretty(&report)?)
                    .with_context(|| format!("writing {}", out.display()))?;
            }
            if cli.json {
                print_json(&report)?;
            } else {
                print!("{}", report.table(&a.group, &a.label));
            }
            Ok(())
        }
    }
}

fn serve_cmd(cli: &Cli, a: &ServeArgs) -> Result<()> {
    let mut config = load_config(cli)?;
    for d in &a.datasets {
        let (name, index) = d
            .split_once('=')
            .ok_or_else(|| anyhow!("--dataset expects name=index_path, got \"{d}\""))?;
        config.datasets.push(DatasetEntry {
            name: name.to_string(),
            index: PathBuf::from(index),
            store: None,
        });
    }
    if let Some(b) = &a.bind {
        config.bind = b.clone();
    }
    config.validate()?;
    let bind = config.bind.clone();
    let engine = Arc::new(Engine::from_config(config)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(crate::service::serve(engine, &bind))
        .with_context(|| format!("serving on {bind}"))?;
    Ok(())
}
