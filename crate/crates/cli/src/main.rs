//! `pathtrack` command-line front end.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage and
//! configuration errors.

mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use pathtrack::corpus::{load_corpus, CorpusFormat};
use pathtrack::eval::{evaluate, EvalMode, EvalOptions};
use pathtrack::indexer::{build_index, load_index, save_index};
use pathtrack::tracker::Trace;
use pathtrack::{Engine, EngineConfig};
use serde_json::json;
use tracing_subscriber::EnvFilter;

use settings::{resolve, Overrides, UsageError};

#[derive(Debug, Parser)]
#[command(
    name = "pathtrack",
    version,
    about = "Path-tracking retrieval over an LLM-built knowledge graph"
)]
struct Cli {
    /// TOML file of config keys (flat `key = value` pairs).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log progress to stderr (`-vv` for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract a knowledge graph from a corpus and write an index archive.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve documents for one question and print them as JSON.
    Retrieve(QueryArgs),
    /// Retrieve, then answer from the top documents.
    Answer(QueryArgs),
    /// Score every QA record of a corpus file.
    Eval {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "retrieval")]
        mode: EvalMode,
        /// Recall cutoffs.
        #[arg(long, value_delimiter = ',', default_value = "2,5,10")]
        k: Vec<usize>,
        /// Report file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for one trace file per query.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Print a trace file hop by hop.
    Inspect { trace: PathBuf },
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    question: String,
    /// Write the full trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn open_engine(index_path: &Path, config: EngineConfig) -> Result<Engine> {
    let index =
        load_index(index_path).with_context(|| format!("loading {}", index_path.display()))?;
    let generator = config.build_generator()?;
    let embedder = config.build_embedder()?;
    Ok(Engine::new(Arc::new(index), generator, embedder, config)?)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run_index(corpus: &Path, out: &Path, config: &EngineConfig) -> Result<()> {
    let corpus = load_corpus(corpus, CorpusFormat::Jsonl)?;
    let generator = config.build_generator()?;
    let embedder = config.build_embedder()?;
    let index = build_index(
        &corpus,
        &generator,
        embedder.as_ref(),
        &config.index_config(),
    )?;
    save_index(&index, out)?;
    let usage = generator.ledger().snapshot();
    println!("documents   {}", index.documents.len());
    println!("entities    {}", index.kg.entities.len());
    println!("relations   {}", index.kg.relation_count());
    println!("triples     {}", index.kg.triples.len());
    println!("skipped     {}", index.stats.documents_skipped);
    println!(
        "tokens      {} prompt, {} completion",
        usage.prompt_tokens, usage.completion_tokens
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn run_query(args: &QueryArgs, config: EngineConfig, answer: bool) -> Result<()> {
    let engine = open_engine(&args.index, config)?;
    let (retrieval, answer) = if answer {
        let a = engine.answer(&args.question)?;
        (a.retrieval, Some(a.answer))
    } else {
        (engine.retrieve(&args.question)?, None)
    };
    if let Some(path) = &args.trace {
        write_file(path, &retrieval.trace.to_json())?;
    }
    let mut out = serde_json::to_value(&retrieval.result)?;
    if let Some(a) = answer {
        out["answer"] = json!(a);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run_eval(
    index: &Path,
    corpus: &Path,
    options: EvalOptions,
    out: Option<&Path>,
    traces: Option<&Path>,
    config: EngineConfig,
) -> Result<()> {
    let corpus = load_corpus(corpus, CorpusFormat::Jsonl)?;
    if corpus.records.is_empty() {
        anyhow::bail!("corpus has no QA records to evaluate");
    }
    let engine = open_engine(index, config)?;
    let run = evaluate(&corpus.records, &engine, &options)?;
    if let Some(dir) = traces {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (id, trace) in &run.traces {
            write_file(&dir.join(format!("{id}.json")), &trace.to_json())?;
        }
    }
    let report = run.report.to_json();
    match out {
        Some(path) => {
            write_file(path, &report)?;
            let a = &run.report.aggregates;
            println!("queries  {} ({} failed)", a.queries, a.failed);
            for (k, r) in &a.recall_at {
                println!("recall@{k:<3} {r:.4}");
            }
            if let (Some(em), Some(f1)) = (a.em, a.f1) {
                println!("em       {em:.4}\nf1       {f1:.4}");
            }
            println!("tokens/q {:.1}", a.mean_tokens_per_query);
            println!("wrote {}", path.display());
        }
        None => println!("{report}"),
    }
    Ok(())
}

fn run_inspect(path: &Path) -> Result<()> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let trace: Trace = serde_json::from_str(&raw)
        .with_context(|| format!("{} is not a trace file", path.display()))?;
    print!("{}", trace.summary());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve(std::env::vars(), cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Index { corpus, out } => run_index(&corpus, &out, &config),
        Command::Retrieve(args) => run_query(&args, config, false),
        Command::Answer(args) => run_query(&args, config, true),
        Command::Eval {
            index,
            corpus,
            mode,
            k,
            out,
            traces,
        } => run_eval(
            &index,
            &corpus,
            EvalOptions { mode, ks: k },
            out.as_deref(),
            traces.as_deref(),
            config,
        ),
        Command::Inspect { trace } => run_inspect(&trace),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<UsageError>().is_some()
                || matches!(
                    e.downcast_ref::<pathtrack::Error>(),
                    Some(pathtrack::Error::Config(_))
                );
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
