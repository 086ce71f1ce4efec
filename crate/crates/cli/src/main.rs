//! `dualgraph` command-line tool.
//!
//! Every subcommand reads and writes fixed file names under `--out`. On
//! failure a JSON error object is printed to stderr and the process exits
//! with 2 (invalid configuration), 3 (missing input artifact) or 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use dualgraph::config::RunConfig;
use dualgraph::model::{Ablation, GRAD_TOLERANCE};
use dualgraph::{pipeline, Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "dualgraph",
    version,
    about = "Dual-graph embedding enhancement for CTR prediction"
)]
struct Cli {
    /// JSON run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory for every artifact.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic interaction log and its schema.
    Synth,
    /// Parse the interaction log into a dataset bundle.
    Ingest,
    /// Build attribute and collaborative graphs from the dataset.
    BuildGraphs,
    /// Train a model and write the best checkpoint and the metrics log.
    Train {
        /// Model variant to train instead of the configured one.
        #[arg(long, value_parser = parse_ablation, conflicts_with = "base_only")]
        ablate: Option<Ablation>,
        /// Train without any graph module.
        #[arg(long)]
        base_only: bool,
    },
    /// Evaluate the checkpoint on the test split.
    Eval,
    /// Per-bucket metrics by feature frequency and behavior length.
    SliceReport,
    /// Finite-difference gradient check on the builtin fixture.
    GradCheck,
    /// Write the enhanced embedding table of the checkpoint.
    DumpEmbeddings,
    /// Degree statistics of the built graphs.
    GraphsStats,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    Ablation::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Ablation::ALL.iter().map(|a| a.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print(value: serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

/// Runs one subcommand; `Ok(false)` means it ran but its check failed.
fn run(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    pipeline::init_threads(cfg.threads);
    let out = cli.out.as_path();
    match &cli.command {
        Command::Synth => {
            let log = pipeline::synth(&cfg, out)?;
            print(
                json!({ "rows": log.rows.len(), "users": cfg.synth.n_users, "items": cfg.synth.n_items }),
            )?;
        }
        Command::Ingest => {
            let ds = pipeline::ingest(&cfg, out)?;
            print(json!({
                "users": ds.n_users(),
                "items": ds.n_items(),
                "features": ds.vocab.total(),
                "train": ds.train.len(),
                "val": ds.val.len(),
                "test": ds.test.len(),
                "dropped_users": ds.dropped_users,
                "parse": ds.report,
            }))?;
        }
        Command::BuildGraphs => {
            let g = pipeline::build_graphs(&cfg, out)?;
            print(json!({
                "user_attr_edges": g.user_attr.iter().map(|g| g.edge_count()).collect::<Vec<_>>(),
                "item_attr_edges": g.item_attr.iter().map(|g| g.edge_count()).collect::<Vec<_>>(),
                "collaborative_edges": g.collaborative.edge_count(),
            }))?;
        }
        Command::Train { ablate, base_only } => {
            let ablation = if *base_only {
                Some(Ablation::BaseOnly)
            } else {
                *ablate
            };
            let outcome = pipeline::train_model(&cfg, out, ablation)?;
            print(json!({ "best_epoch": outcome.best_epoch, "epochs": outcome.log }))?;
        }
        Command::Eval => print(serde_json::to_value(pipeline::eval(out)?)?)?,
        Command::SliceReport => {
            let (by_freq, by_len) = pipeline::slice_report(&cfg, out)?;
            print!("{}", by_freq.slice_table('\t'));
            print!("{}", by_len.slice_table('\t'));
        }
        Command::GradCheck => {
            let report = pipeline::grad_check(out)?;
            println!(
                "max relative error: {:.3e} ({} parameters, worst {})",
                report.max_rel_error, report.checked, report.worst
            );
            if !report.passed() {
                eprintln!(
                    "{}",
                    json!({
                        "error": "grad_check_failed",
                        "message": format!("max relative error {:e} exceeds {GRAD_TOLERANCE:e}", report.max_rel_error),
                        "worst": report.worst,
                    })
                );
                return Ok(false);
            }
        }
        Command::DumpEmbeddings => {
            let path = pipeline::dump(out)?;
            print(json!({ "path": path }))?;
        }
        Command::GraphsStats => print(serde_json::to_value(pipeline::graph_stats(out)?)?)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &Error) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}
