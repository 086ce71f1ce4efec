//! Pipeline stages behind the command-line subcommands.
//!
//! Each stage reads and writes fixed paths under one output directory:
//!
//! | stage            | reads                     | writes                          |
//! |------------------|---------------------------|---------------------------------|
//! | synth            |                           | `synth/interactions.csv`, `synth/schema.json` |
//! | ingest           | log + schema              | `dataset/`                      |
//! | build-graphs     | `dataset/`                | `graphs/`                       |
//! | train            | `dataset/`, `graphs/`     | `model.ckpt`, `metrics.jsonl`   |
//! | eval             | `model.ckpt`, ...         | `eval.json`                     |
//! | slice-report     | `model.ckpt`, ...         | `slices_frequency.tsv`, `slices_behavior.tsv` |
//! | grad-check       |                           | `grad_check.json`               |
//! | dump-embeddings  | `model.ckpt`, ...         | `embeddings.bin`                |
//! | graphs-stats     | `dataset/`, `graphs/`     | `graph_stats.json`              |
//!
//! The base model reads no graph files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::{parse_interactions, Dataset, Schema};
use crate::error::{Error, Result};
use crate::graphs::{GraphSet, GraphStats};
use crate::io_util::{read_file, write_file};
use crate::metrics::{evaluate, slice_by_behavior_length, slice_by_feature_frequency, EvalReport};
use crate::model::{
    dump_embeddings, predict, run_builtin_grad_check, train, Ablation, GradCheckReport, ModelState,
    Network, TrainOutcome,
};
use crate::synthgen::{generate, SynthLog, LOG_FILE, SCHEMA_FILE};

pub const SYNTH_DIR: &str = "synth";
pub const DATASET_DIR: &str = "dataset";
pub const GRAPHS_DIR: &str = "graphs";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVAL_FILE: &str = "eval.json";
pub const FREQUENCY_SLICES_FILE: &str = "slices_frequency.tsv";
pub const BEHAVIOR_SLICES_FILE: &str = "slices_behavior.tsv";
pub const GRAD_CHECK_FILE: &str = "grad_check.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const GRAPH_STATS_FILE: &str = "graph_stats.json";

/// Size the global worker pool. Only the first call in a process has an
/// effect.
pub fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn json_file<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<SynthLog> {
    let log = generate(&cfg.synth)?;
    log.write(&out.join(SYNTH_DIR))?;
    Ok(log)
}

/// Parses the configured log (or the generator output) into a dataset bundle.
pub fn ingest(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    let (log_path, schema) = match &cfg.data.log {
        Some(p) => (p.clone(), cfg.data.schema.clone().expect("validated")),
        None => {
            let dir = out.join(SYNTH_DIR);
            let schema: Schema = match &cfg.data.schema {
                Some(s) => s.clone(),
                None => serde_json::from_slice(&read_file(&dir.join(SCHEMA_FILE), "schema")?)?,
            };
            (dir.join(LOG_FILE), schema)
        }
    };
    if !log_path.exists() {
        return Err(Error::MissingArtifact {
            what: "interaction log",
            path: log_path,
        });
    }
    let log = parse_interactions(&log_path, &schema)?;
    let ds = Dataset::build(&log, cfg.data.negatives, cfg.seed, cfg.data.negative_mode)?;
    ds.save(&out.join(DATASET_DIR))?;
    Ok(ds)
}

pub fn load_dataset(out: &Path) -> Result<Dataset> {
    Dataset::load(&out.join(DATASET_DIR))
}

pub fn build_graphs(cfg: &RunConfig, out: &Path) -> Result<GraphSet> {
    let ds = load_dataset(out)?;
    let graphs = GraphSet::build(&ds, &cfg.graphs)?;
    graphs.save(&out.join(GRAPHS_DIR), ds.n_users(), &cfg.graphs)?;
    Ok(graphs)
}

fn graphs_for(ds: &Dataset, out: &Path, base: bool) -> Result<GraphSet> {
    if base {
        Ok(GraphSet::empty(ds))
    } else {
        GraphSet::load(&out.join(GRAPHS_DIR), ds)
    }
}

/// Trains the configured model, or the given ablation of it, and writes the
/// best checkpoint and the per-epoch metrics log.
pub fn train_model(
    cfg: &RunConfig,
    out: &Path,
    ablation: Option<Ablation>,
) -> Result<TrainOutcome> {
    let ds = load_dataset(out)?;
    let mut spec = cfg.model.clone();
    if let Some(a) = ablation {
        spec.variant = a.variant();
    }
    let graphs = graphs_for(&ds, out, spec.variant.is_base())?;
    let mut outcome = train(&spec, &ds.layout(), &graphs, &cfg.train, &ds.train, &ds.val)?;
    outcome.state.config_hash = cfg.hash();
    outcome.state.save(&out.join(CHECKPOINT_FILE))?;
    let mut lines = Vec::new();
    for e in &outcome.log {
        lines.extend(serde_json::to_vec(e)?);
        lines.push(b'\n');
    }
    write_file(&out.join(METRICS_FILE), &lines)?;
    Ok(outcome)
}

/// Checkpoint, dataset and the network the checkpoint was trained with.
pub struct Trained {
    pub state: ModelState,
    pub dataset: Dataset,
    pub network: Network,
}

pub fn load_trained(out: &Path) -> Result<Trained> {
    let state = ModelState::load(&out.join(CHECKPOINT_FILE))?;
    let dataset = load_dataset(out)?;
    if dataset.layout() != state.layout {
        return Err(Error::format(
            "checkpoint",
            "feature layout does not match the dataset bundle",
        ));
    }
    let graphs = graphs_for(&dataset, out, state.spec.variant.is_base())?;
    let network = Network::new(&state.spec, &state.layout, &graphs)?;
    Ok(Trained {
        state,
        dataset,
        network,
    })
}

fn test_scores(t: &Trained) -> Result<Vec<f64>> {
    predict(&t.network, &t.state.params, &t.dataset.test)
}

pub fn eval(out: &Path) -> Result<EvalReport> {
    let t = load_trained(out)?;
    let report = evaluate(&t.dataset.test, &test_scores(&t)?);
    json_file(&out.join(EVAL_FILE), &report)?;
    Ok(report)
}

/// Frequency and behavior-length slices of the test set.
pub fn slice_report(cfg: &RunConfig, out: &Path) -> Result<(EvalReport, EvalReport)> {
    let t = load_trained(out)?;
    let scores = test_scores(&t)?;
    let by_freq = slice_by_feature_frequency(
        &t.dataset.test,
        &scores,
        &t.dataset.vocab,
        &cfg.eval.frequency()?,
    );
    let by_len = slice_by_behavior_length(&t.dataset.test, &scores, &cfg.eval.behavior()?);
    write_file(
        &out.join(FREQUENCY_SLICES_FILE),
        by_freq.slice_table('\t').as_bytes(),
    )?;
    write_file(
        &out.join(BEHAVIOR_SLICES_FILE),
        by_len.slice_table('\t').as_bytes(),
    )?;
    Ok((by_freq, by_len))
}

pub fn grad_check(out: &Path) -> Result<GradCheckReport> {
    let report = run_builtin_grad_check()?;
    json_file(&out.join(GRAD_CHECK_FILE), &report)?;
    Ok(report)
}

/// Writes the enhanced table; scoring from it needs no graph work.
pub fn dump(out: &Path) -> Result<PathBuf> {
    let t = load_trained(out)?;
    let table = t.network.enhance(&t.state.params)?;
    let path = out.join(EMBEDDINGS_FILE);
    dump_embeddings(&table, &path)?;
    Ok(path)
}

pub fn graph_stats(out: &Path) -> Result<BTreeMap<String, GraphStats>> {
    let ds = load_dataset(out)?;
    let graphs = GraphSet::load(&out.join(GRAPHS_DIR), &ds)?;
    let stats = graphs.stats(ds.n_users());
    json_file(&out.join(GRAPH_STATS_FILE), &stats)?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        let mut cfg = RunConfig::default().with_seed(4);
        cfg.synth.n_users = 60;
        cfg.synth.n_items = 40;
        cfg.synth.max_length = 20;
        cfg.model.mlp = vec![8, 1];
        cfg.model.dim = 4;
        cfg.train.epochs = 2;
        cfg.train.batch_size = 256;
        cfg.graphs.k = 3;
        cfg
    }

    #[test]
    fn stages_chain_through_fixed_paths() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path();
        let cfg = small();
        synth(&cfg, out).unwrap();
        assert!(out.join("synth/interactions.csv").exists());
        let ds = ingest(&cfg, out).unwrap();
        assert!(!ds.test.is_empty());
        build_graphs(&cfg, out).unwrap();
        let outcome = train_model(&cfg, out, Some(Ablation::None)).unwrap();
        assert_eq!(outcome.state.config_hash, cfg.hash());
        let metrics = std::fs::read_to_string(out.join(METRICS_FILE)).unwrap();
        assert_eq!(metrics.lines().count(), outcome.log.len());
        let report = eval(out).unwrap();
        assert_eq!(report.count, ds.test.len());
        let (freq, len) = slice_report(&cfg, out).unwrap();
        assert_eq!(
            freq.slices.iter().map(|s| s.report.count).sum::<usize>(),
            report.count
        );
        assert_eq!(len.slices.len(), 4);
        dump(out).unwrap();
        let stats = graph_stats(out).unwrap();
        assert!(stats.contains_key("cf_users"));
    }

    #[test]
    fn base_model_needs_no_graph_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path();
        let cfg = small();
        synth(&cfg, out).unwrap();
        ingest(&cfg, out).unwrap();
        train_model(&cfg, out, Some(Ablation::BaseOnly)).unwrap();
        eval(out).unwrap();
        assert!(!out.join(GRAPHS_DIR).exists());
    }

    #[test]
    fn eval_before_train_is_a_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let err = eval(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().starts_with("checkpoint not found"));
    }
}
