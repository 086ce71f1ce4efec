//! The run configuration: one JSON document covering every pipeline stage.
//!
//! Every section and key is optional; unknown keys are rejected with the
//! dotted path of the offending key. The top-level `seed` is the only seed:
//! it is copied into the generator and trainer sections when the config is
//! finalized.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{NegativeMode, Schema};
use crate::error::{Error, Result};
use crate::graphs::SimilarityParams;
use crate::metrics::Buckets;
use crate::model::{ModelSpec, TrainConfig};
use crate::synthgen::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Interaction log to ingest. Defaults to the generator output under `--out`.
    pub log: Option<PathBuf>,
    /// Column schema for `log`. Required when `log` is set.
    pub schema: Option<Schema>,
    /// Negatives per positive.
    pub negatives: usize,
    pub negative_mode: NegativeMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            log: None,
            schema: None,
            negatives: 10,
            negative_mode: NegativeMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Lower bounds of the feature-frequency buckets.
    pub frequency_buckets: Vec<u64>,
    /// Lower bounds of the behavior-length buckets.
    pub behavior_buckets: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            frequency_buckets: vec![1, 10, 100],
            behavior_buckets: vec![1, 5, 20],
        }
    }
}

impl EvalConfig {
    pub fn frequency(&self) -> Result<Buckets> {
        Buckets::from_thresholds(&self.frequency_buckets)
            .map_err(|e| Error::config("eval.frequency_buckets", e.to_string()))
    }

    pub fn behavior(&self) -> Result<Buckets> {
        Buckets::from_thresholds(&self.behavior_buckets)
            .map_err(|e| Error::config("eval.behavior_buckets", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; `None` uses every core, `Some(1)` is the
    /// bitwise-reproducible mode.
    pub threads: Option<usize>,
    pub synth: SynthConfig,
    pub data: DataConfig,
    pub graphs: SimilarityParams,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            synth: SynthConfig::default(),
            data: DataConfig::default(),
            graphs: SimilarityParams::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse, finalize and validate.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::config(
                if field == "." { String::new() } else { field },
                e.into_inner().to_string(),
            )
        })?;
        cfg.finalize();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config("--config", format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.finalize();
        self
    }

    /// Propagate the top-level seed into the sections that carry one.
    pub fn finalize(&mut self) {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be positive"));
        }
        self.synth.validate()?;
        if self.data.negatives == 0 {
            return Err(Error::config("data.negatives", "must be positive"));
        }
        if self.data.log.is_some() && self.data.schema.is_none() {
            return Err(Error::config(
                "data.schema",
                "required when data.log is set",
            ));
        }
        if let Some(schema) = &self.data.schema {
            schema.validate().map_err(|e| match e {
                Error::Config { field, message } => {
                    Error::config(format!("data.schema.{field}"), message)
                }
                other => Error::config("data.schema", other.to_string()),
            })?;
        }
        self.graphs.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.eval.frequency()?;
        self.eval.behavior()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; stored in checkpoints.
    pub fn hash(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model.dim, 10);
        assert_eq!(cfg.model.mlp, vec![400, 400, 400, 1]);
        assert_eq!(cfg.train.batch_size, 2000);
        assert_eq!(cfg.data.negatives, 10);
    }

    #[test]
    fn unknown_keys_report_their_path() {
        match RunConfig::from_json(r#"{"model": {"dimm": 4}}"#).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "model.dimm"),
            e => panic!("unexpected {e}"),
        }
        match RunConfig::from_json(r#"{"bogus": 1}"#).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "bogus"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn type_errors_report_their_path() {
        match RunConfig::from_json(r#"{"train": {"lr": "fast"}}"#).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "train.lr"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn invalid_values_are_rejected_with_field() {
        for (doc, field) in [
            (r#"{"model": {"within_layers": 5}}"#, "model.within_layers"),
            (r#"{"train": {"batch_size": 0}}"#, "train.batch_size"),
            (r#"{"threads": 0}"#, "threads"),
            (r#"{"data": {"log": "x.csv"}}"#, "data.schema"),
            (
                r#"{"eval": {"behavior_buckets": [5, 1]}}"#,
                "eval.behavior_buckets",
            ),
        ] {
            match RunConfig::from_json(doc).unwrap_err() {
                Error::Config { field: f, .. } => assert_eq!(f, field, "{doc}"),
                e => panic!("unexpected {e} for {doc}"),
            }
        }
    }

    #[test]
    fn seed_is_propagated_and_hashed() {
        let cfg = RunConfig::from_json(r#"{"seed": 5}"#).unwrap();
        assert_eq!((cfg.synth.seed, cfg.train.seed), (5, 5));
        let other = cfg.clone().with_seed(6);
        assert_eq!(other.train.seed, 6);
        assert_ne!(cfg.hash(), other.hash());
        assert_eq!(cfg.hash(), cfg.clone().hash());
    }

    #[test]
    fn serialized_config_reloads() {
        let mut cfg = RunConfig::default().with_seed(3);
        cfg.model.mlp = vec![8, 1];
        cfg.graphs.k = 4;
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }
}
