//! Synthetic interaction logs with controllable feature and behavior
//! sparsity.
//!
//! Users and items get latent vectors drawn around shared cluster centers.
//! Attribute values are picked by softmax affinity between the latent and a
//! per-value prototype, so attributes carry latent signal. Each user's
//! history length follows a truncated power law; every click is drawn by
//! rejection sampling from a popularity-skewed candidate stream, accepted
//! with probability `sigmoid(sharpness * (<u, v> / sqrt(d) - threshold))`, or replaced by a random
//! candidate with probability `click_noise`.

use std::collections::HashSet;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnType, FieldRole, FieldSpec, Schema};
use crate::error::{Error, Result};
use crate::io_util::write_file;
use crate::model::sigmoid;
use crate::seeding::derive;
use crate::tensor::dot;

pub const LOG_FILE: &str = "interactions.csv";
pub const SCHEMA_FILE: &str = "schema.json";

const CANDIDATE_TRIES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub latent_dim: usize,
    /// Number of latent cluster centers shared by users and items.
    pub clusters: usize,
    /// Standard deviation of a latent around its cluster center.
    pub cluster_spread: f64,
    pub user_attr_cardinalities: Vec<usize>,
    pub item_attr_cardinalities: Vec<usize>,
    /// Softmax temperature inverse for attribute choice; 0 makes attributes
    /// independent of the latents.
    pub attr_affinity: f64,
    /// Power-law exponent of the history-length density; must exceed 1.
    pub length_exponent: f64,
    pub min_length: usize,
    pub max_length: usize,
    /// Every user gets exactly this many events when set.
    pub fixed_length: Option<usize>,
    /// Zipf exponent of item popularity in the candidate stream.
    pub popularity_exponent: f64,
    /// Scale on the latent inner product inside the click sigmoid.
    pub sharpness: f64,
    /// Affinity (inner product over `sqrt(latent_dim)`) at which a
    /// candidate is accepted with probability one half.
    pub click_threshold: f64,
    /// Probability that a click ignores the latents.
    pub click_noise: f64,
    pub context_cardinality: usize,
    /// Let a user click the same item more than once. Without it repeats
    /// only happen when a history is longer than half the catalog.
    pub repeat_clicks: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 2000,
            n_items: 2000,
            latent_dim: 8,
            clusters: 16,
            cluster_spread: 0.5,
            user_attr_cardinalities: vec![16, 4],
            item_attr_cardinalities: vec![16, 4],
            attr_affinity: 4.0,
            length_exponent: 2.0,
            min_length: 4,
            max_length: 100,
            fixed_length: None,
            popularity_exponent: 0.8,
            sharpness: 4.0,
            click_threshold: 1.5,
            click_noise: 0.1,
            context_cardinality: 4,
            repeat_clicks: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("synth.n_users", self.n_users),
            ("synth.n_items", self.n_items),
            ("synth.latent_dim", self.latent_dim),
            ("synth.clusters", self.clusters),
            ("synth.min_length", self.min_length),
            ("synth.context_cardinality", self.context_cardinality),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        for (side, cards) in [
            (
                "synth.user_attr_cardinalities",
                &self.user_attr_cardinalities,
            ),
            (
                "synth.item_attr_cardinalities",
                &self.item_attr_cardinalities,
            ),
        ] {
            if let Some(i) = cards.iter().position(|&c| c == 0) {
                return Err(Error::config(format!("{side}[{i}]"), "must be at least 1"));
            }
        }
        if self.max_length < self.min_length {
            return Err(Error::config(
                "synth.max_length",
                "must be at least min_length",
            ));
        }
        if self.fixed_length == Some(0) {
            return Err(Error::config("synth.fixed_length", "must be at least 1"));
        }
        if !(self.length_exponent > 1.0 && self.length_exponent.is_finite()) {
            return Err(Error::config(
                "synth.length_exponent",
                "must be finite and greater than 1",
            ));
        }
        if !(0.0..0.5).contains(&self.click_noise) {
            return Err(Error::config("synth.click_noise", "must be in [0, 0.5)"));
        }
        for (field, v) in [
            ("synth.cluster_spread", self.cluster_spread),
            ("synth.attr_affinity", self.attr_affinity),
            ("synth.popularity_exponent", self.popularity_exponent),
            ("synth.sharpness", self.sharpness),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be non-negative and finite"));
            }
        }
        if !self.click_threshold.is_finite() {
            return Err(Error::config("synth.click_threshold", "must be finite"));
        }
        Ok(())
    }

    /// The schema matching the generated columns.
    pub fn schema(&self) -> Schema {
        let mut fields = vec![
            FieldSpec::new("user", "user_id", ColumnType::Id, FieldRole::User),
            FieldSpec::new("item", "item_id", ColumnType::Id, FieldRole::Item),
            FieldSpec::new(
                "time",
                "timestamp",
                ColumnType::Timestamp,
                FieldRole::EventTime,
            ),
        ];
        for f in 0..self.user_attr_cardinalities.len() {
            let name = format!("user_attr_{f}");
            fields.push(FieldSpec::new(
                &name,
                &name,
                ColumnType::Categorical,
                FieldRole::UserAttr,
            ));
        }
        for f in 0..self.item_attr_cardinalities.len() {
            let name = format!("item_attr_{f}");
            fields.push(FieldSpec::new(
                &name,
                &name,
                ColumnType::Categorical,
                FieldRole::ItemAttr,
            ));
        }
        fields.push(FieldSpec::new(
            "device",
            "device",
            ColumnType::Categorical,
            FieldRole::Context,
        ));
        Schema::new(fields)
    }
}

/// A generated log: header plus rows, in the schema's column order.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthLog {
    pub schema: Schema,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Events per user, in user order.
    pub lengths: Vec<usize>,
    /// Ground-truth latent vectors, indexed by the number in the `u{n}` and
    /// `i{n}` tokens.
    pub user_latents: Vec<Vec<f64>>,
    pub item_latents: Vec<Vec<f64>>,
}

impl SynthLog {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io("<memory>", e))?;
        Ok(w.into_inner().expect("flushed"))
    }

    /// Writes `interactions.csv` and `schema.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(LOG_FILE), &self.to_csv()?)?;
        let mut schema = serde_json::to_vec_pretty(&self.schema)?;
        schema.push(b'\n');
        write_file(&dir.join(SCHEMA_FILE), &schema)
    }
}

fn gaussian<R: Rng>(rng: &mut R, dim: usize, std: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect()
}

fn latents<R: Rng>(rng: &mut R, n: usize, centers: &[Vec<f64>], spread: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let c = &centers[rng.random_range(0..centers.len())];
            let noise = gaussian(rng, c.len(), spread);
            c.iter().zip(noise).map(|(a, b)| a + b).collect()
        })
        .collect()
}

/// One attribute value per entity and field, chosen by softmax affinity to
/// per-value prototypes.
fn attributes<R: Rng>(
    rng: &mut R,
    latent: &[Vec<f64>],
    cards: &[usize],
    affinity: f64,
) -> Vec<Vec<usize>> {
    let dim = latent.first().map_or(0, Vec::len);
    let protos: Vec<Vec<Vec<f64>>> = cards
        .iter()
        .map(|&c| (0..c).map(|_| gaussian(rng, dim, 1.0)).collect())
        .collect();
    latent
        .iter()
        .map(|l| {
            protos
                .iter()
                .map(|ps| {
                    let logits: Vec<f64> = ps
                        .iter()
                        .map(|p| affinity * dot(l, p) / (dim as f64).sqrt())
                        .collect();
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let w: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
                    WeightedIndex::new(&w)
                        .expect("positive weights")
                        .sample(rng)
                })
                .collect()
        })
        .collect()
}

fn history_length<R: Rng>(rng: &mut R, cfg: &SynthConfig) -> usize {
    if let Some(n) = cfg.fixed_length {
        return n;
    }
    // Continuous Pareto with density ~ x^-exponent on [min, inf), floored.
    let u: f64 = 1.0 - rng.random::<f64>();
    let x = cfg.min_length as f64 * u.powf(-1.0 / (cfg.length_exponent - 1.0));
    (x.floor() as usize).clamp(cfg.min_length, cfg.max_length)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthLog> {
    cfg.validate()?;
    let d = cfg.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(derive(&[cfg.seed, 0]));
    let centers: Vec<Vec<f64>> = (0..cfg.clusters)
        .map(|_| gaussian(&mut rng, d, 1.0))
        .collect();
    let lu = latents(&mut rng, cfg.n_users, &centers, cfg.cluster_spread);
    let lv = latents(&mut rng, cfg.n_items, &centers, cfg.cluster_spread);
    let ua = attributes(
        &mut rng,
        &lu,
        &cfg.user_attr_cardinalities,
        cfg.attr_affinity,
    );
    let ia = attributes(
        &mut rng,
        &lv,
        &cfg.item_attr_cardinalities,
        cfg.attr_affinity,
    );

    // Popularity ranks are a random permutation so popularity is
    // independent of the latents.
    let mut rank: Vec<usize> = (0..cfg.n_items).collect();
    rand::seq::SliceRandom::shuffle(rank.as_mut_slice(), &mut rng);
    let pop: Vec<f64> = rank
        .iter()
        .map(|&r| (r as f64 + 1.0).powf(-cfg.popularity_exponent))
        .collect();
    let candidates = WeightedIndex::new(&pop).expect("positive weights");
    let norm = (d as f64).sqrt();

    let schema = cfg.schema();
    let header: Vec<String> = schema.fields.iter().map(|f| f.column.clone()).collect();
    let mut rows = Vec::new();
    let mut lengths = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(&[cfg.seed, 1, u as u64]));
        let len = history_length(&mut rng, cfg);
        lengths.push(len);
        let allow_repeats = cfg.repeat_clicks || len * 2 > cfg.n_items;
        let mut seen = HashSet::new();
        let mut ts: i64 = 1_600_000_000 + rng.random_range(0..86_400);
        for _ in 0..len {
            let item = if rng.random::<f64>() < cfg.click_noise {
                draw(&mut rng, &candidates, &seen, allow_repeats, |_, _| true)
            } else {
                draw(
                    &mut rng,
                    &candidates,
                    &seen,
                    allow_repeats,
                    |v, r: &mut ChaCha8Rng| {
                        r.random::<f64>()
                            < sigmoid(
                                cfg.sharpness * (dot(&lu[u], &lv[v]) / norm - cfg.click_threshold),
                            )
                    },
                )
            };
            seen.insert(item);
            ts += rng.random_range(60..7_200);
            let mut row = vec![format!("u{u}"), format!("i{item}"), ts.to_string()];
            row.extend(ua[u].iter().enumerate().map(|(f, k)| format!("ua{f}_{k}")));
            row.extend(
                ia[item]
                    .iter()
                    .enumerate()
                    .map(|(f, k)| format!("ia{f}_{k}")),
            );
            row.push(format!("c{}", rng.random_range(0..cfg.context_cardinality)));
            rows.push(row);
        }
    }
    Ok(SynthLog {
        schema,
        header,
        rows,
        lengths,
        user_latents: lu,
        item_latents: lv,
    })
}

/// Rejection sampling from the candidate stream; after a bounded number of
/// rejections the last candidate is taken as is.
fn draw<R: Rng>(
    rng: &mut R,
    candidates: &WeightedIndex<f64>,
    seen: &HashSet<usize>,
    allow_repeats: bool,
    mut accept: impl FnMut(usize, &mut R) -> bool,
) -> usize {
    let mut last = 0;
    for _ in 0..CANDIDATE_TRIES {
        let v = candidates.sample(rng);
        last = v;
        if !allow_repeats && seen.contains(&v) {
            continue;
        }
        if accept(v, rng) {
            return v;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_reader, Dataset, NegativeMode};

    fn small(n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_users: n,
            n_items: n,
            clusters: 4,
            user_attr_cardinalities: vec![5],
            item_attr_cardinalities: vec![5, 3],
            max_length: 30,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn single_user_single_item_parses() {
        let cfg = SynthConfig {
            n_users: 1,
            n_items: 1,
            fixed_length: Some(4),
            ..SynthConfig::default()
        };
        let log = generate(&cfg).unwrap();
        assert_eq!(log.rows.len(), 4);
        let parsed = parse_reader(log.to_csv().unwrap().as_slice(), &log.schema).unwrap();
        assert_eq!(parsed.report.total_rows, 4);
        assert_eq!(parsed.report.rejected_rows, 0);
        assert_eq!(parsed.sequences[0].len(), 4);
    }

    #[test]
    fn lengths_are_heavy_tailed() {
        let cfg = SynthConfig {
            n_users: 1000,
            n_items: 200,
            length_exponent: 2.0,
            ..SynthConfig::default()
        };
        let log = generate(&cfg).unwrap();
        let mut l = log.lengths.clone();
        l.sort_unstable();
        let median = l[l.len() / 2] as f64;
        let mean = l.iter().sum::<usize>() as f64 / l.len() as f64;
        assert!(median < mean, "median {median} mean {mean}");
        assert_eq!(log.rows.len(), l.iter().sum::<usize>());
    }

    #[test]
    fn same_seed_same_log() {
        let a = generate(&small(60, 3)).unwrap();
        let b = generate(&small(60, 3)).unwrap();
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
        let c = generate(&small(60, 4)).unwrap();
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn zero_affinity_still_uses_every_value() {
        let cfg = SynthConfig {
            n_users: 400,
            n_items: 100,
            attr_affinity: 0.0,
            ..small(400, 1)
        };
        let log = generate(&cfg).unwrap();
        let values: HashSet<&str> = log.rows.iter().map(|r| r[3].as_str()).collect();
        assert_eq!(values.len(), 5, "zero affinity spreads values uniformly");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = |f: fn(&mut SynthConfig)| {
            let mut c = SynthConfig::default();
            f(&mut c);
            c.validate().unwrap_err().to_string()
        };
        assert!(bad(|c| c.n_users = 0).contains("synth.n_users"));
        assert!(bad(|c| c.length_exponent = 1.0).contains("synth.length_exponent"));
        assert!(bad(|c| c.click_noise = 0.5).contains("synth.click_noise"));
        assert!(bad(|c| c.item_attr_cardinalities = vec![3, 0])
            .contains("synth.item_attr_cardinalities[1]"));
    }

    #[test]
    fn survives_the_pipeline() {
        use crate::graphs::{GraphSet, SimilarityParams};
        use crate::model::{train, ModelSpec, TrainConfig};
        for (n, seed) in [(50, 0), (80, 1)] {
            let log = generate(&small(n, seed)).unwrap();
            let parsed = parse_reader(log.to_csv().unwrap().as_slice(), &log.schema).unwrap();
            let ds = Dataset::build(&parsed, 10, seed, NegativeMode::Uniform).unwrap();
            assert_eq!(ds.dropped_users, 0);
            let graphs = GraphSet::build(&ds, &SimilarityParams::default()).unwrap();
            let spec = ModelSpec {
                dim: 4,
                mlp: vec![8, 1],
                ..ModelSpec::default()
            };
            let cfg = TrainConfig {
                epochs: 1,
                batch_size: 256,
                ..TrainConfig::default()
            };
            let out = train(&spec, &ds.layout(), &graphs, &cfg, &ds.train, &ds.val).unwrap();
            assert!(out.log[0].train_logloss.is_finite());
        }
    }
}
