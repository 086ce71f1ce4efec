//! Minibatch training with Adam, per-epoch validation and early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::ModelState;
use super::network::{batch_gradient, predict, Network};
use super::optim::Adam;
use super::{ModelSpec, Params};
use crate::data::{Instance, Layout};
use crate::error::{Error, Result};
use crate::graphs::{sample_subgraph, GraphSet};
use crate::metrics::{auc, logloss};
use crate::seeding::derive;

const INIT_STREAM: u64 = 0x1417;
const SHUFFLE_STREAM: u64 = 0x5f1e;
const DROPOUT_STREAM: u64 = 0xd209;
const SAMPLE_STREAM: u64 = 0x5a3b;

/// Objective values above this abort training.
pub const DIVERGENCE_LOSS: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub l2: f64,
    pub dropout: f64,
    /// Epochs without a validation AUC improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Per-node neighbor cap on the collaborative graph during training.
    pub fanout: Option<usize>,
    /// Sampling only engages when the collaborative graph has more edges.
    pub sample_threshold: usize,
    /// Record wall-clock seconds per epoch. Off keeps logs bitwise
    /// reproducible.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 2000,
            lr: 1e-3,
            l2: 0.0,
            dropout: 0.0,
            patience: 2,
            seed: 0,
            fanout: None,
            sample_threshold: 1_000_000,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be positive and finite"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::config("train.l2", "must be non-negative and finite"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("train.dropout", "must be in [0, 1)"));
        }
        if self.fanout == Some(0) {
            return Err(Error::config("train.fanout", "must be positive"));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_logloss: f64,
    pub val_auc: Option<f64>,
    pub val_logloss: Option<f64>,
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub state: ModelState,
    pub log: Vec<EpochLog>,
    /// 1-based epoch the state comes from; 0 for the initial state.
    pub best_epoch: usize,
}

/// Validation score used for model selection: AUC, or negative logloss when
/// the validation set has a single class.
fn selection_score(val_auc: Option<f64>, val_logloss: Option<f64>) -> f64 {
    val_auc
        .or(val_logloss.map(|l| -l))
        .unwrap_or(f64::NEG_INFINITY)
}

pub fn initial_params(spec: &ModelSpec, layout: &Layout, seed: u64) -> Params {
    Params::init(
        spec,
        layout,
        &mut ChaCha8Rng::seed_from_u64(derive(&[seed, INIT_STREAM])),
    )
}

pub fn train(
    spec: &ModelSpec,
    layout: &Layout,
    graphs: &GraphSet,
    cfg: &TrainConfig,
    train_set: &[Instance],
    val_set: &[Instance],
) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let eval_net = Network::new(spec, layout, graphs)?;
    let mut params = initial_params(spec, layout, cfg.seed);
    eval_net.check_params(&params)?;
    let mut adam = Adam::new(&params, cfg.lr);
    let snapshot = |params: &Params, adam: &Adam| ModelState {
        spec: spec.clone(),
        layout: layout.clone(),
        params: params.clone(),
        adam: adam.clone(),
        seed: cfg.seed,
        config_hash: [0; 32],
    };
    let mut best = snapshot(&params, &adam);
    let mut best_epoch = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut log = Vec::with_capacity(cfg.epochs);

    let cf = &graphs.collaborative;
    let sampling = cfg
        .fanout
        .filter(|_| cf.edge_count() > cfg.sample_threshold);
    let mut train_net = eval_net.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if let Some(fanout) = sampling {
            let sampled =
                sample_subgraph(cf, fanout, derive(&[cfg.seed, SAMPLE_STREAM]), epoch as u64);
            train_net.set_collaborative(&sampled);
        }
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(&[
            cfg.seed,
            SHUFFLE_STREAM,
            epoch as u64,
        ])));

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &train_set[i]).collect();
            let step = adam.step;
            let g = batch_gradient(
                &train_net,
                &params,
                &batch,
                cfg.l2,
                cfg.dropout,
                derive(&[cfg.seed, DROPOUT_STREAM]),
                step,
            )?;
            if !(g.objective <= DIVERGENCE_LOSS) {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: g.objective,
                });
            }
            if let Some(name) = g.grads.first_non_finite() {
                return Err(Error::NonFinite {
                    path: format!("grad/{name}"),
                });
            }
            adam.update(&mut params, &g.grads);
            if let Some(name) = params.first_non_finite() {
                return Err(Error::NonFinite { path: name });
            }
            loss_sum += g.loss * batch.len() as f64;
        }
        let train_logloss = loss_sum / train_set.len() as f64;

        let (val_auc, val_logloss) = if val_set.is_empty() {
            (None, None)
        } else {
            let scores = predict(&eval_net, &params, val_set)?;
            let labels: Vec<u8> = val_set.iter().map(|i| i.label).collect();
            (auc(&scores, &labels).ok(), Some(logloss(&scores, &labels)?))
        };
        log::info!("epoch {epoch}: train logloss {train_logloss:.5}, val auc {val_auc:?}, val logloss {val_logloss:?}");
        log.push(EpochLog {
            epoch,
            train_logloss,
            val_auc,
            val_logloss,
            wall_time: cfg.log_wall_time.then(|| started.elapsed().as_secs_f64()),
        });

        let score = selection_score(val_auc, val_logloss);
        if val_set.is_empty() || score > best_score {
            best_score = score;
            best = snapshot(&params, &adam);
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        state: best,
        log,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregators::AggregatorKind;
    use crate::graphs::GraphBuilder;
    use crate::model::gradcheck::builtin_fixture;
    use crate::model::layers::sigmoid;
    use crate::tensor::dot;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn zero_epochs_returns_initial_state() {
        let fx = builtin_fixture(AggregatorKind::Ngcf);
        let cfg = TrainConfig {
            epochs: 0,
            seed: 5,
            ..TrainConfig::default()
        };
        let out = train(
            &fx.spec,
            &fx.layout,
            &fx.graphs,
            &cfg,
            &fx.instances,
            &fx.instances,
        )
        .unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.best_epoch, 0);
        assert_eq!(out.state.params, initial_params(&fx.spec, &fx.layout, 5));
        assert_eq!(out.state.adam.step, 0);
    }

    #[test]
    fn full_batch_descent_decreases_loss() {
        for kind in [
            AggregatorKind::Gcn,
            AggregatorKind::Ngcf,
            AggregatorKind::LightGcn,
        ] {
            let fx = builtin_fixture(kind);
            let net = Network::new(&fx.spec, &fx.layout, &fx.graphs).unwrap();
            let mut p = initial_params(&fx.spec, &fx.layout, 2);
            let batch: Vec<&Instance> = fx.instances.iter().collect();
            let mut prev = f64::INFINITY;
            for _ in 0..5 {
                let g = batch_gradient(&net, &p, &batch, 0.0, 0.0, 0, 0).unwrap();
                assert!(g.loss < prev, "{kind:?}: {} !< {prev}", g.loss);
                prev = g.loss;
                p.axpy(-1e-3, &g.grads);
            }
        }
    }

    #[test]
    fn zero_l2_is_the_unregularized_gradient() {
        let fx = builtin_fixture(AggregatorKind::Gcn);
        let net = Network::new(&fx.spec, &fx.layout, &fx.graphs).unwrap();
        let p = initial_params(&fx.spec, &fx.layout, 4);
        let batch: Vec<&Instance> = fx.instances.iter().collect();
        let plain = batch_gradient(&net, &p, &batch, 0.0, 0.0, 0, 0).unwrap();
        assert_eq!(plain.objective, plain.loss);
        let lambda = 0.25;
        let reg = batch_gradient(&net, &p, &batch, lambda, 0.0, 0, 0).unwrap();
        assert_eq!(reg.loss, plain.loss);
        let mut diff = reg.grads.clone();
        diff.axpy(-lambda, &p);
        for (a, b) in diff.blobs().iter().zip(plain.grads.blobs()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn unreachable_embedding_gets_no_gradient() {
        let mut fx = builtin_fixture(AggregatorKind::Gcn);
        // Item 7 links to the rest of the graph only through user 2.
        fx.instances
            .retain(|i| i.user != 2 && i.item != 7 && !i.behaviors.contains(&7));
        let mut b = GraphBuilder::new(8);
        for (x, y, k) in fx.graphs.collaborative.edges() {
            if (x, y) != (2, 7) {
                b.add_edge(x, y, k);
            }
        }
        fx.graphs.collaborative = b.build();
        let net = Network::new(&fx.spec, &fx.layout, &fx.graphs).unwrap();
        let p = initial_params(&fx.spec, &fx.layout, 4);
        let batch: Vec<&Instance> = fx.instances.iter().collect();
        let g = batch_gradient(&net, &p, &batch, 0.0, 0.0, 0, 0).unwrap();
        assert!(g.grads.embeddings.row(7).iter().all(|&x| x == 0.0));
        assert!(g.grads.embeddings.row(4).iter().any(|&x| x != 0.0));
    }

    fn two_field_fixture(seed: u64) -> (ModelSpec, Layout, GraphSet, Vec<Instance>) {
        let (m, n, d) = (12usize, 12usize, 4usize);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut latent = |k: usize| -> Vec<Vec<f64>> {
            (0..k)
                .map(|_| {
                    (0..d)
                        .map(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                        .collect()
                })
                .collect()
        };
        let (lu, lv) = (latent(m), latent(n));
        let mut instances = Vec::new();
        for u in 0..m {
            for v in 0..n {
                let p = sigmoid(dot(&lu[u], &lv[v]));
                instances.push(Instance {
                    user: u as u32,
                    item: (m + v) as u32,
                    user_attrs: vec![],
                    item_attrs: vec![],
                    behaviors: vec![],
                    context: vec![],
                    label: u8::from(p > 0.5),
                });
            }
        }
        let layout = Layout {
            n_users: m,
            n_items: n,
            user_attr: vec![],
            item_attr: vec![],
            context: vec![],
            total: m + n,
        };
        let graphs = GraphSet {
            user_attr: vec![],
            item_attr: vec![],
            collaborative: GraphBuilder::new(m + n).build(),
        };
        let spec = ModelSpec {
            dim: 8,
            mlp: vec![16, 1],
            variant: super::super::Variant::BASE,
            ..ModelSpec::default()
        };
        (spec, layout, graphs, instances)
    }

    #[test]
    fn separable_two_field_data_is_learned() {
        let (spec, layout, graphs, instances) = two_field_fixture(11);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 16,
            lr: 0.01,
            patience: 50,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train(&spec, &layout, &graphs, &cfg, &instances, &[]).unwrap();
        let last = out.log.last().unwrap();
        assert_eq!(out.log.len(), 50);
        assert!(last.train_logloss < 0.05, "{}", last.train_logloss);
    }

    #[test]
    fn same_seed_gives_identical_logs() {
        let fx = builtin_fixture(AggregatorKind::Ngcf);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 4,
            lr: 0.01,
            dropout: 0.2,
            patience: 10,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            train(
                &fx.spec,
                &fx.layout,
                &fx.graphs,
                &cfg,
                &fx.instances,
                &fx.instances,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.log, b.log);
        assert_eq!(a.state.to_bytes(), b.state.to_bytes());
    }

    #[test]
    fn neighbor_sampling_engages_above_threshold() {
        let fx = builtin_fixture(AggregatorKind::LightGcn);
        let base = TrainConfig {
            epochs: 2,
            batch_size: 3,
            lr: 0.01,
            seed: 3,
            patience: 10,
            ..TrainConfig::default()
        };
        let sampled = TrainConfig {
            fanout: Some(1),
            sample_threshold: 0,
            ..base.clone()
        };
        let a = train(&fx.spec, &fx.layout, &fx.graphs, &base, &fx.instances, &[]).unwrap();
        let b = train(
            &fx.spec,
            &fx.layout,
            &fx.graphs,
            &sampled,
            &fx.instances,
            &[],
        )
        .unwrap();
        assert_ne!(a.log[0].train_logloss, b.log[0].train_logloss);
        let unused = TrainConfig {
            fanout: Some(1),
            ..base.clone()
        };
        let c = train(
            &fx.spec,
            &fx.layout,
            &fx.graphs,
            &unused,
            &fx.instances,
            &[],
        )
        .unwrap();
        assert_eq!(a.log, c.log);
    }

    #[test]
    fn divergence_aborts() {
        let fx = builtin_fixture(AggregatorKind::Gcn);
        let cfg = TrainConfig {
            epochs: 1,
            l2: 1e6,
            ..TrainConfig::default()
        };
        let err = train(&fx.spec, &fx.layout, &fx.graphs, &cfg, &fx.instances, &[]).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Diverged {
                    epoch: 1,
                    step: 0,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = TrainConfig {
            dropout: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad
            .validate()
            .unwrap_err()
            .to_string()
            .contains("train.dropout"));
    }
}
