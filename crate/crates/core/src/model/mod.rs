//! The CTR model: embedding table, graph enhancement, inner-product layer
//! and MLP, plus training, checkpoints and gradient checking.

mod checkpoint;
mod gradcheck;
mod layers;
mod network;
mod optim;
mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{dump_embeddings, load_embeddings, ModelState};
pub use gradcheck::{
    builtin_fixture, builtin_params, grad_check, relative_error, run_builtin_grad_check,
    ClassReport, GradCheckReport, GradFixture, FIXTURE_SEED, GRAD_EPSILON, GRAD_TOLERANCE,
};
pub use layers::{
    inner_product_backward, inner_product_layer, instance_loss, logit_grad, mlp_backward,
    mlp_forward, pool_multivalued, representation_len, sigmoid, Dense, MlpTrace,
};
pub use network::{
    batch_gradient, field_bundle, op_count, predict, reset_op_count, score_instance, BatchGradient,
    Network,
};
pub use optim::Adam;
pub use train::{initial_params, train, EpochLog, TrainConfig, TrainOutcome, DIVERGENCE_LOSS};

pub use crate::metrics::logloss;

use crate::aggregators::{Activation, AggregatorKind, AggregatorParams, PoolMode};
use crate::data::Layout;
use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Which graph modules are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub attr: bool,
    pub within: bool,
    pub across: bool,
}

impl Variant {
    pub const FULL: Variant = Variant {
        attr: true,
        within: true,
        across: true,
    };
    pub const BASE: Variant = Variant {
        attr: false,
        within: false,
        across: false,
    };

    pub fn is_base(&self) -> bool {
        !(self.attr || self.within || self.across)
    }
}

/// Named model variants: the full model, single-module ablations and the
/// graph-free base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Everything on.
    None,
    /// Collaborative graph only (both stages).
    NoAttr,
    /// User-user and item-item edges only.
    UuVvOnly,
    /// User-item edges only.
    UvOnly,
    /// Attribute graphs only.
    AttrOnly,
    /// No graph module.
    BaseOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::None,
        Ablation::NoAttr,
        Ablation::UuVvOnly,
        Ablation::UvOnly,
        Ablation::AttrOnly,
        Ablation::BaseOnly,
    ];

    pub fn variant(self) -> Variant {
        let v = |attr, within, across| Variant {
            attr,
            within,
            across,
        };
        match self {
            Ablation::None => v(true, true, true),
            Ablation::NoAttr => v(false, true, true),
            Ablation::UuVvOnly => v(false, true, false),
            Ablation::UvOnly => v(false, false, true),
            Ablation::AttrOnly => v(true, false, false),
            Ablation::BaseOnly => v(false, false, false),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoAttr => "no-attr",
            Ablation::UuVvOnly => "uu-vv-only",
            Ablation::UvOnly => "uv-only",
            Ablation::AttrOnly => "attr-only",
            Ablation::BaseOnly => "base-only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

/// Architecture of a model; stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub dim: usize,
    /// Widths of the MLP layers; the last must be 1.
    pub mlp: Vec<usize>,
    pub aggregator: AggregatorKind,
    pub activation: Activation,
    pub pool: PoolMode,
    pub attr_layers: usize,
    pub within_layers: usize,
    pub across_layers: usize,
    /// Standard deviation of the normal embedding initialization.
    pub init_std: f64,
    pub variant: Variant,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            dim: 10,
            mlp: vec![400, 400, 400, 1],
            aggregator: AggregatorKind::LightGcn,
            activation: Activation::LeakyRelu,
            pool: PoolMode::Sum,
            attr_layers: 2,
            within_layers: 2,
            across_layers: 2,
            init_std: 0.1,
            variant: Variant::FULL,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config(
                "model.dim",
                "embedding dimension must be positive",
            ));
        }
        if self.mlp.last() != Some(&1) || self.mlp.contains(&0) {
            return Err(Error::config(
                "model.mlp",
                "layer widths must be positive and end with 1",
            ));
        }
        for (name, l) in [
            ("model.attr_layers", self.attr_layers),
            ("model.within_layers", self.within_layers),
            ("model.across_layers", self.across_layers),
        ] {
            if !(1..=4).contains(&l) {
                return Err(Error::config(name, "layer count must be in 1..=4"));
            }
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::config(
                "model.init_std",
                "must be positive and finite",
            ));
        }
        Ok(())
    }
}

/// Every trainable tensor. The same shape doubles as a gradient and as
/// optimizer moment storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub embeddings: Mat,
    pub user_fields: Vec<AggregatorParams>,
    pub item_fields: Vec<AggregatorParams>,
    pub within: AggregatorParams,
    pub across: AggregatorParams,
    pub mlp: Vec<Dense>,
}

impl Params {
    /// Draw order: embeddings, user fields, item fields, within, across, MLP.
    pub fn init<R: Rng>(spec: &ModelSpec, layout: &Layout, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, spec.init_std).expect("validated std");
        let d = spec.dim;
        let embeddings = Mat::from_vec(
            layout.total,
            d,
            (0..layout.total * d).map(|_| normal.sample(rng)).collect(),
        );
        let agg = |layers, rng: &mut R| {
            AggregatorParams::init(spec.aggregator, spec.activation, layers, d, rng)
        };
        let user_fields = (0..layout.user_attr.len())
            .map(|_| agg(spec.attr_layers, rng))
            .collect();
        let item_fields = (0..layout.item_attr.len())
            .map(|_| agg(spec.attr_layers, rng))
            .collect();
        let within = agg(spec.within_layers, rng);
        let across = agg(spec.across_layers, rng);
        let mut width = representation_len(layout.n_fields(), d);
        let mut mlp = Vec::new();
        for &w in &spec.mlp {
            mlp.push(Dense::init(width, w, rng));
            width = w;
        }
        Params {
            embeddings,
            user_fields,
            item_fields,
            within,
            across,
            mlp,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            embeddings: Mat::zeros(self.embeddings.rows(), self.embeddings.cols()),
            user_fields: self
                .user_fields
                .iter()
                .map(AggregatorParams::zeros_like)
                .collect(),
            item_fields: self
                .item_fields
                .iter()
                .map(AggregatorParams::zeros_like)
                .collect(),
            within: self.within.zeros_like(),
            across: self.across.zeros_like(),
            mlp: self.mlp.iter().map(Dense::zeros_like).collect(),
        }
    }

    fn agg_names(prefix: &str, p: &AggregatorParams) -> Vec<String> {
        let w1 = (0..p.w1.len()).map(|l| format!("{prefix}.w1.{l}"));
        let w2 = (0..p.w2.len()).map(|l| format!("{prefix}.w2.{l}"));
        w1.chain(w2).collect()
    }

    /// Blob names in visiting order.
    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["embeddings".to_string()];
        for (f, p) in self.user_fields.iter().enumerate() {
            out.extend(Self::agg_names(&format!("user_field.{f}"), p));
        }
        for (f, p) in self.item_fields.iter().enumerate() {
            out.extend(Self::agg_names(&format!("item_field.{f}"), p));
        }
        out.extend(Self::agg_names("within", &self.within));
        out.extend(Self::agg_names("across", &self.across));
        for l in 0..self.mlp.len() {
            out.push(format!("mlp.{l}.w"));
            out.push(format!("mlp.{l}.b"));
        }
        out
    }

    /// Every tensor as a flat slice, in the order of [`Params::names`].
    pub fn blobs(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.embeddings.as_slice()];
        for p in self
            .user_fields
            .iter()
            .chain(&self.item_fields)
            .chain([&self.within, &self.across])
        {
            out.extend(p.mats().map(Mat::as_slice));
        }
        for l in &self.mlp {
            out.push(l.w.as_slice());
            out.push(&l.b);
        }
        out
    }

    pub fn blobs_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embeddings.as_mut_slice()];
        for p in self
            .user_fields
            .iter_mut()
            .chain(self.item_fields.iter_mut())
            .chain([&mut self.within, &mut self.across])
        {
            out.extend(p.mats_mut().map(Mat::as_mut_slice));
        }
        for l in &mut self.mlp {
            out.push(l.w.as_mut_slice());
            out.push(&mut l.b);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.blobs().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Name of the first blob holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.names()
            .into_iter()
            .zip(self.blobs())
            .find(|(_, b)| b.iter().any(|x| !x.is_finite()))
            .map(|(n, _)| n)
    }

    pub fn sum_squares(&self) -> f64 {
        self.blobs()
            .iter()
            .flat_map(|b| b.iter())
            .map(|x| x * x)
            .sum()
    }

    /// `self += a * other`, blob by blob.
    pub fn axpy(&mut self, a: f64, other: &Params) {
        for (dst, src) in self.blobs_mut().into_iter().zip(other.blobs()) {
            crate::tensor::axpy(a, src, dst);
        }
    }
}
