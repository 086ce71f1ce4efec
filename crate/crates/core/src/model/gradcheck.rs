//! Central finite-difference check of the full model gradient.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::network::{batch_gradient, Network};
use super::{ModelSpec, Params};
use crate::aggregators::{Activation, AggregatorKind};
use crate::data::{FieldRange, Instance, Layout};
use crate::error::Result;
use crate::graphs::{EdgeKind, GraphBuilder, GraphSet};

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_EPSILON: f64 = 1e-4;
/// Seed of the builtin fixture's parameters.
pub const FIXTURE_SEED: u64 = 0;

/// A model, its graphs and a batch small enough to perturb every parameter.
#[derive(Debug, Clone)]
pub struct GradFixture {
    pub spec: ModelSpec,
    pub layout: Layout,
    pub graphs: GraphSet,
    pub instances: Vec<Instance>,
    pub l2: f64,
}

/// Four users, four items, one three-valued user attribute (so four fields
/// per instance), d = 6 and an 8-node collaborative graph with UU, VV and
/// UV edges.
pub fn builtin_fixture(kind: AggregatorKind) -> GradFixture {
    let layout = Layout {
        n_users: 4,
        n_items: 4,
        user_attr: vec![FieldRange {
            offset: 8,
            cardinality: 3,
        }],
        item_attr: vec![],
        context: vec![],
        total: 11,
    };
    let user_values: [&[u32]; 4] = [&[0], &[1], &[2, 1], &[0]];

    let mut ua = GraphBuilder::new(7);
    for (u, vals) in user_values.iter().enumerate() {
        for &k in *vals {
            ua.add_edge(u as u32, 4 + k, EdgeKind::UserAttr);
        }
    }
    let mut cf = GraphBuilder::new(8);
    for (a, b, k) in [
        (0, 1, EdgeKind::UserUser),
        (2, 3, EdgeKind::UserUser),
        (4, 5, EdgeKind::ItemItem),
        (5, 6, EdgeKind::ItemItem),
        (0, 4, EdgeKind::UserItem),
        (1, 5, EdgeKind::UserItem),
        (1, 6, EdgeKind::UserItem),
        (2, 7, EdgeKind::UserItem),
        (3, 4, EdgeKind::UserItem),
    ] {
        cf.add_edge(a, b, k);
    }
    let graphs = GraphSet {
        user_attr: vec![ua.build()],
        item_attr: vec![],
        collaborative: cf.build(),
    };

    let inst = |user: u32, item: u32, behaviors: &[u32], label: u8| Instance {
        user,
        item: 4 + item,
        user_attrs: vec![user_values[user as usize].iter().map(|k| 8 + k).collect()],
        item_attrs: vec![],
        behaviors: behaviors.iter().map(|b| 4 + b).collect(),
        context: vec![],
        label,
    };
    let instances = vec![
        inst(0, 1, &[0], 1),
        inst(0, 3, &[0], 0),
        inst(1, 2, &[1, 2], 1),
        inst(1, 0, &[1], 0),
        inst(2, 3, &[], 1),
        inst(3, 1, &[0, 2, 3], 0),
    ];
    let spec = ModelSpec {
        dim: 6,
        mlp: vec![5, 1],
        aggregator: kind,
        activation: Activation::LeakyRelu,
        attr_layers: 2,
        within_layers: 2,
        across_layers: 2,
        ..ModelSpec::default()
    };
    GradFixture {
        spec,
        layout,
        graphs,
        instances,
        l2: 1e-3,
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ClassReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub by_class: BTreeMap<String, ClassReport>,
    /// Parameter with the largest error, as `blob[index]`.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRAD_TOLERANCE
    }

    fn merge(&mut self, other: GradCheckReport) {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        for (k, c) in other.by_class {
            let e = self.by_class.entry(k).or_default();
            e.max_rel_error = e.max_rel_error.max(c.max_rel_error);
            e.checked += c.checked;
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn class_of(blob: &str, kind: AggregatorKind) -> String {
    if blob == "embeddings" {
        return "embedding".into();
    }
    if let Some(rest) = blob.strip_prefix("mlp.") {
        return if rest.ends_with(".w") {
            "mlp.w"
        } else {
            "mlp.b"
        }
        .into();
    }
    let w = if blob.contains(".w2.") { "w2" } else { "w1" };
    match kind {
        AggregatorKind::Gcn => "gcn.w".into(),
        AggregatorKind::Ngcf => format!("ngcf.{w}"),
        AggregatorKind::LightGcn => "lightgcn".into(),
    }
}

/// Compare the analytic gradient of the regularized objective against
/// central differences for every scalar parameter.
pub fn grad_check(fx: &GradFixture, params: &Params, eps: f64) -> Result<GradCheckReport> {
    let net = Network::new(&fx.spec, &fx.layout, &fx.graphs)?;
    let batch: Vec<&Instance> = fx.instances.iter().collect();
    let objective =
        |p: &Params| batch_gradient(&net, p, &batch, fx.l2, 0.0, 0, 0).map(|g| g.objective);
    let analytic = batch_gradient(&net, params, &batch, fx.l2, 0.0, 0, 0)?.grads;

    let names = params.names();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        by_class: BTreeMap::new(),
        worst: String::new(),
    };
    let mut probe = params.clone();
    for (b, name) in names.iter().enumerate() {
        let class = class_of(name, fx.spec.aggregator);
        for i in 0..analytic.blobs()[b].len() {
            let orig = probe.blobs()[b][i];
            probe.blobs_mut()[b][i] = orig + eps;
            let up = objective(&probe)?;
            probe.blobs_mut()[b][i] = orig - eps;
            let down = objective(&probe)?;
            probe.blobs_mut()[b][i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(analytic.blobs()[b][i], numeric);
            let c = report.by_class.entry(class.clone()).or_default();
            c.max_rel_error = c.max_rel_error.max(err);
            c.checked += 1;
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}

/// Parameters of the builtin fixture.
///
/// Central differences are only meaningful where no ReLU or LeakyReLU input
/// and no clamped probability changes side within `±eps`; these parameters
/// keep every such kink out of reach of [`GRAD_EPSILON`].
pub fn builtin_params(fx: &GradFixture) -> Params {
    Params::init(
        &fx.spec,
        &fx.layout,
        &mut ChaCha8Rng::seed_from_u64(FIXTURE_SEED),
    )
}

/// The builtin fixture under every aggregator kind, merged into one report.
pub fn run_builtin_grad_check() -> Result<GradCheckReport> {
    let mut total: Option<GradCheckReport> = None;
    for kind in [
        AggregatorKind::Gcn,
        AggregatorKind::Ngcf,
        AggregatorKind::LightGcn,
    ] {
        let fx = builtin_fixture(kind);
        let r = grad_check(&fx, &builtin_params(&fx), GRAD_EPSILON)?;
        match &mut total {
            None => total = Some(r),
            Some(t) => t.merge(r),
        }
    }
    Ok(total.expect("three kinds checked"))
}
