//! Whole-model forward and reverse passes.
//!
//! Enhancement maps the initial table `E` to the final table `P` (attribute
//! convolution, then the collaborative stages). Scoring an instance only
//! reads rows of `P`, so the per-instance path is identical for the base
//! model (`P = E`) and the graph-enhanced one.

use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::layers::{
    inner_product_backward, inner_product_layer, instance_loss, logit_grad, mlp_backward,
    mlp_forward, pool_multivalued, representation_len, Dense,
};
use super::{ModelSpec, Params};
use crate::attrconv::{AttrCache, AttrConv};
use crate::collabconv::{CollabCache, CollabConv};
use crate::data::{Instance, Layout};
use crate::error::{Error, Result};
use crate::graphs::{GraphSet, SparseGraph};
use crate::seeding::derive;
use crate::tensor::{axpy, Mat};

/// Instances per parallel work unit; fixed so gradient sums do not depend
/// on the thread count.
const INSTANCE_CHUNK: usize = 128;

thread_local! {
    static OPS: Cell<u64> = const { Cell::new(0) };
}

/// Arithmetic operations spent in [`score_instance`] on this thread.
pub fn op_count() -> u64 {
    OPS.with(|c| c.get())
}

pub fn reset_op_count() {
    OPS.with(|c| c.set(0));
}

fn count_ops(n: u64) {
    OPS.with(|c| c.set(c.get() + n));
}

/// Row lists of every field of an instance, in field order.
fn slots(inst: &Instance) -> Vec<&[u32]> {
    let mut s: Vec<&[u32]> = vec![
        std::slice::from_ref(&inst.user),
        std::slice::from_ref(&inst.item),
    ];
    s.extend(inst.user_attrs.iter().map(Vec::as_slice));
    s.extend(inst.item_attrs.iter().map(Vec::as_slice));
    s.push(&inst.behaviors);
    s.extend(inst.context.iter().map(Vec::as_slice));
    s
}

/// One pooled vector per field, read from `table`.
pub fn field_bundle(table: &Mat, inst: &Instance) -> Vec<Vec<f64>> {
    slots(inst)
        .into_iter()
        .map(|rows| {
            let vs: Vec<&[f64]> = rows.iter().map(|&r| table.row(r as usize)).collect();
            pool_multivalued(&vs, table.cols())
        })
        .collect()
}

/// Click probability of one instance from a finished table. Performs no
/// graph work; the operation counter records its arithmetic.
pub fn score_instance(table: &Mat, mlp: &[Dense], inst: &Instance) -> f64 {
    let d = table.cols() as u64;
    let bundle = field_bundle(table, inst);
    let f = bundle.len() as u64;
    let rows_read: u64 = slots(inst).iter().map(|s| s.len() as u64).sum();
    let r = inner_product_layer(&bundle).expect("instances have at least two fields");
    let t = mlp_forward::<ChaCha8Rng>(&r, mlp, None);
    let mlp_ops: u64 = mlp
        .iter()
        .map(|l| (l.input() * l.output() + l.output()) as u64)
        .sum();
    count_ops(rows_read * d + f * (f - 1) / 2 * d + mlp_ops);
    t.prob
}

/// The graph side of a model: which modules run and over which graphs.
#[derive(Debug, Clone)]
pub struct Network {
    pub spec: ModelSpec,
    pub layout: Layout,
    attr: AttrConv,
    collab: CollabConv,
}

pub struct EnhanceCache {
    attr: Option<AttrCache>,
    z: Option<Mat>,
    collab: Option<CollabCache>,
}

impl Network {
    pub fn new(spec: &ModelSpec, layout: &Layout, graphs: &GraphSet) -> Result<Self> {
        let attr = AttrConv::new(layout, &graphs.user_attr, &graphs.item_attr, spec.pool)?;
        if graphs.collaborative.node_count() != layout.n_users + layout.n_items {
            return Err(Error::Dimension {
                context: "collaborative graph nodes",
                expected: layout.n_users + layout.n_items,
                got: graphs.collaborative.node_count(),
            });
        }
        let mut collab = CollabConv::new(&graphs.collaborative, spec.pool);
        collab.within_enabled = spec.variant.within;
        collab.across_enabled = spec.variant.across;
        Ok(Network {
            spec: spec.clone(),
            layout: layout.clone(),
            attr,
            collab,
        })
    }

    /// Swap in another collaborative graph on the same node space (used for
    /// neighbor-sampled training epochs).
    pub fn set_collaborative(&mut self, cf: &SparseGraph) {
        let mut collab = CollabConv::new(cf, self.spec.pool);
        collab.within_enabled = self.collab.within_enabled;
        collab.across_enabled = self.collab.across_enabled;
        collab.order = self.collab.order;
        self.collab = collab;
    }

    pub fn collab_mut(&mut self) -> &mut CollabConv {
        &mut self.collab
    }

    fn uses_collab(&self) -> bool {
        self.spec.variant.within || self.spec.variant.across
    }

    /// Final table `P`.
    pub fn enhance(&self, params: &Params) -> Result<Mat> {
        Ok(self.forward_enhance(params)?.0)
    }

    pub fn forward_enhance(&self, params: &Params) -> Result<(Mat, EnhanceCache)> {
        let mut cache = EnhanceCache {
            attr: None,
            z: None,
            collab: None,
        };
        let mut table = params.embeddings.clone();
        if self.spec.variant.attr {
            let (z, c) = self
                .attr
                .forward(&table, &params.user_fields, &params.item_fields)?;
            cache.attr = Some(c);
            table = z;
        }
        if self.uses_collab() {
            let (p, c) = self
                .collab
                .forward(&table, &params.within, &params.across)?;
            cache.collab = Some(c);
            cache.z = Some(table);
            table = p;
        }
        Ok((table, cache))
    }

    /// Pull `dp` back through enhancement into `grads`.
    pub fn backward_enhance(
        &self,
        params: &Params,
        cache: &EnhanceCache,
        dp: Mat,
        grads: &mut Params,
    ) {
        let mut d = dp;
        if let Some(c) = &cache.collab {
            d = self.collab.backward(
                c,
                &params.within,
                &params.across,
                &d,
                &mut grads.within,
                &mut grads.across,
            );
        }
        if let Some(c) = &cache.attr {
            d = self.attr.backward(
                c,
                &params.user_fields,
                &params.item_fields,
                &d,
                &mut grads.user_fields,
                &mut grads.item_fields,
            );
        }
        grads.embeddings.add_assign(&d);
    }

    pub fn check_params(&self, params: &Params) -> Result<()> {
        if params.embeddings.rows() != self.layout.total
            || params.embeddings.cols() != self.spec.dim
        {
            return Err(Error::Dimension {
                context: "embedding table",
                expected: self.layout.total,
                got: params.embeddings.rows(),
            });
        }
        super::layers::check_mlp(
            &params.mlp,
            representation_len(self.layout.n_fields(), self.spec.dim),
        )
    }
}

/// Scores for `instances` after one enhancement pass.
pub fn predict(net: &Network, params: &Params, instances: &[Instance]) -> Result<Vec<f64>> {
    let table = net.enhance(params)?;
    Ok(instances
        .par_iter()
        .map(|i| score_instance(&table, &params.mlp, i))
        .collect())
}

pub struct BatchGradient {
    /// Mean logloss over the batch.
    pub loss: f64,
    /// `loss + (l2 / 2) * sum(theta^2)`.
    pub objective: f64,
    pub grads: Params,
}

struct ChunkGrad {
    loss: f64,
    mlp: Vec<Dense>,
    rows: Vec<(u32, Vec<f64>)>,
}

/// Exact gradient of the regularized mean logloss over `batch`.
///
/// Dropout masks come from a stream keyed by `(seed, step, position)`, so
/// results are identical for any thread count.
pub fn batch_gradient(
    net: &Network,
    params: &Params,
    batch: &[&Instance],
    l2: f64,
    dropout: f64,
    seed: u64,
    step: u64,
) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (table, cache) = net.forward_enhance(params)?;
    let n = batch.len() as f64;
    let d = table.cols();
    let chunks: Vec<ChunkGrad> = batch
        .par_chunks(INSTANCE_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut out = ChunkGrad {
                loss: 0.0,
                mlp: params.mlp.iter().map(Dense::zeros_like).collect(),
                rows: Vec::new(),
            };
            for (k, inst) in chunk.iter().enumerate() {
                let position = (c * INSTANCE_CHUNK + k) as u64;
                let bundle = field_bundle(&table, inst);
                let r = inner_product_layer(&bundle).expect("at least two fields");
                let trace = if dropout > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive(&[seed, step, position]));
                    mlp_forward(&r, &params.mlp, Some((dropout, &mut rng)))
                } else {
                    mlp_forward::<ChaCha8Rng>(&r, &params.mlp, None)
                };
                out.loss += instance_loss(trace.prob, inst.label);
                let dlogit = logit_grad(&trace, inst.label) / n;
                let dr = mlp_backward(&trace, &params.mlp, dlogit, &mut out.mlp);
                let dfields = inner_product_backward(&bundle, &dr);
                for (rows, g) in slots(inst).into_iter().zip(dfields) {
                    if rows.is_empty() {
                        continue;
                    }
                    let w = 1.0 / rows.len() as f64;
                    for &row in rows {
                        out.rows.push((row, g.iter().map(|x| x * w).collect()));
                    }
                }
            }
            out
        })
        .collect();

    let mut grads = params.zeros_like();
    let mut dp = Mat::zeros(table.rows(), d);
    let mut loss = 0.0;
    for c in chunks {
        loss += c.loss;
        for (dst, src) in grads.mlp.iter_mut().zip(&c.mlp) {
            dst.w.add_assign(&src.w);
            axpy(1.0, &src.b, &mut dst.b);
        }
        for (row, g) in c.rows {
            axpy(1.0, &g, dp.row_mut(row as usize));
        }
    }
    net.backward_enhance(params, &cache, dp, &mut grads);
    if l2 != 0.0 {
        grads.axpy(l2, params);
    }
    let loss = loss / n;
    Ok(BatchGradient {
        loss,
        objective: loss + 0.5 * l2 * params.sum_squares(),
        grads,
    })
}
