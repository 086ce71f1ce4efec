//! Attribute graph convolution: field-wise propagation over each per-field
//! attribute graph, then cross-field integration.
//!
//! Works on the global embedding table. A field graph numbers its entities
//! first and that field's values after them; [`AttrConv`] maps those local
//! nodes onto table rows. Context rows are never touched.

use rayon::prelude::*;

use crate::aggregators::{
    layer_pool, propagate, propagate_backward, AggregatorParams, NormAdjacency, PoolMode,
    PropagationCache,
};
use crate::data::{FieldRange, Layout};
use crate::error::{Error, Result};
use crate::graphs::SparseGraph;
use crate::tensor::{axpy, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    User,
    Item,
}

/// One (side, field) attribute graph placed in the global table.
#[derive(Debug, Clone)]
pub struct FieldPlan {
    pub side: Side,
    pub field: usize,
    pub range: FieldRange,
    /// Table row of local entity 0.
    pub entity_offset: usize,
    pub n_entities: usize,
    pub adj: NormAdjacency,
}

impl FieldPlan {
    pub fn new(side: Side, field: usize, graph: &SparseGraph, layout: &Layout) -> Result<Self> {
        let (range, entity_offset, n_entities) = match side {
            Side::User => (layout.user_attr.get(field), 0, layout.n_users),
            Side::Item => (
                layout.item_attr.get(field),
                layout.item_offset(),
                layout.n_items,
            ),
        };
        let range = *range.ok_or_else(|| {
            Error::InvalidArgument(format!("no {side:?} attribute field {field}"))
        })?;
        if graph.node_count() != n_entities + range.cardinality {
            return Err(Error::Dimension {
                context: "attribute graph nodes",
                expected: n_entities + range.cardinality,
                got: graph.node_count(),
            });
        }
        Ok(FieldPlan {
            side,
            field,
            range,
            entity_offset,
            n_entities,
            adj: NormAdjacency::new(graph),
        })
    }

    /// Table row of local node `k`.
    pub fn table_row(&self, k: usize) -> usize {
        if k < self.n_entities {
            self.entity_offset + k
        } else {
            self.range.offset + (k - self.n_entities)
        }
    }

    fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_entities + self.range.cardinality).map(|k| self.table_row(k))
    }
}

/// Propagate over one field graph from the field's slice of `table` and
/// pool; returns one row per local node (entities, then values).
pub fn field_propagate(
    plan: &FieldPlan,
    params: &AggregatorParams,
    table: &Mat,
    mode: PoolMode,
) -> Result<Mat> {
    let x0 = table.gather(plan.rows());
    Ok(propagate(&plan.adj, &x0, params, mode)?.0)
}

/// Sum or mean over per-field vectors of one entity.
pub fn integrate_fields(per_field: &[&[f64]], mode: PoolMode) -> Result<Vec<f64>> {
    if per_field.is_empty() {
        return Err(Error::InvalidArgument(
            "integrate_fields needs at least one field".into(),
        ));
    }
    layer_pool(per_field, mode)
}

/// All field plans of a dataset plus the shared pooling mode.
#[derive(Debug, Clone)]
pub struct AttrConv {
    pub plans: Vec<FieldPlan>,
    pub layout: Layout,
    pub mode: PoolMode,
}

pub struct AttrCache {
    fields: Vec<PropagationCache>,
}

impl AttrConv {
    pub fn new(
        layout: &Layout,
        user_graphs: &[SparseGraph],
        item_graphs: &[SparseGraph],
        mode: PoolMode,
    ) -> Result<Self> {
        if user_graphs.len() != layout.user_attr.len()
            || item_graphs.len() != layout.item_attr.len()
        {
            return Err(Error::InvalidArgument(format!(
                "expected {} user and {} item attribute graphs, got {} and {}",
                layout.user_attr.len(),
                layout.item_attr.len(),
                user_graphs.len(),
                item_graphs.len()
            )));
        }
        let mut plans = Vec::new();
        for (f, g) in user_graphs.iter().enumerate() {
            plans.push(FieldPlan::new(Side::User, f, g, layout)?);
        }
        for (f, g) in item_graphs.iter().enumerate() {
            plans.push(FieldPlan::new(Side::Item, f, g, layout)?);
        }
        Ok(AttrConv {
            plans,
            layout: layout.clone(),
            mode,
        })
    }

    fn params_for<'a>(
        &self,
        plan: &FieldPlan,
        user: &'a [AggregatorParams],
        item: &'a [AggregatorParams],
    ) -> &'a AggregatorParams {
        match plan.side {
            Side::User => &user[plan.field],
            Side::Item => &item[plan.field],
        }
    }

    fn side_fields(&self, side: Side) -> usize {
        match side {
            Side::User => self.layout.user_attr.len(),
            Side::Item => self.layout.item_attr.len(),
        }
    }

    /// Refined table `Z`: entity rows integrate their per-field outputs,
    /// attribute rows take their field's output, context rows are copied.
    /// A side without attribute fields keeps its initial entity rows.
    pub fn forward(
        &self,
        table: &Mat,
        user_params: &[AggregatorParams],
        item_params: &[AggregatorParams],
    ) -> Result<(Mat, AttrCache)> {
        if table.rows() != self.layout.total {
            return Err(Error::Dimension {
                context: "embedding table rows",
                expected: self.layout.total,
                got: table.rows(),
            });
        }
        if user_params.len() != self.layout.user_attr.len()
            || item_params.len() != self.layout.item_attr.len()
        {
            return Err(Error::InvalidArgument(
                "one parameter set per attribute field required".into(),
            ));
        }
        let outputs: Vec<(Mat, PropagationCache)> = self
            .plans
            .par_iter()
            .map(|plan| {
                let x0 = table.gather(plan.rows());
                propagate(
                    &plan.adj,
                    &x0,
                    self.params_for(plan, user_params, item_params),
                    self.mode,
                )
            })
            .collect::<Result<_>>()?;

        let mut z = table.clone();
        for side in [Side::User, Side::Item] {
            let count = self.side_fields(side);
            if count == 0 {
                continue;
            }
            let scale = self.mode.scale(count);
            let mut first = true;
            for (plan, (pooled, _)) in self
                .plans
                .iter()
                .zip(&outputs)
                .filter(|(p, _)| p.side == side)
            {
                for k in 0..plan.n_entities {
                    let row = z.row_mut(plan.table_row(k));
                    if first {
                        row.fill(0.0);
                    }
                    axpy(scale, pooled.row(k), row);
                }
                first = false;
            }
        }
        for (plan, (pooled, _)) in self.plans.iter().zip(&outputs) {
            for k in plan.n_entities..plan.n_entities + plan.range.cardinality {
                z.row_mut(plan.table_row(k)).copy_from_slice(pooled.row(k));
            }
        }
        Ok((
            z,
            AttrCache {
                fields: outputs.into_iter().map(|(_, c)| c).collect(),
            },
        ))
    }

    /// Gradient with respect to the initial table given `dz`; aggregator
    /// weight gradients are accumulated into the grad sets.
    pub fn backward(
        &self,
        cache: &AttrCache,
        user_params: &[AggregatorParams],
        item_params: &[AggregatorParams],
        dz: &Mat,
        user_grads: &mut [AggregatorParams],
        item_grads: &mut [AggregatorParams],
    ) -> Mat {
        let mut de = dz.clone();
        for plan in &self.plans {
            for r in plan.rows() {
                de.row_mut(r).fill(0.0);
            }
        }
        let field_grads: Vec<(Mat, AggregatorParams)> = self
            .plans
            .par_iter()
            .zip(&cache.fields)
            .map(|(plan, fc)| {
                let params = self.params_for(plan, user_params, item_params);
                let scale = self.mode.scale(self.side_fields(plan.side));
                let mut d_pooled = dz.gather(plan.rows());
                for k in 0..plan.n_entities {
                    d_pooled.row_mut(k).iter_mut().for_each(|g| *g *= scale);
                }
                let mut g = params.zeros_like();
                let dx = propagate_backward(&plan.adj, params, fc, &d_pooled, &mut g);
                (dx, g)
            })
            .collect();
        for (plan, (dx, g)) in self.plans.iter().zip(field_grads) {
            for k in 0..dx.rows() {
                axpy(1.0, dx.row(k), de.row_mut(plan.table_row(k)));
            }
            let target = match plan.side {
                Side::User => &mut user_grads[plan.field],
                Side::Item => &mut item_grads[plan.field],
            };
            for (t, s) in target.mats_mut().zip(g.mats()) {
                t.add_assign(s);
            }
        }
        de
    }
}

/// One-shot refinement of a whole table.
pub fn refine_all(
    layout: &Layout,
    user_graphs: &[SparseGraph],
    item_graphs: &[SparseGraph],
    table: &Mat,
    user_params: &[AggregatorParams],
    item_params: &[AggregatorParams],
    mode: PoolMode,
) -> Result<Mat> {
    Ok(AttrConv::new(layout, user_graphs, item_graphs, mode)?
        .forward(table, user_params, item_params)?
        .0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregators::{Activation, AggregatorKind};
    use crate::graphs::{build_attribute_graph, EdgeKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 3 users, 2 items; user fields of sizes 2 and 3, one item field of
    /// size 2, one context field of size 2.
    fn layout() -> Layout {
        let r = |offset, cardinality| FieldRange {
            offset,
            cardinality,
        };
        Layout {
            n_users: 3,
            n_items: 2,
            user_attr: vec![r(5, 2), r(7, 3)],
            item_attr: vec![r(10, 2)],
            context: vec![r(12, 2)],
            total: 14,
        }
    }

    fn graphs(l: &Layout) -> (Vec<SparseGraph>, Vec<SparseGraph>) {
        let ua0 = build_attribute_graph(
            &[vec![5], vec![5], vec![6]],
            l.user_attr[0],
            EdgeKind::UserAttr,
        )
        .unwrap();
        let ua1 = build_attribute_graph(
            &[vec![7, 8], vec![], vec![9]],
            l.user_attr[1],
            EdgeKind::UserAttr,
        )
        .unwrap();
        let vb0 = build_attribute_graph(&[vec![10], vec![11]], l.item_attr[0], EdgeKind::ItemAttr)
            .unwrap();
        (vec![ua0, ua1], vec![vb0])
    }

    fn table(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Mat {
        Mat::from_vec(
            rows,
            d,
            (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    fn light(n: usize, layers: usize) -> Vec<AggregatorParams> {
        vec![
            AggregatorParams::identity(AggregatorKind::LightGcn, Activation::Identity, layers, 0);
            n
        ]
    }

    #[test]
    fn single_attribute_hand_example() {
        // user 0 with single attribute 1 (local node 1)
        let l = Layout {
            n_users: 1,
            n_items: 0,
            user_attr: vec![FieldRange {
                offset: 1,
                cardinality: 1,
            }],
            item_attr: vec![],
            context: vec![],
            total: 2,
        };
        let g = build_attribute_graph(&[vec![1]], l.user_attr[0], EdgeKind::UserAttr).unwrap();
        let plan = FieldPlan::new(Side::User, 0, &g, &l).unwrap();
        let t = Mat::from_rows(&[vec![1.0, 2.0], vec![10.0, 20.0]]);
        let out = field_propagate(&plan, &light(1, 1)[0], &t, PoolMode::Sum).unwrap();
        assert_eq!(out.row(0), &[11.0, 22.0]);
        let out = field_propagate(&plan, &light(1, 0)[0], &t, PoolMode::Sum).unwrap();
        assert_eq!(out.as_slice(), t.as_slice());
    }

    #[test]
    fn integrate_examples() {
        assert_eq!(
            integrate_fields(&[&[1.0, 2.0]], PoolMode::Sum).unwrap(),
            vec![1.0, 2.0]
        );
        assert_eq!(
            integrate_fields(&[&[1.0, 0.0], &[0.0, 1.0]], PoolMode::Sum).unwrap(),
            vec![1.0, 1.0]
        );
        let m = integrate_fields(&[&[3.0], &[6.0], &[9.0]], PoolMode::Mean).unwrap();
        assert!((m[0] - 6.0).abs() < 1e-15);
        assert!(integrate_fields(&[], PoolMode::Sum).is_err());
    }

    #[test]
    fn no_fields_is_identity_and_context_untouched() {
        let mut l = layout();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = table(&mut rng, 14, 3);
        l.user_attr.clear();
        l.item_attr.clear();
        let z = refine_all(&l, &[], &[], &t, &[], &[], PoolMode::Sum).unwrap();
        assert_eq!(z.as_slice(), t.as_slice());

        let l = layout();
        let (ug, ig) = graphs(&l);
        let z = refine_all(&l, &ug, &ig, &t, &light(2, 2), &light(1, 2), PoolMode::Sum).unwrap();
        for r in 12..14 {
            assert_eq!(z.row(r), t.row(r));
        }
    }

    #[test]
    fn composes_from_field_propagations() {
        let l = layout();
        let (ug, ig) = graphs(&l);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = table(&mut rng, 14, 4);
        let up: Vec<_> = (0..2)
            .map(|_| {
                AggregatorParams::init(AggregatorKind::Gcn, Activation::LeakyRelu, 2, 4, &mut rng)
            })
            .collect();
        let ip = vec![AggregatorParams::init(
            AggregatorKind::Gcn,
            Activation::LeakyRelu,
            2,
            4,
            &mut rng,
        )];
        for mode in [PoolMode::Sum, PoolMode::Mean] {
            let z = refine_all(&l, &ug, &ig, &t, &up, &ip, mode).unwrap();
            let conv = AttrConv::new(&l, &ug, &ig, mode).unwrap();
            let f0 = field_propagate(&conv.plans[0], &up[0], &t, mode).unwrap();
            let f1 = field_propagate(&conv.plans[1], &up[1], &t, mode).unwrap();
            for u in 0..3 {
                let want = integrate_fields(&[f0.row(u), f1.row(u)], mode).unwrap();
                for k in 0..4 {
                    assert!((z[(u, k)] - want[k]).abs() < 1e-12);
                }
            }
            // attribute value rows carry their own field's output
            assert_eq!(z.row(8), f1.row(3 + 1));
        }
    }

    #[test]
    fn lightgcn_refinement_is_homogeneous() {
        let l = layout();
        let (ug, ig) = graphs(&l);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = table(&mut rng, 14, 3);
        let mut t3 = t.clone();
        t3.scale(3.0);
        let z = refine_all(&l, &ug, &ig, &t, &light(2, 3), &light(1, 3), PoolMode::Sum).unwrap();
        let z3 = refine_all(&l, &ug, &ig, &t3, &light(2, 3), &light(1, 3), PoolMode::Sum).unwrap();
        for (a, b) in z.as_slice().iter().zip(z3.as_slice()) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_attribute_edge_ablation() {
        let l = layout();
        let (mut ug, ig) = graphs(&l);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = table(&mut rng, 14, 3);
        let with = refine_all(&l, &ug, &ig, &t, &light(2, 1), &light(1, 1), PoolMode::Sum).unwrap();
        // users 0 and 1 share value 5; drop it from both
        ug[0] = build_attribute_graph(
            &[vec![], vec![], vec![6]],
            l.user_attr[0],
            EdgeKind::UserAttr,
        )
        .unwrap();
        let without =
            refine_all(&l, &ug, &ig, &t, &light(2, 1), &light(1, 1), PoolMode::Sum).unwrap();
        for u in 0..2 {
            assert_ne!(with.row(u), without.row(u));
            // field 0 now contributes only the layer-0 vector
            let conv = AttrConv::new(&l, &ug, &ig, PoolMode::Sum).unwrap();
            let f1 = field_propagate(&conv.plans[1], &light(1, 1)[0], &t, PoolMode::Sum).unwrap();
            let want = integrate_fields(&[t.row(u), f1.row(u)], PoolMode::Sum).unwrap();
            for k in 0..3 {
                assert!((without[(u, k)] - want[k]).abs() < 1e-12);
            }
        }
        assert_eq!(with.row(2), without.row(2));
    }

    #[test]
    fn fields_are_isolated_before_integration() {
        let l = layout();
        let (ug, ig) = graphs(&l);
        let conv = AttrConv::new(&l, &ug, &ig, PoolMode::Sum).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = table(&mut rng, 14, 3);
        let mut t2 = t.clone();
        for r in 7..10 {
            t2.row_mut(r).iter_mut().for_each(|x| *x += 1.0);
        }
        let p = &light(1, 2)[0];
        assert_eq!(
            field_propagate(&conv.plans[0], p, &t, PoolMode::Sum).unwrap(),
            field_propagate(&conv.plans[0], p, &t2, PoolMode::Sum).unwrap()
        );
        assert_ne!(
            field_propagate(&conv.plans[1], p, &t, PoolMode::Sum).unwrap(),
            field_propagate(&conv.plans[1], p, &t2, PoolMode::Sum).unwrap()
        );
    }

    #[test]
    fn reverse_pass_matches_finite_differences() {
        let l = layout();
        let (ug, ig) = graphs(&l);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = table(&mut rng, 14, 3);
        let c = table(&mut rng, 14, 3);
        for kind in [AggregatorKind::Ngcf, AggregatorKind::LightGcn] {
            for mode in [PoolMode::Sum, PoolMode::Mean] {
                let up: Vec<_> = (0..2)
                    .map(|_| AggregatorParams::init(kind, Activation::LeakyRelu, 2, 3, &mut rng))
                    .collect();
                let ip = vec![AggregatorParams::init(
                    kind,
                    Activation::LeakyRelu,
                    2,
                    3,
                    &mut rng,
                )];
                let conv = AttrConv::new(&l, &ug, &ig, mode).unwrap();
                let loss = |t: &Mat| {
                    crate::tensor::dot(
                        conv.forward(t, &up, &ip).unwrap().0.as_slice(),
                        c.as_slice(),
                    )
                };
                let (_, cache) = conv.forward(&t, &up, &ip).unwrap();
                let mut ug_ = up.iter().map(|p| p.zeros_like()).collect::<Vec<_>>();
                let mut ig_ = ip.iter().map(|p| p.zeros_like()).collect::<Vec<_>>();
                let de = conv.backward(&cache, &up, &ip, &c, &mut ug_, &mut ig_);
                for k in 0..t.as_slice().len() {
                    let mut tp = t.clone();
                    tp.as_mut_slice()[k] += 1e-4;
                    let mut tm = t.clone();
                    tm.as_mut_slice()[k] -= 1e-4;
                    let fd = (loss(&tp) - loss(&tm)) / 2e-4;
                    let a = de.as_slice()[k];
                    assert!(
                        (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6) < 1e-4,
                        "{kind:?} {mode:?} [{k}] {fd} vs {a}"
                    );
                }
            }
        }
    }
}
