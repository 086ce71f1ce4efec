//! Neighbor aggregation kernels (GCN, NGCF, LightGCN) and layer pooling.
//!
//! Node-level functions score a single neighborhood; [`propagate`] and
//! [`propagate_backward`] run the same rules over a whole graph with an
//! exact reverse pass. Rows of a [`Mat`] are node embeddings.

use std::cell::Cell;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{norm_factor, SparseGraph};
use crate::tensor::{axpy, Mat};

/// Negative-side slope of [`Activation::LeakyRelu`].
pub const LEAKY_SLOPE: f64 = 0.2;

/// Rows per parallel work unit. Fixed so reductions never depend on the
/// number of threads.
const ROW_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    #[default]
    LeakyRelu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
        }
    }

    /// Derivative at pre-activation `x` (subgradient 0 / slope at 0).
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Gcn,
    Ngcf,
    #[default]
    LightGcn,
}

/// How per-layer states (and per-field outputs) are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Sum,
    Mean,
}

impl PoolMode {
    /// Weight applied to each of `count` pooled terms.
    pub fn scale(self, count: usize) -> f64 {
        match self {
            PoolMode::Sum => 1.0,
            PoolMode::Mean => 1.0 / count as f64,
        }
    }
}

/// Weights for `layers` rounds of one aggregator. GCN uses `w1` only, NGCF
/// uses `w1` and `w2`, LightGCN has neither.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorParams {
    pub kind: AggregatorKind,
    pub activation: Activation,
    pub layers: usize,
    pub w1: Vec<Mat>,
    pub w2: Vec<Mat>,
}

impl AggregatorParams {
    /// Xavier-uniform weights in `±sqrt(6 / (2d))`.
    pub fn init<R: Rng>(
        kind: AggregatorKind,
        activation: Activation,
        layers: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (2.0 * dim as f64)).sqrt();
        let mat = |rng: &mut R| {
            Mat::from_vec(
                dim,
                dim,
                (0..dim * dim)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
            )
        };
        let (n1, n2) = match kind {
            AggregatorKind::Gcn => (layers, 0),
            AggregatorKind::Ngcf => (layers, layers),
            AggregatorKind::LightGcn => (0, 0),
        };
        let w1 = (0..n1).map(|_| mat(rng)).collect();
        let w2 = (0..n2).map(|_| mat(rng)).collect();
        AggregatorParams {
            kind,
            activation,
            layers,
            w1,
            w2,
        }
    }

    /// Identity weights; handy for hand-checkable fixtures.
    pub fn identity(
        kind: AggregatorKind,
        activation: Activation,
        layers: usize,
        dim: usize,
    ) -> Self {
        let (n1, n2) = match kind {
            AggregatorKind::Gcn => (layers, 0),
            AggregatorKind::Ngcf => (layers, layers),
            AggregatorKind::LightGcn => (0, 0),
        };
        AggregatorParams {
            kind,
            activation,
            layers,
            w1: vec![Mat::identity(dim); n1],
            w2: vec![Mat::identity(dim); n2],
        }
    }

    /// Same shapes, all zeros (gradient / moment buffers).
    pub fn zeros_like(&self) -> Self {
        let z = |v: &Vec<Mat>| v.iter().map(|m| Mat::zeros(m.rows(), m.cols())).collect();
        AggregatorParams {
            w1: z(&self.w1),
            w2: z(&self.w2),
            ..self.clone()
        }
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        let want = match self.kind {
            AggregatorKind::Gcn => (self.layers, 0),
            AggregatorKind::Ngcf => (self.layers, self.layers),
            AggregatorKind::LightGcn => (0, 0),
        };
        if (self.w1.len(), self.w2.len()) != want {
            return Err(Error::InvalidArgument(format!(
                "{:?} with {} layers needs {:?} weight matrices, found ({}, {})",
                self.kind,
                self.layers,
                want,
                self.w1.len(),
                self.w2.len()
            )));
        }
        for w in self.w1.iter().chain(&self.w2) {
            if w.rows() != dim || w.cols() != dim {
                return Err(Error::Dimension {
                    context: "aggregator weight",
                    expected: dim,
                    got: if w.rows() != dim { w.rows() } else { w.cols() },
                });
            }
        }
        Ok(())
    }

    /// Visit every weight matrix in a fixed order.
    pub fn mats(&self) -> impl Iterator<Item = &Mat> {
        self.w1.iter().chain(&self.w2)
    }

    pub fn mats_mut(&mut self) -> impl Iterator<Item = &mut Mat> {
        self.w1.iter_mut().chain(self.w2.iter_mut())
    }
}

/// One node's neighborhood for the node-level kernels: the central vector
/// and degree, then each neighbor's vector and degree.
#[derive(Debug, Clone)]
pub struct Neighborhood<'a> {
    pub center: &'a [f64],
    pub center_degree: usize,
    pub neighbors: Vec<(&'a [f64], usize)>,
}

impl<'a> Neighborhood<'a> {
    /// Neighborhood of `node` in `graph`, reading vectors from `table`.
    pub fn of(graph: &SparseGraph, node: usize, table: &'a Mat) -> Self {
        Neighborhood {
            center: table.row(node),
            center_degree: graph.degree(node),
            neighbors: graph
                .neighbors(node)
                .iter()
                .map(|&i| (table.row(i as usize), graph.degree(i as usize)))
                .collect(),
        }
    }

    fn check(&self) -> Result<usize> {
        let d = self.center.len();
        for (e, _) in &self.neighbors {
            if e.len() != d {
                return Err(Error::Dimension {
                    context: "neighbor embedding",
                    expected: d,
                    got: e.len(),
                });
            }
        }
        Ok(d)
    }

    /// `sum_i d(h,i) e_i` over the neighbors.
    fn neighbor_sum(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.center.len()];
        for (e, deg) in &self.neighbors {
            axpy(norm_factor(self.center_degree, *deg), e, &mut acc);
        }
        acc
    }
}

fn layer_weight<'a>(ws: &'a [Mat], layer: usize, d: usize) -> Result<&'a Mat> {
    let w = ws.get(layer).ok_or_else(|| {
        Error::InvalidArgument(format!("layer {layer} out of range ({} layers)", ws.len()))
    })?;
    if w.rows() != d || w.cols() != d {
        return Err(Error::Dimension {
            context: "aggregator weight",
            expected: d,
            got: w.cols(),
        });
    }
    Ok(w)
}

/// Factor of the central node in the GCN sum: `1/deg(h)`, or 1 when the
/// node is isolated so that it passes through unchanged.
pub fn self_factor(degree: usize) -> f64 {
    if degree == 0 {
        1.0
    } else {
        1.0 / degree as f64
    }
}

/// `σ(W (e_h / deg(h) + sum_i d(h,i) e_i))`.
pub fn gcn_aggregate(
    nb: &Neighborhood,
    params: &AggregatorParams,
    layer: usize,
) -> Result<Vec<f64>> {
    let d = nb.check()?;
    let w = layer_weight(&params.w1, layer, d)?;
    let mut s = nb.neighbor_sum();
    axpy(self_factor(nb.center_degree), nb.center, &mut s);
    Ok(w.matvec(&s)
        .into_iter()
        .map(|x| params.activation.apply(x))
        .collect())
}

/// `σ(W1 e_h + sum_i d(h,i) (W1 e_i + W2 (e_h ⊙ e_i)))`.
pub fn ngcf_aggregate(
    nb: &Neighborhood,
    params: &AggregatorParams,
    layer: usize,
) -> Result<Vec<f64>> {
    let d = nb.check()?;
    let w1 = layer_weight(&params.w1, layer, d)?;
    let w2 = layer_weight(&params.w2, layer, d)?;
    let mut s1 = nb.center.to_vec();
    let mut s2 = vec![0.0; d];
    for (e, deg) in &nb.neighbors {
        let c = norm_factor(nb.center_degree, *deg);
        for k in 0..d {
            s1[k] += c * e[k];
            s2[k] += c * nb.center[k] * e[k];
        }
    }
    let mut h = w1.matvec(&s1);
    w2.matvec_acc(&s2, &mut h);
    Ok(h.into_iter().map(|x| params.activation.apply(x)).collect())
}

/// `sum_i d(h,i) e_i`; the central node is not included.
pub fn lightgcn_aggregate(nb: &Neighborhood) -> Result<Vec<f64>> {
    nb.check()?;
    Ok(nb.neighbor_sum())
}

/// Dispatch on `params.kind`.
pub fn aggregate(nb: &Neighborhood, params: &AggregatorParams, layer: usize) -> Result<Vec<f64>> {
    match params.kind {
        AggregatorKind::Gcn => gcn_aggregate(nb, params, layer),
        AggregatorKind::Ngcf => ngcf_aggregate(nb, params, layer),
        AggregatorKind::LightGcn => lightgcn_aggregate(nb),
    }
}

/// Sum or mean of the per-layer vectors.
pub fn layer_pool(layers: &[&[f64]], mode: PoolMode) -> Result<Vec<f64>> {
    let first = layers
        .first()
        .ok_or_else(|| Error::InvalidArgument("layer_pool needs at least one layer".into()))?;
    let scale = mode.scale(layers.len());
    let mut out = vec![0.0; first.len()];
    for l in layers {
        if l.len() != out.len() {
            return Err(Error::Dimension {
                context: "pooled layer",
                expected: out.len(),
                got: l.len(),
            });
        }
        axpy(scale, l, &mut out);
    }
    Ok(out)
}

/// Symmetrically normalized adjacency `D^-1/2 A D^-1/2` plus the GCN
/// self factors, in CSR form. Rows are sorted by neighbor index, which
/// fixes the summation order.
#[derive(Debug, Clone)]
pub struct NormAdjacency {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    weights: Vec<f64>,
    self_weights: Vec<f64>,
}

impl NormAdjacency {
    pub fn new(graph: &SparseGraph) -> Self {
        let n = graph.node_count();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::with_capacity(2 * graph.edge_count());
        let mut weights = Vec::with_capacity(2 * graph.edge_count());
        offsets.push(0);
        for h in 0..n {
            for &i in graph.neighbors(h) {
                neighbors.push(i);
                weights.push(graph.norm_factor(h, i as usize));
            }
            offsets.push(neighbors.len());
        }
        NormAdjacency {
            offsets,
            neighbors,
            weights,
            self_weights: (0..n).map(|h| self_factor(graph.degree(h))).collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.self_weights.len()
    }

    pub fn edge_entries(&self) -> usize {
        self.neighbors.len()
    }

    /// `out = Â x`, plus `diag(self) x` when `with_self`. Â is symmetric, so
    /// this also serves as its transpose in the reverse pass.
    pub fn apply(&self, x: &Mat, with_self: bool) -> Mat {
        let d = x.cols();
        let mut out = Mat::zeros(x.rows(), d);
        out.as_mut_slice()
            .par_chunks_mut(d.max(1) * ROW_CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                for (r, row) in chunk.chunks_mut(d.max(1)).enumerate() {
                    let h = c * ROW_CHUNK + r;
                    if with_self {
                        axpy(self.self_weights[h], x.row(h), row);
                    }
                    for k in self.offsets[h]..self.offsets[h + 1] {
                        axpy(self.weights[k], x.row(self.neighbors[k] as usize), row);
                    }
                }
            });
        out
    }
}

thread_local! {
    static PROPAGATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Whole-graph propagations run on the current thread since the last reset.
pub fn propagation_count() -> u64 {
    PROPAGATIONS.with(|c| c.get())
}

pub fn reset_propagation_count() {
    PROPAGATIONS.with(|c| c.set(0));
}

/// Forward state kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct PropagationCache {
    /// Layer states `X_0 .. X_L`.
    pub states: Vec<Mat>,
    /// GCN: `S = Ã X_l`; NGCF: `N = Â X_l`. Empty for LightGCN.
    mixed: Vec<Mat>,
    /// Pre-activations (GCN / NGCF).
    pre: Vec<Mat>,
    pub mode: PoolMode,
}

/// Row-wise `out_r = σ(W1 a_r (+ W2 b_r))`, keeping the pre-activation.
fn dense_layer(a: &Mat, w1: &Mat, b: Option<(&Mat, &Mat)>, act: Activation) -> (Mat, Mat) {
    let d = a.cols();
    let mut pre = Mat::zeros(a.rows(), d);
    pre.as_mut_slice()
        .par_chunks_mut(d.max(1) * ROW_CHUNK)
        .enumerate()
        .for_each(|(c, chunk)| {
            for (r, row) in chunk.chunks_mut(d.max(1)).enumerate() {
                let h = c * ROW_CHUNK + r;
                w1.matvec_into(a.row(h), row);
                if let Some((w2, bm)) = b {
                    w2.matvec_acc(bm.row(h), row);
                }
            }
        });
    let mut post = pre.clone();
    post.as_mut_slice()
        .iter_mut()
        .for_each(|x| *x = act.apply(*x));
    (pre, post)
}

/// Run `params.layers` rounds over `adj` from `x0` and pool the states.
pub fn propagate(
    adj: &NormAdjacency,
    x0: &Mat,
    params: &AggregatorParams,
    mode: PoolMode,
) -> Result<(Mat, PropagationCache)> {
    if adj.node_count() != x0.rows() {
        return Err(Error::Dimension {
            context: "propagation input rows",
            expected: adj.node_count(),
            got: x0.rows(),
        });
    }
    params.check(x0.cols())?;
    PROPAGATIONS.with(|c| c.set(c.get() + 1));
    let mut states = vec![x0.clone()];
    let mut mixed = Vec::new();
    let mut pre = Vec::new();
    for l in 0..params.layers {
        let x = &states[l];
        let next = match params.kind {
            AggregatorKind::LightGcn => adj.apply(x, false),
            AggregatorKind::Gcn => {
                let s = adj.apply(x, true);
                let (h, out) = dense_layer(&s, &params.w1[l], None, params.activation);
                mixed.push(s);
                pre.push(h);
                out
            }
            AggregatorKind::Ngcf => {
                let n = adj.apply(x, false);
                let mut s1 = x.clone();
                s1.add_assign(&n);
                let mut s2 = x.clone();
                s2.as_mut_slice()
                    .iter_mut()
                    .zip(n.as_slice())
                    .for_each(|(a, b)| *a *= b);
                let (h, out) = dense_layer(
                    &s1,
                    &params.w1[l],
                    Some((&params.w2[l], &s2)),
                    params.activation,
                );
                mixed.push(n);
                pre.push(h);
                out
            }
        };
        states.push(next);
    }
    let pooled = pool_states(&states, mode);
    Ok((
        pooled,
        PropagationCache {
            states,
            mixed,
            pre,
            mode,
        },
    ))
}

fn pool_states(states: &[Mat], mode: PoolMode) -> Mat {
    let scale = mode.scale(states.len());
    let mut out = states[0].clone();
    out.scale(scale);
    for s in &states[1..] {
        axpy(scale, s.as_slice(), out.as_mut_slice());
    }
    out
}

/// `sum_r g_r ⊗ x_r` reduced over fixed-size row chunks in chunk order.
fn outer_sum(g: &Mat, x: &Mat) -> Mat {
    let d = g.cols();
    let partials: Vec<Mat> = (0..g.rows().div_ceil(ROW_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Mat::zeros(d, x.cols());
            for r in c * ROW_CHUNK..((c + 1) * ROW_CHUNK).min(g.rows()) {
                acc.outer_acc(g.row(r), x.row(r));
            }
            acc
        })
        .collect();
    let mut out = Mat::zeros(d, x.cols());
    for p in &partials {
        out.add_assign(p);
    }
    out
}

/// Row-wise `out_r = W^T g_r`.
fn rows_times(g: &Mat, w: &Mat) -> Mat {
    let mut out = Mat::zeros(g.rows(), w.cols());
    let d = w.cols();
    out.as_mut_slice()
        .par_chunks_mut(d.max(1) * ROW_CHUNK)
        .enumerate()
        .for_each(|(c, chunk)| {
            for (r, row) in chunk.chunks_mut(d.max(1)).enumerate() {
                w.matvec_t_acc(g.row(c * ROW_CHUNK + r), row);
            }
        });
    out
}

/// Reverse pass of [`propagate`]: accumulates weight gradients into `grads`
/// and returns the gradient with respect to `x0`.
pub fn propagate_backward(
    adj: &NormAdjacency,
    params: &AggregatorParams,
    cache: &PropagationCache,
    d_pooled: &Mat,
    grads: &mut AggregatorParams,
) -> Mat {
    let scale = cache.mode.scale(cache.states.len());
    let mut dx = d_pooled.clone();
    dx.scale(scale);
    for l in (0..params.layers).rev() {
        let mut below = d_pooled.clone();
        below.scale(scale);
        match params.kind {
            AggregatorKind::LightGcn => below.add_assign(&adj.apply(&dx, false)),
            AggregatorKind::Gcn => {
                let dh = activation_grad(&dx, &cache.pre[l], params.activation);
                grads.w1[l].add_assign(&outer_sum(&dh, &cache.mixed[l]));
                let ds = rows_times(&dh, &params.w1[l]);
                below.add_assign(&adj.apply(&ds, true));
            }
            AggregatorKind::Ngcf => {
                let x = &cache.states[l];
                let n = &cache.mixed[l];
                let dh = activation_grad(&dx, &cache.pre[l], params.activation);
                let mut s1 = x.clone();
                s1.add_assign(n);
                let mut s2 = x.clone();
                s2.as_mut_slice()
                    .iter_mut()
                    .zip(n.as_slice())
                    .for_each(|(a, b)| *a *= b);
                grads.w1[l].add_assign(&outer_sum(&dh, &s1));
                grads.w2[l].add_assign(&outer_sum(&dh, &s2));
                let ds1 = rows_times(&dh, &params.w1[l]);
                let ds2 = rows_times(&dh, &params.w2[l]);
                // through S1 = X + N and S2 = X ⊙ N
                let mut dn = ds1.clone();
                let mut direct = ds1;
                for k in 0..direct.as_slice().len() {
                    direct.as_mut_slice()[k] += ds2.as_slice()[k] * n.as_slice()[k];
                    dn.as_mut_slice()[k] += ds2.as_slice()[k] * x.as_slice()[k];
                }
                below.add_assign(&direct);
                below.add_assign(&adj.apply(&dn, false));
            }
        }
        dx = below;
    }
    dx
}

fn activation_grad(dx: &Mat, pre: &Mat, act: Activation) -> Mat {
    let mut out = dx.clone();
    out.as_mut_slice()
        .iter_mut()
        .zip(pre.as_slice())
        .for_each(|(g, &p)| *g *= act.derivative(p));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{EdgeKind, GraphBuilder};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph(n: usize, edges: &[(u32, u32)]) -> SparseGraph {
        let mut b = GraphBuilder::new(n);
        for &(a, c) in edges {
            b.add_edge(a, c, EdgeKind::UserUser);
        }
        b.build()
    }

    fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> SparseGraph {
        let mut b = GraphBuilder::new(n);
        for a in 0..n as u32 {
            for c in a + 1..n as u32 {
                if rng.random_bool(p) {
                    b.add_edge(a, c, EdgeKind::UserUser);
                }
            }
        }
        b.build()
    }

    fn random_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_vec(
            r,
            c,
            (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn norm_factor_examples() {
        assert_eq!(norm_factor(4, 1), 0.5);
        assert_eq!(norm_factor(1, 1), 1.0);
        assert_eq!(norm_factor(2, 8), 0.25);
        assert_eq!(norm_factor(0, 3), 0.0);
    }

    #[test]
    fn gcn_examples() {
        let p = AggregatorParams::identity(AggregatorKind::Gcn, Activation::Identity, 1, 2);
        let e = [3.0, -1.0];
        let isolated = Neighborhood {
            center: &e,
            center_degree: 0,
            neighbors: vec![],
        };
        assert_eq!(gcn_aggregate(&isolated, &p, 0).unwrap(), vec![3.0, -1.0]);

        let g = graph(2, &[(0, 1)]);
        let table = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        for h in 0..2 {
            assert_eq!(
                gcn_aggregate(&Neighborhood::of(&g, h, &table), &p, 0).unwrap(),
                vec![2.0, 2.0]
            );
        }

        let relu = AggregatorParams::identity(AggregatorKind::Gcn, Activation::Relu, 1, 2);
        let neg = Mat::from_rows(&[vec![-1.0, -2.0], vec![-3.0, -1.0]]);
        assert_eq!(
            gcn_aggregate(&Neighborhood::of(&g, 0, &neg), &relu, 0).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn ngcf_examples() {
        let p = AggregatorParams::identity(AggregatorKind::Ngcf, Activation::Identity, 1, 2);
        let eh = [1.0, 2.0];
        let nb = Neighborhood {
            center: &eh,
            center_degree: 0,
            neighbors: vec![],
        };
        assert_eq!(ngcf_aggregate(&nb, &p, 0).unwrap(), vec![1.0, 2.0]);
        let zero = [0.0, 0.0];
        let nb = Neighborhood {
            center: &eh,
            center_degree: 1,
            neighbors: vec![(&zero, 1)],
        };
        assert_eq!(ngcf_aggregate(&nb, &p, 0).unwrap(), vec![1.0, 2.0]);
        let ei = [3.0, 4.0];
        let nb = Neighborhood {
            center: &eh,
            center_degree: 1,
            neighbors: vec![(&ei, 1)],
        };
        assert_eq!(ngcf_aggregate(&nb, &p, 0).unwrap(), vec![7.0, 14.0]);
    }

    #[test]
    fn lightgcn_examples() {
        let g = graph(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        let mut t = Mat::zeros(5, 2);
        for i in 1..5 {
            t[(i, 0)] = 1.0;
        }
        assert_eq!(
            lightgcn_aggregate(&Neighborhood::of(&g, 0, &t)).unwrap(),
            vec![2.0, 0.0]
        );
        let lone = graph(1, &[]);
        let t = Mat::from_rows(&[vec![5.0, 5.0]]);
        assert_eq!(
            lightgcn_aggregate(&Neighborhood::of(&lone, 0, &t)).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let p = AggregatorParams::identity(AggregatorKind::Gcn, Activation::Identity, 1, 2);
        let a = [1.0, 2.0];
        let b = [1.0, 2.0, 3.0];
        let nb = Neighborhood {
            center: &a,
            center_degree: 1,
            neighbors: vec![(&b, 1)],
        };
        assert!(gcn_aggregate(&nb, &p, 0).is_err());
        assert!(ngcf_aggregate(
            &nb,
            &AggregatorParams::identity(AggregatorKind::Ngcf, Activation::Identity, 1, 2),
            0
        )
        .is_err());
    }

    #[test]
    fn pool_examples() {
        let a = [1.0, 1.0];
        let b = [3.0, 3.0];
        assert_eq!(layer_pool(&[&a], PoolMode::Sum).unwrap(), vec![1.0, 1.0]);
        assert_eq!(layer_pool(&[&a], PoolMode::Mean).unwrap(), vec![1.0, 1.0]);
        assert_eq!(
            layer_pool(&[&a, &b], PoolMode::Sum).unwrap(),
            vec![4.0, 4.0]
        );
        assert_eq!(
            layer_pool(&[&a, &b], PoolMode::Mean).unwrap(),
            vec![2.0, 2.0]
        );
        assert!(layer_pool(&[], PoolMode::Sum).is_err());
    }

    #[test]
    fn lightgcn_whole_graph_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_graph(5, 0.5, &mut rng);
        let x = random_mat(5, 3, &mut rng);
        let p = AggregatorParams::identity(AggregatorKind::LightGcn, Activation::Identity, 1, 3);
        let (_, cache) = propagate(&NormAdjacency::new(&g), &x, &p, PoolMode::Sum).unwrap();
        for h in 0..5 {
            for k in 0..3 {
                let mut want = 0.0;
                for i in 0..5 {
                    if g.has_edge(h, i) {
                        want += x[(i, k)] / ((g.degree(h) * g.degree(i)) as f64).sqrt();
                    }
                }
                assert!((cache.states[1][(h, k)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn whole_graph_matches_node_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random_graph(12, 0.3, &mut rng);
        let x = random_mat(12, 4, &mut rng);
        let adj = NormAdjacency::new(&g);
        for kind in [
            AggregatorKind::Gcn,
            AggregatorKind::Ngcf,
            AggregatorKind::LightGcn,
        ] {
            let p = AggregatorParams::init(kind, Activation::LeakyRelu, 1, 4, &mut rng);
            let (_, cache) = propagate(&adj, &x, &p, PoolMode::Sum).unwrap();
            for h in 0..12 {
                let want = aggregate(&Neighborhood::of(&g, h, &x), &p, 0).unwrap();
                for k in 0..4 {
                    assert!((cache.states[1][(h, k)] - want[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn neighbor_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vecs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        for kind in [
            AggregatorKind::Gcn,
            AggregatorKind::Ngcf,
            AggregatorKind::LightGcn,
        ] {
            let p = AggregatorParams::init(kind, Activation::LeakyRelu, 1, 4, &mut rng);
            let mut nb = Neighborhood {
                center: &vecs[0],
                center_degree: 5,
                neighbors: (1..6).map(|i| (vecs[i].as_slice(), i)).collect(),
            };
            let a = aggregate(&nb, &p, 0).unwrap();
            nb.neighbors.reverse();
            let b = aggregate(&nb, &p, 0).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sum_is_mean_times_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layers: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = layers.iter().map(Vec::as_slice).collect();
        let s = layer_pool(&refs, PoolMode::Sum).unwrap();
        let m = layer_pool(&refs, PoolMode::Mean).unwrap();
        for (a, b) in s.iter().zip(&m) {
            assert!((a - 4.0 * b).abs() < 1e-12);
        }
    }

    /// Finite differences of `<c, propagate(x)>` against the reverse pass.
    #[test]
    fn reverse_pass_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_graph(9, 0.35, &mut rng);
        let adj = NormAdjacency::new(&g);
        let x = random_mat(9, 6, &mut rng);
        let c = random_mat(9, 6, &mut rng);
        let eps = 1e-4;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
        for kind in [
            AggregatorKind::Gcn,
            AggregatorKind::Ngcf,
            AggregatorKind::LightGcn,
        ] {
            for mode in [PoolMode::Sum, PoolMode::Mean] {
                let p = AggregatorParams::init(kind, Activation::LeakyRelu, 2, 6, &mut rng);
                let loss = |x: &Mat, p: &AggregatorParams| {
                    let (out, _) = propagate(&adj, x, p, mode).unwrap();
                    crate::tensor::dot(out.as_slice(), c.as_slice())
                };
                let (_, cache) = propagate(&adj, &x, &p, mode).unwrap();
                let mut grads = p.zeros_like();
                let dx = propagate_backward(&adj, &p, &cache, &c, &mut grads);
                for k in 0..x.as_slice().len() {
                    let mut xp = x.clone();
                    xp.as_mut_slice()[k] += eps;
                    let mut xm = x.clone();
                    xm.as_mut_slice()[k] -= eps;
                    let fd = (loss(&xp, &p) - loss(&xm, &p)) / (2.0 * eps);
                    assert!(
                        rel(fd, dx.as_slice()[k]) < 1e-4,
                        "{kind:?} x[{k}]: {fd} vs {}",
                        dx.as_slice()[k]
                    );
                }
                let analytic: Vec<f64> = grads.mats().flat_map(|m| m.as_slice().to_vec()).collect();
                let mut idx = 0;
                for (mi, m) in p.mats().enumerate() {
                    for k in 0..m.as_slice().len() {
                        let bump = |delta: f64| {
                            let mut q = p.clone();
                            q.mats_mut().nth(mi).unwrap().as_mut_slice()[k] += delta;
                            loss(&x, &q)
                        };
                        let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
                        assert!(rel(fd, analytic[idx]) < 1e-4, "{kind:?} w{mi}[{k}]");
                        idx += 1;
                    }
                }
            }
        }
    }
}
