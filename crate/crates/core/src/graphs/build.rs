//! Construction of the attribute, user-user, item-item and user-item graphs.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sparse::{EdgeKind, GraphBuilder, SparseGraph};
use crate::data::{FieldRange, InteractionMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityParams {
    /// Weight of the interaction-row cosine.
    pub alpha1: f64,
    /// Weight of the attribute-indicator cosine.
    pub alpha2: f64,
    /// Neighbors selected per user.
    pub k: usize,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        SimilarityParams {
            alpha1: 0.5,
            alpha2: 0.5,
            k: 10,
        }
    }
}

impl SimilarityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return Err(Error::config(
                "graphs.alpha1",
                "alpha1 and alpha2 must be non-negative",
            ));
        }
        if self.alpha1 + self.alpha2 <= 0.0 {
            return Err(Error::config(
                "graphs.alpha2",
                "alpha1 + alpha2 must be positive",
            ));
        }
        if self.k == 0 {
            return Err(Error::config("graphs.k", "k must be at least 1"));
        }
        Ok(())
    }
}

/// Bipartite graph between entities `[0, n)` and the values of one attribute
/// field, numbered `n + (index - field.offset)`.
pub fn build_attribute_graph(
    assignments: &[Vec<u32>],
    field: FieldRange,
    kind: EdgeKind,
) -> Result<SparseGraph> {
    let n = assignments.len();
    let mut b = GraphBuilder::new(n + field.cardinality);
    for (e, attrs) in assignments.iter().enumerate() {
        for &a in attrs {
            if !field.contains(a as usize) {
                return Err(Error::Graph(format!(
                    "attribute {a} of entity {e} is outside field range {}..{}",
                    field.offset,
                    field.offset + field.cardinality
                )));
            }
            b.add_edge(e as u32, (n + a as usize - field.offset) as u32, kind);
        }
    }
    Ok(b.build())
}

fn binary_cosine(dot: usize, ni: usize, nj: usize) -> f64 {
    if ni == 0 || nj == 0 {
        0.0
    } else {
        dot as f64 / ((ni * nj) as f64).sqrt()
    }
}

fn combine(p: &SimilarityParams, y: (usize, usize, usize), a: (usize, usize, usize)) -> f64 {
    p.alpha1 * binary_cosine(y.0, y.1, y.2) + p.alpha2 * binary_cosine(a.0, a.1, a.2)
}

fn sorted_intersection(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// `alpha1 cos(Y_i, Y_j) + alpha2 cos(A_i, A_j)` over binary vectors given as
/// sorted index sets. A cosine involving an all-zero vector is 0.
pub fn user_similarity(
    y_i: &[u32],
    y_j: &[u32],
    a_i: &[u32],
    a_j: &[u32],
    params: &SimilarityParams,
) -> f64 {
    combine(
        params,
        (sorted_intersection(y_i, y_j), y_i.len(), y_j.len()),
        (sorted_intersection(a_i, a_j), a_i.len(), a_j.len()),
    )
}

/// Union of a user's attribute values across fields, sorted.
pub fn attribute_set(per_field: &[Vec<u32>]) -> Vec<u32> {
    let mut v: Vec<u32> = per_field.iter().flatten().copied().collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn invert<'a>(rows: impl Iterator<Item = &'a [u32]>) -> BTreeMap<u32, Vec<u32>> {
    let mut idx: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (u, row) in rows.enumerate() {
        for &x in row {
            idx.entry(x).or_default().push(u as u32);
        }
    }
    idx
}

/// Top-k most similar users per user, symmetrized by union.
///
/// Similarities are accumulated through inverted indices over items and
/// attribute values, so only pairs sharing something are ever scored. Ties
/// go to the smaller user index; zero-similarity candidates are never added.
pub fn build_knn_user_graph(
    y: &InteractionMatrix,
    user_attrs: &[Vec<Vec<u32>>],
    params: &SimilarityParams,
) -> Result<SparseGraph> {
    params.validate()?;
    let m = y.n_rows;
    if user_attrs.len() != m {
        return Err(Error::Dimension {
            context: "user attribute rows",
            expected: m,
            got: user_attrs.len(),
        });
    }
    if params.k >= m {
        return Err(Error::InvalidArgument(format!(
            "k = {} must be smaller than the number of users ({m})",
            params.k
        )));
    }
    let attrs: Vec<Vec<u32>> = user_attrs.iter().map(|a| attribute_set(a)).collect();

    let by_item = invert((0..m).map(|u| y.row(u)));
    let by_attr = invert(attrs.iter().map(Vec::as_slice));

    let picks: Vec<Vec<u32>> = (0..m)
        .into_par_iter()
        .map_init(
            || (vec![0usize; m], vec![0usize; m], Vec::new()),
            |(dot_y, dot_a, touched), i| {
                for x in y.row(i) {
                    for &j in &by_item[x] {
                        if dot_y[j as usize] == 0 && dot_a[j as usize] == 0 {
                            touched.push(j);
                        }
                        dot_y[j as usize] += 1;
                    }
                }
                for x in &attrs[i] {
                    for &j in &by_attr[x] {
                        if dot_y[j as usize] == 0 && dot_a[j as usize] == 0 {
                            touched.push(j);
                        }
                        dot_a[j as usize] += 1;
                    }
                }
                let mut scored: Vec<(f64, u32)> = touched
                    .iter()
                    .filter(|&&j| j as usize != i)
                    .map(|&j| {
                        let ju = j as usize;
                        let s = combine(
                            params,
                            (dot_y[ju], y.row(i).len(), y.row(ju).len()),
                            (dot_a[ju], attrs[i].len(), attrs[ju].len()),
                        );
                        (s, j)
                    })
                    .filter(|(s, _)| *s > 0.0)
                    .collect();
                for &j in touched.iter() {
                    dot_y[j as usize] = 0;
                    dot_a[j as usize] = 0;
                }
                touched.clear();
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                scored.truncate(params.k);
                scored.into_iter().map(|(_, j)| j).collect()
            },
        )
        .collect();

    let mut b = GraphBuilder::new(m);
    for (i, js) in picks.iter().enumerate() {
        for &j in js {
            b.add_edge(i as u32, j, EdgeKind::UserUser);
        }
    }
    Ok(b.build())
}

/// Undirected edge between consecutive items of every sequence; repeats and
/// self-transitions collapse.
pub fn build_transition_graph(sequences: &[Vec<u32>], n_items: usize) -> SparseGraph {
    let mut b = GraphBuilder::new(n_items);
    for seq in sequences {
        for w in seq.windows(2) {
            b.add_edge(w[0], w[1], EdgeKind::ItemItem);
        }
    }
    b.build()
}

/// How often each undirected consecutive pair occurs. Not used by propagation.
pub fn transition_counts(sequences: &[Vec<u32>]) -> BTreeMap<(u32, u32), u32> {
    let mut counts = BTreeMap::new();
    for seq in sequences {
        for w in seq.windows(2) {
            if w[0] != w[1] {
                *counts.entry((w[0].min(w[1]), w[0].max(w[1]))).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// One edge per nonzero of `Y`; items are numbered from `M`.
pub fn build_bipartite(y: &InteractionMatrix) -> SparseGraph {
    let m = y.n_rows;
    let mut b = GraphBuilder::new(m + y.n_cols);
    for u in 0..m {
        for &v in y.row(u) {
            b.add_edge(u as u32, m as u32 + v, EdgeKind::UserItem);
        }
    }
    b.build()
}

/// Union of user-user (`M` nodes), user-item (`M + N` nodes) and item-item
/// (`N` nodes) graphs on the shared `M + N` node space, tags preserved.
pub fn merge_collaborative(
    uu: &SparseGraph,
    uv: &SparseGraph,
    vv: &SparseGraph,
) -> Result<SparseGraph> {
    let m = uu.node_count();
    let n = vv.node_count();
    if uv.node_count() != m + n {
        return Err(Error::Graph(format!(
            "user-item graph has {} nodes, expected {m} users + {n} items",
            uv.node_count()
        )));
    }
    let mut b = GraphBuilder::new(m + n);
    for (a, c, k) in uu.edges() {
        b.add_edge(a, c, k);
    }
    for (a, c, k) in uv.edges() {
        let (lo, hi) = (a as usize, c as usize);
        if !(lo < m && hi >= m) {
            return Err(Error::Graph(format!(
                "user-item edge ({a},{c}) does not join the user range [0,{m}) to the item range"
            )));
        }
        b.add_edge(a, c, k);
    }
    for (a, c, k) in vv.edges() {
        b.add_edge(a + m as u32, c + m as u32, k);
    }
    Ok(b.build())
}
