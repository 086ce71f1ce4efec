//! Attribute and collaborative graphs.
//!
//! Attribute graphs are built per (side, field) and number entities first,
//! then that field's values. The collaborative graph shares the global
//! user/item numbering: users `[0, M)`, items `[M, M + N)`.

mod build;
mod sampling;
mod sparse;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use build::{
    attribute_set, build_attribute_graph, build_bipartite, build_knn_user_graph,
    build_transition_graph, merge_collaborative, transition_counts, user_similarity,
    SimilarityParams,
};
pub use sampling::{sample_neighbors, sample_subgraph};
pub use sparse::{norm_factor, EdgeFilter, EdgeKind, GraphBuilder, SparseGraph};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io_util::{read_file, write_file};

/// Every graph the model propagates over.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSet {
    pub user_attr: Vec<SparseGraph>,
    pub item_attr: Vec<SparseGraph>,
    pub collaborative: SparseGraph,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    user_attr: usize,
    item_attr: usize,
    n_users: usize,
    n_items: usize,
    similarity: SimilarityParams,
}

impl GraphSet {
    pub fn build(ds: &Dataset, params: &SimilarityParams) -> Result<Self> {
        let layout = ds.layout();
        let per_field = |rows: &[Vec<Vec<u32>>], f: usize| -> Vec<Vec<u32>> {
            rows.iter().map(|r| r[f].clone()).collect()
        };
        let user_attr = layout
            .user_attr
            .iter()
            .enumerate()
            .map(|(f, &range)| {
                build_attribute_graph(&per_field(&ds.user_attrs, f), range, EdgeKind::UserAttr)
            })
            .collect::<Result<Vec<_>>>()?;
        let item_attr = layout
            .item_attr
            .iter()
            .enumerate()
            .map(|(f, &range)| {
                build_attribute_graph(&per_field(&ds.item_attrs, f), range, EdgeKind::ItemAttr)
            })
            .collect::<Result<Vec<_>>>()?;
        let uu = build_knn_user_graph(&ds.interactions, &ds.user_attrs, params)?;
        let vv = build_transition_graph(&ds.train_sequences, ds.n_items());
        let uv = build_bipartite(&ds.interactions);
        let collaborative = merge_collaborative(&uu, &uv, &vv)?;
        Ok(GraphSet {
            user_attr,
            item_attr,
            collaborative,
        })
    }

    /// Same node space with no edges anywhere.
    pub fn empty(ds: &Dataset) -> Self {
        let layout = ds.layout();
        GraphSet {
            user_attr: layout
                .user_attr
                .iter()
                .map(|r| SparseGraph::empty(layout.n_users + r.cardinality))
                .collect(),
            item_attr: layout
                .item_attr
                .iter()
                .map(|r| SparseGraph::empty(layout.n_items + r.cardinality))
                .collect(),
            collaborative: SparseGraph::empty(layout.n_users + layout.n_items),
        }
    }

    /// Writes `manifest.json`, `ua_<f>.bin`, `vb_<f>.bin` and `cf.bin`.
    pub fn save(&self, dir: &Path, n_users: usize, params: &SimilarityParams) -> Result<()> {
        let manifest = Manifest {
            user_attr: self.user_attr.len(),
            item_attr: self.item_attr.len(),
            n_users,
            n_items: self.collaborative.node_count() - n_users,
            similarity: *params,
        };
        write_file(
            &dir.join("manifest.json"),
            &serde_json::to_vec_pretty(&manifest)?,
        )?;
        for (f, g) in self.user_attr.iter().enumerate() {
            write_file(&dir.join(format!("ua_{f}.bin")), &g.to_bytes())?;
        }
        for (f, g) in self.item_attr.iter().enumerate() {
            write_file(&dir.join(format!("vb_{f}.bin")), &g.to_bytes())?;
        }
        write_file(&dir.join("cf.bin"), &self.collaborative.to_bytes())
    }

    /// Loads a saved set and checks it against the dataset's node space.
    pub fn load(dir: &Path, ds: &Dataset) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_slice(&read_file(&dir.join("manifest.json"), "graph manifest")?)?;
        let layout = ds.layout();
        if manifest.n_users != layout.n_users
            || manifest.n_items != layout.n_items
            || manifest.user_attr != layout.user_attr.len()
            || manifest.item_attr != layout.item_attr.len()
        {
            return Err(Error::Graph(
                "graph set does not match the dataset bundle".into(),
            ));
        }
        let load =
            |name: String| SparseGraph::from_bytes(&read_file(&dir.join(name), "graph file")?);
        let set = GraphSet {
            user_attr: (0..manifest.user_attr)
                .map(|f| load(format!("ua_{f}.bin")))
                .collect::<Result<_>>()?,
            item_attr: (0..manifest.item_attr)
                .map(|f| load(format!("vb_{f}.bin")))
                .collect::<Result<_>>()?,
            collaborative: load("cf.bin".into())?,
        };
        for (g, r) in set.user_attr.iter().zip(&layout.user_attr) {
            if g.node_count() != layout.n_users + r.cardinality {
                return Err(Error::Graph("user attribute graph size mismatch".into()));
            }
        }
        for (g, r) in set.item_attr.iter().zip(&layout.item_attr) {
            if g.node_count() != layout.n_items + r.cardinality {
                return Err(Error::Graph("item attribute graph size mismatch".into()));
            }
        }
        if set.collaborative.node_count() != layout.n_users + layout.n_items {
            return Err(Error::Graph("collaborative graph size mismatch".into()));
        }
        Ok(set)
    }

    pub fn stats(&self, n_users: usize) -> BTreeMap<String, GraphStats> {
        let mut out = BTreeMap::new();
        for (f, g) in self.user_attr.iter().enumerate() {
            out.insert(format!("ua_{f}"), GraphStats::of(g, 0..n_users));
        }
        for (f, g) in self.item_attr.iter().enumerate() {
            let n_items = self.collaborative.node_count() - n_users;
            out.insert(format!("vb_{f}"), GraphStats::of(g, 0..n_items));
        }
        let all = self.collaborative.node_count();
        out.insert(
            "cf_users".into(),
            GraphStats::of(&self.collaborative, 0..n_users),
        );
        out.insert(
            "cf_items".into(),
            GraphStats::of(&self.collaborative, n_users..all),
        );
        out
    }
}

/// Edge counts and a power-of-two degree histogram over a node range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub edges_by_kind: BTreeMap<String, usize>,
    pub isolated: usize,
    pub max_degree: usize,
    pub mean_degree: f64,
    /// `(lo, hi, count)` with buckets `[0,1), [1,2), [2,4), [4,8), ...`.
    pub degree_histogram: Vec<(usize, usize, usize)>,
}

impl GraphStats {
    pub fn of(g: &SparseGraph, nodes: std::ops::Range<usize>) -> Self {
        let degs: Vec<usize> = nodes.clone().map(|n| g.degree(n)).collect();
        let max_degree = degs.iter().copied().max().unwrap_or(0);
        let mut hist = vec![(0, 1, 0)];
        let mut lo = 1;
        while lo <= max_degree {
            hist.push((lo, lo * 2, 0));
            lo *= 2;
        }
        for &d in &degs {
            let b = if d == 0 {
                0
            } else {
                (usize::BITS - d.leading_zeros()) as usize
            };
            hist[b].2 += 1;
        }
        GraphStats {
            nodes: degs.len(),
            edges: g.edge_count(),
            edges_by_kind: g
                .count_by_kind()
                .into_iter()
                .map(|(k, c)| (format!("{k:?}"), c))
                .collect(),
            isolated: degs.iter().filter(|&&d| d == 0).count(),
            max_degree,
            mean_degree: if degs.is_empty() {
                0.0
            } else {
                degs.iter().sum::<usize>() as f64 / degs.len() as f64
            },
            degree_histogram: hist,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_buckets() {
        let mut b = GraphBuilder::new(6);
        for i in 1..6 {
            b.add_edge(0, i, EdgeKind::UserUser);
        }
        b.add_edge(1, 2, EdgeKind::UserUser);
        let s = GraphStats::of(&b.build(), 0..6);
        // degrees: 5, 2, 2, 1, 1, 1
        assert_eq!(
            s.degree_histogram,
            vec![(0, 1, 0), (1, 2, 3), (2, 4, 2), (4, 8, 1)]
        );
        assert_eq!(s.max_degree, 5);
        assert_eq!(s.edges, 6);
    }
}
