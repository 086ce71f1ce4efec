//! Per-node uniform neighbor sampling for training-time propagation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sparse::{GraphBuilder, SparseGraph};
use crate::seeding::derive;

fn node_rng(seed: u64, node: usize, epoch: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(&[seed, epoch, node as u64]))
}

/// `min(fanout, degree)` distinct neighbors of `node`, uniformly without
/// replacement, returned in ascending order. A pure function of
/// `(seed, node, epoch)`.
pub fn sample_neighbors(
    graph: &SparseGraph,
    node: usize,
    fanout: usize,
    seed: u64,
    epoch: u64,
) -> Vec<u32> {
    assert!(fanout >= 1, "fanout must be at least 1");
    let row = graph.neighbors(node);
    if row.len() <= fanout {
        return row.to_vec();
    }
    let mut rng = node_rng(seed, node, epoch);
    let mut picked: Vec<u32> = rand::seq::index::sample(&mut rng, row.len(), fanout)
        .into_iter()
        .map(|i| row[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Subgraph holding every edge sampled from either endpoint; tags kept.
/// Degrees (and so normalization) come from the sampled graph.
pub fn sample_subgraph(graph: &SparseGraph, fanout: usize, seed: u64, epoch: u64) -> SparseGraph {
    let mut b = GraphBuilder::new(graph.node_count());
    for n in 0..graph.node_count() {
        for m in sample_neighbors(graph, n, fanout, seed, epoch) {
            let kind = graph.edge_kind(n, m as usize).expect("sampled edge exists");
            b.add_edge(n as u32, m, kind);
        }
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::EdgeKind;

    fn star(leaves: usize) -> SparseGraph {
        let mut b = GraphBuilder::new(leaves + 1);
        for i in 1..=leaves {
            b.add_edge(0, i as u32, EdgeKind::UserUser);
        }
        b.build()
    }

    #[test]
    fn fanout_above_degree_keeps_all() {
        assert_eq!(sample_neighbors(&star(3), 0, 5, 1, 0), vec![1, 2, 3]);
    }

    #[test]
    fn exact_cardinality_and_determinism() {
        let g = star(100);
        let a = sample_neighbors(&g, 0, 10, 42, 3);
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, sample_neighbors(&g, 0, 10, 42, 3));
        assert_ne!(a, sample_neighbors(&g, 0, 10, 42, 4));
    }

    #[test]
    fn subgraph_is_valid_and_contained() {
        let g = star(50);
        let s = sample_subgraph(&g, 5, 9, 0);
        s.validate().unwrap();
        // every leaf keeps its only edge, so the center ends up with all 50
        assert_eq!(s.edge_count(), 50);
        let s = sample_subgraph(&g, 5, 9, 0).restrict(crate::graphs::EdgeFilter::ALL);
        assert!(s
            .edges()
            .all(|(a, b, _)| g.has_edge(a as usize, b as usize)));
    }
}
