use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::ByteReader;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum EdgeKind {
    UserAttr = 0,
    ItemAttr = 1,
    UserUser = 2,
    ItemItem = 3,
    UserItem = 4,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 5] = [
        EdgeKind::UserAttr,
        EdgeKind::ItemAttr,
        EdgeKind::UserUser,
        EdgeKind::ItemItem,
        EdgeKind::UserItem,
    ];

    pub fn from_u8(x: u8) -> Option<Self> {
        Self::ALL.get(x as usize).copied()
    }

    pub fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// Set of edge kinds used to restrict propagation to part of a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EdgeFilter(u8);

impl EdgeFilter {
    pub const ALL: EdgeFilter = EdgeFilter(0x1f);

    pub fn of(kinds: &[EdgeKind]) -> Self {
        EdgeFilter(kinds.iter().fold(0, |acc, k| acc | k.bit()))
    }

    pub fn contains(self, k: EdgeKind) -> bool {
        self.0 & k.bit() != 0
    }
}

/// Undirected, self-loop-free graph in CSR form with one kind tag per
/// directed half-edge. Neighbor lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseGraph {
    node_count: usize,
    offsets: Vec<u64>,
    neighbors: Vec<u32>,
    kinds: Vec<EdgeKind>,
    degree: Vec<u32>,
}

impl SparseGraph {
    pub fn empty(node_count: usize) -> Self {
        GraphBuilder::new(node_count).build()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn degree(&self, n: usize) -> usize {
        self.degree[n] as usize
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degree
    }

    pub fn neighbors(&self, n: usize) -> &[u32] {
        &self.neighbors[self.offsets[n] as usize..self.offsets[n + 1] as usize]
    }

    pub fn neighbor_kinds(&self, n: usize) -> &[EdgeKind] {
        &self.kinds[self.offsets[n] as usize..self.offsets[n + 1] as usize]
    }

    /// Neighbors of `n` reached through edges of kinds in `filter`.
    pub fn filtered_neighbors(
        &self,
        n: usize,
        filter: EdgeFilter,
    ) -> impl Iterator<Item = u32> + '_ {
        self.neighbors(n)
            .iter()
            .zip(self.neighbor_kinds(n))
            .filter(move |(_, k)| filter.contains(**k))
            .map(|(&i, _)| i)
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&(b as u32)).is_ok()
    }

    pub fn edge_kind(&self, a: usize, b: usize) -> Option<EdgeKind> {
        let pos = self.neighbors(a).binary_search(&(b as u32)).ok()?;
        Some(self.neighbor_kinds(a)[pos])
    }

    /// Undirected edges `(a, b, kind)` with `a < b`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, EdgeKind)> + '_ {
        (0..self.node_count).flat_map(move |a| {
            self.neighbors(a)
                .iter()
                .zip(self.neighbor_kinds(a))
                .filter(move |(&b, _)| (a as u32) < b)
                .map(move |(&b, &k)| (a as u32, b, k))
        })
    }

    pub fn count_by_kind(&self) -> BTreeMap<EdgeKind, usize> {
        let mut m = BTreeMap::new();
        for (_, _, k) in self.edges() {
            *m.entry(k).or_insert(0) += 1;
        }
        m
    }

    /// `1/sqrt(|N_h| |N_i|)`, or 0 when either node is isolated.
    pub fn norm_factor(&self, h: usize, i: usize) -> f64 {
        norm_factor(self.degree(h), self.degree(i))
    }

    /// Keep only edges whose kind is in `filter`; node count unchanged.
    pub fn restrict(&self, filter: EdgeFilter) -> SparseGraph {
        let mut b = GraphBuilder::new(self.node_count);
        for (a, c, k) in self.edges() {
            if filter.contains(k) {
                b.add_edge(a, c, k);
            }
        }
        b.build()
    }

    /// Full structural check: symmetry with matching tags, no self-loops,
    /// no duplicates, sorted rows, consistent degree table.
    pub fn validate(&self) -> Result<()> {
        if self.offsets.len() != self.node_count + 1 || self.degree.len() != self.node_count {
            return Err(Error::Graph("offset/degree table length mismatch".into()));
        }
        for n in 0..self.node_count {
            let row = self.neighbors(n);
            if row.len() != self.degree[n] as usize {
                return Err(Error::Graph(format!(
                    "degree of node {n} disagrees with row"
                )));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Graph(format!("row {n} unsorted or duplicated")));
            }
            for (&m, &k) in row.iter().zip(self.neighbor_kinds(n)) {
                if m as usize == n {
                    return Err(Error::Graph(format!("self-loop at {n}")));
                }
                if m as usize >= self.node_count {
                    return Err(Error::Graph(format!("neighbor {m} out of range")));
                }
                if self.edge_kind(m as usize, n) != Some(k) {
                    return Err(Error::Graph(format!("edge ({n},{m}) not mirrored")));
                }
            }
        }
        Ok(())
    }

    /// Header (magic, node count, edge count, tag flag), u64 offsets,
    /// u32 neighbors, u8 tags. All little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.offsets.len() * 8 + self.neighbors.len() * 5);
        out.extend_from_slice(b"DGGR");
        out.extend_from_slice(&(self.node_count as u64).to_le_bytes());
        out.extend_from_slice(&(self.edge_count() as u64).to_le_bytes());
        out.push(1);
        for o in &self.offsets {
            out.extend_from_slice(&o.to_le_bytes());
        }
        for n in &self.neighbors {
            out.extend_from_slice(&n.to_le_bytes());
        }
        out.extend(self.kinds.iter().map(|&k| k as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "graph file");
        r.expect_magic(b"DGGR")?;
        let node_count = r.u64()? as usize;
        let edge_count = r.u64()? as usize;
        let tagged = r.u8()? == 1;
        let offsets = (0..=node_count)
            .map(|_| r.u64())
            .collect::<Result<Vec<_>>>()?;
        let neighbors = (0..2 * edge_count)
            .map(|_| r.u32())
            .collect::<Result<Vec<_>>>()?;
        let kinds = if tagged {
            (0..2 * edge_count)
                .map(|_| {
                    r.u8().and_then(|x| {
                        EdgeKind::from_u8(x)
                            .ok_or_else(|| Error::format("graph file", "bad edge tag"))
                    })
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![EdgeKind::UserItem; 2 * edge_count]
        };
        r.finish()?;
        let degree = offsets.windows(2).map(|w| (w[1] - w[0]) as u32).collect();
        let g = SparseGraph {
            node_count,
            offsets,
            neighbors,
            kinds,
            degree,
        };
        g.validate()?;
        Ok(g)
    }
}

pub fn norm_factor(deg_h: usize, deg_i: usize) -> f64 {
    if deg_h == 0 || deg_i == 0 {
        0.0
    } else {
        1.0 / ((deg_h * deg_i) as f64).sqrt()
    }
}

/// Accumulates undirected edges; duplicates collapse (first kind wins) and
/// self-loops are dropped.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    node_count: usize,
    edges: BTreeMap<(u32, u32), EdgeKind>,
}

impl GraphBuilder {
    pub fn new(node_count: usize) -> Self {
        GraphBuilder {
            node_count,
            edges: BTreeMap::new(),
        }
    }

    pub fn add_edge(&mut self, a: u32, b: u32, kind: EdgeKind) -> bool {
        assert!(
            (a as usize) < self.node_count && (b as usize) < self.node_count,
            "node out of range"
        );
        if a == b {
            return false;
        }
        let key = (a.min(b), a.max(b));
        if self.edges.contains_key(&key) {
            return false;
        }
        self.edges.insert(key, kind);
        true
    }

    pub fn build(self) -> SparseGraph {
        let n = self.node_count;
        let mut degree = vec![0u32; n];
        for &(a, b) in self.edges.keys() {
            degree[a as usize] += 1;
            degree[b as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0u64);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + *d as u64);
        }
        let total = *offsets.last().unwrap() as usize;
        let mut neighbors = vec![0u32; total];
        let mut kinds = vec![EdgeKind::UserItem; total];
        let mut cursor: Vec<u64> = offsets[..n].to_vec();
        // Keys iterate in (a, b) order, so each row fills in ascending order
        // once both directions are accounted for; sort rows afterwards to be safe.
        for (&(a, b), &k) in &self.edges {
            for (x, y) in [(a, b), (b, a)] {
                let c = &mut cursor[x as usize];
                neighbors[*c as usize] = y;
                kinds[*c as usize] = k;
                *c += 1;
            }
        }
        for v in 0..n {
            let (s, e) = (offsets[v] as usize, offsets[v + 1] as usize);
            let mut row: Vec<(u32, EdgeKind)> = neighbors[s..e]
                .iter()
                .copied()
                .zip(kinds[s..e].iter().copied())
                .collect();
            row.sort_unstable_by_key(|p| p.0);
            for (j, (nb, k)) in row.into_iter().enumerate() {
                neighbors[s + j] = nb;
                kinds[s + j] = k;
            }
        }
        SparseGraph {
            node_count: n,
            offsets,
            neighbors,
            kinds,
            degree,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_factor_examples() {
        assert_eq!(norm_factor(4, 1), 0.5);
        assert_eq!(norm_factor(1, 1), 1.0);
        assert_eq!(norm_factor(2, 8), 0.25);
        assert_eq!(norm_factor(0, 3), 0.0);
    }

    #[test]
    fn builder_dedups_and_drops_self_loops() {
        let mut b = GraphBuilder::new(4);
        assert!(b.add_edge(0, 1, EdgeKind::UserUser));
        assert!(!b.add_edge(1, 0, EdgeKind::UserUser));
        assert!(!b.add_edge(2, 2, EdgeKind::UserUser));
        b.add_edge(3, 1, EdgeKind::UserItem);
        let g = b.build();
        g.validate().unwrap();
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.neighbors(1), &[0, 3]);
        assert_eq!(g.edge_kind(1, 3), Some(EdgeKind::UserItem));
        assert_eq!(g.degree(2), 0);
    }

    #[test]
    fn binary_roundtrip() {
        let mut b = GraphBuilder::new(5);
        b.add_edge(0, 4, EdgeKind::UserItem);
        b.add_edge(1, 2, EdgeKind::UserUser);
        b.add_edge(3, 4, EdgeKind::ItemItem);
        let g = b.build();
        let bytes = g.to_bytes();
        assert_eq!(&bytes[..4], b"DGGR");
        assert_eq!(SparseGraph::from_bytes(&bytes).unwrap(), g);
        assert!(SparseGraph::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn restrict_keeps_degrees_consistent() {
        let mut b = GraphBuilder::new(4);
        b.add_edge(0, 1, EdgeKind::UserUser);
        b.add_edge(0, 2, EdgeKind::UserItem);
        b.add_edge(2, 3, EdgeKind::ItemItem);
        let g = b.build().restrict(EdgeFilter::of(&[EdgeKind::UserItem]));
        g.validate().unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.degree(0), 1);
        assert_eq!(g.degree(3), 0);
    }
}
