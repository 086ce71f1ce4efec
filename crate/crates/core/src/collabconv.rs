//! Collaborative graph convolution in two stages: user-user and item-item
//! edges first, then user-item edges seeded with the pooled first-stage
//! output.
//!
//! The collaborative node space is the first `M + N` rows of the table
//! (users, then items). Other rows pass through.

use crate::aggregators::{
    propagate, propagate_backward, AggregatorParams, NormAdjacency, PoolMode, PropagationCache,
};
use crate::error::{Error, Result};
use crate::graphs::{EdgeFilter, EdgeKind, SparseGraph};
use crate::tensor::Mat;

pub fn within_filter() -> EdgeFilter {
    EdgeFilter::of(&[EdgeKind::UserUser, EdgeKind::ItemItem])
}

pub fn across_filter() -> EdgeFilter {
    EdgeFilter::of(&[EdgeKind::UserItem])
}

/// Which edge families run first. The reversed order exists to show the
/// schedule matters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum StageOrder {
    #[default]
    WithinFirst,
    AcrossFirst,
}

/// Propagation over the user-user / item-item part of `cf`, pooled.
pub fn within_propagate(
    cf: &SparseGraph,
    z: &Mat,
    params: &AggregatorParams,
    mode: PoolMode,
) -> Result<Mat> {
    let adj = NormAdjacency::new(&cf.restrict(within_filter()));
    Ok(propagate(&adj, z, params, mode)?.0)
}

/// Propagation over the user-item part of `cf`, pooled; `seed` is the
/// layer-0 state and is part of the pooled output.
pub fn across_propagate(
    cf: &SparseGraph,
    seed: &Mat,
    params: &AggregatorParams,
    mode: PoolMode,
) -> Result<Mat> {
    let adj = NormAdjacency::new(&cf.restrict(across_filter()));
    Ok(propagate(&adj, seed, params, mode)?.0)
}

/// Both stages with prebuilt adjacencies. A disabled stage is skipped
/// entirely, so its input passes through exactly.
#[derive(Debug, Clone)]
pub struct CollabConv {
    within: NormAdjacency,
    across: NormAdjacency,
    pub nodes: usize,
    pub mode: PoolMode,
    pub within_enabled: bool,
    pub across_enabled: bool,
    pub order: StageOrder,
}

pub struct CollabCache {
    stages: Vec<(bool, PropagationCache)>,
}

impl CollabConv {
    pub fn new(cf: &SparseGraph, mode: PoolMode) -> Self {
        CollabConv {
            within: NormAdjacency::new(&cf.restrict(within_filter())),
            across: NormAdjacency::new(&cf.restrict(across_filter())),
            nodes: cf.node_count(),
            mode,
            within_enabled: true,
            across_enabled: true,
            order: StageOrder::WithinFirst,
        }
    }

    /// Stages to run as `(is_within, adjacency)`, in order.
    fn schedule(&self) -> Vec<(bool, &NormAdjacency)> {
        let mut s = Vec::new();
        let within = self.within_enabled.then_some((true, &self.within));
        let across = self.across_enabled.then_some((false, &self.across));
        match self.order {
            StageOrder::WithinFirst => s.extend(within.into_iter().chain(across)),
            StageOrder::AcrossFirst => s.extend(across.into_iter().chain(within)),
        }
        s
    }

    /// Final table `P`: collaborative rows replaced by the staged output.
    pub fn forward(
        &self,
        z: &Mat,
        within_params: &AggregatorParams,
        across_params: &AggregatorParams,
    ) -> Result<(Mat, CollabCache)> {
        if z.rows() < self.nodes {
            return Err(Error::Dimension {
                context: "collaborative table rows",
                expected: self.nodes,
                got: z.rows(),
            });
        }
        let mut state = Mat::from_vec(
            self.nodes,
            z.cols(),
            z.as_slice()[..self.nodes * z.cols()].to_vec(),
        );
        let mut stages = Vec::new();
        for (is_within, adj) in self.schedule() {
            let params = if is_within {
                within_params
            } else {
                across_params
            };
            let (out, cache) = propagate(adj, &state, params, self.mode)?;
            stages.push((is_within, cache));
            state = out;
        }
        let mut p = z.clone();
        p.as_mut_slice()[..self.nodes * z.cols()].copy_from_slice(state.as_slice());
        Ok((p, CollabCache { stages }))
    }

    pub fn backward(
        &self,
        cache: &CollabCache,
        within_params: &AggregatorParams,
        across_params: &AggregatorParams,
        dp: &Mat,
        within_grads: &mut AggregatorParams,
        across_grads: &mut AggregatorParams,
    ) -> Mat {
        let cols = dp.cols();
        let mut d = Mat::from_vec(
            self.nodes,
            cols,
            dp.as_slice()[..self.nodes * cols].to_vec(),
        );
        for (is_within, stage_cache) in cache.stages.iter().rev() {
            let (adj, params, grads) = if *is_within {
                (&self.within, within_params, &mut *within_grads)
            } else {
                (&self.across, across_params, &mut *across_grads)
            };
            d = propagate_backward(adj, params, stage_cache, &d, grads);
        }
        let mut dz = dp.clone();
        dz.as_mut_slice()[..self.nodes * cols].copy_from_slice(d.as_slice());
        dz
    }
}
