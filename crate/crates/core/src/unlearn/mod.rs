//! Unlearning methods: retraining oracle, sharded retraining, influence
//! updates, a learned deletion operator, edge unlinking and weight projection.

mod cg;
mod eraser;
mod gnndelete;
mod influence;
mod projector;

pub use cg::{conjugate_gradient, CgOutcome};
pub use eraser::{
    aggregate_graph_predict, aggregate_predict, aggregate_scores, balanced_kmeans, eraser_unlearn, eraser_unlearn_graphs,
    partition, partition_graphs, ShardPlan,
};
pub use gnndelete::{gnndelete_unlearn, DeleteOptions, DeletionModel};
pub use influence::{
    affected_nodes, ceu_unlearn, gif_unlearn, gif_unlearn_graphs, with_damping_retries, InfluenceOptions,
};
pub use projector::projector_unlearn;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{self, Backbone, Hyper, ModelParams, Task};
use crate::graph::{apply_request, DataSplit, Edge, Graph, GraphSet, RequestKind, UnlearnRequest};

/// What to train: architecture, downstream task and optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub backbone: Backbone,
    pub task: Task,
    pub hyper: Hyper,
}

impl TrainSpec {
    pub fn train(&self, g: &Graph, split: &DataSplit, seed: u64) -> Result<ModelParams> {
        gnn::train(self.backbone, g, split, self.task, &self.hyper, seed)
    }

    pub fn train_graphs(&self, set: &GraphSet, split: &DataSplit, seed: u64) -> Result<ModelParams> {
        gnn::train_graphs(self.backbone, set, split, &self.hyper, seed)
    }
}

/// Feature requests against individual graphs of a [`GraphSet`].
pub type GraphRequest = [(usize, UnlearnRequest)];

/// Ground-truth model trained from scratch on the residual graph.
pub fn retrain_oracle(
    spec: &TrainSpec,
    g: &Graph,
    split: &DataSplit,
    request: &UnlearnRequest,
    seed: u64,
) -> Result<ModelParams> {
    let residual = apply_request(g, request)?;
    let split = match &residual.id_map {
        Some(map) => split.without(request.nodes()).remap(map),
        None => split.clone(),
    };
    spec.train(&residual.graph, &split, seed)
}

/// Retraining oracle for graph classification.
pub fn retrain_graphs(
    spec: &TrainSpec,
    set: &GraphSet,
    split: &DataSplit,
    requests: &GraphRequest,
    seed: u64,
) -> Result<ModelParams> {
    spec.train_graphs(&pruned_set(set, requests)?, split, seed)
}

/// `g` with the request applied but node ids kept: deleted nodes lose all
/// their edges instead of being re-indexed. Retained nodes see exactly the
/// same neighborhoods as in the re-indexed residual graph.
pub fn pruned_view(g: &Graph, request: &UnlearnRequest) -> Result<Graph> {
    match request.kind() {
        RequestKind::Node => {
            if let Some(&v) = request.nodes().iter().find(|&&v| v >= g.node_count()) {
                return Err(Error::MissingTarget(format!("node {v}")));
            }
            Ok(g.isolate(request.nodes()))
        }
        RequestKind::Edge | RequestKind::Feature => Ok(apply_request(g, request)?.graph),
    }
}

/// Unlinks the given edges; the model is left as it is and inference runs
/// on the returned graph. Every edge must exist.
pub fn utu_unlearn(g: &Graph, edges: &[Edge]) -> Result<Graph> {
    for &(u, v) in edges {
        if u >= g.node_count() || v >= g.node_count() || !g.has_edge(u, v) {
            return Err(Error::MissingTarget(format!("edge ({u}, {v})")));
        }
    }
    Ok(g.without_edges(edges))
}

/// Inference graph for the unlinking method under any request kind: edges
/// are unlinked, deleted nodes are cut off from their neighbors, and masked
/// features are zeroed.
pub fn utu_graph(g: &Graph, request: &UnlearnRequest) -> Result<Graph> {
    match request.kind() {
        RequestKind::Edge => utu_unlearn(g, request.edges()),
        _ => {
            request.validate(g, None)?;
            pruned_view(g, request)
        }
    }
}

/// Applies per-graph feature requests to a copy of `set`.
pub fn pruned_set(set: &GraphSet, requests: &GraphRequest) -> Result<GraphSet> {
    let mut out = set.clone();
    for (idx, r) in requests {
        if *idx >= set.len() {
            return Err(Error::OutOfRange {
                what: "graph",
                index: *idx,
                len: set.len(),
            });
        }
        if r.kind() != RequestKind::Feature {
            return Err(Error::KindMismatch {
                expected: RequestKind::Feature.name(),
                got: r.kind().name(),
            });
        }
        let g = apply_request(&out.graphs()[*idx], r)?.graph;
        out = out.with_graph(*idx, g);
    }
    Ok(out)
}

/// Nodes whose neighborhoods a request changes: the named nodes plus the
/// endpoints of every edge it removes.
pub(crate) fn seed_nodes(g: &Graph, request: &UnlearnRequest) -> Vec<usize> {
    let mut seeds = request.touched_nodes();
    seeds.extend(request.removed_edges(g).iter().flat_map(|&(u, v)| [u, v]));
    seeds.sort_unstable();
    seeds.dedup();
    seeds
}
