//! Undirected attributed graphs, splits, unlearning requests and perturbations.

mod io;
mod perturb;
mod request;
mod split;
mod synth;

pub use io::{load_dataset, write_dataset};
pub use perturb::{perturb, Perturbation, Perturbed};
pub use request::{apply_request, make_request, RequestKind, Residual, Targets, UnlearnRequest};
pub use split::{split_dataset, split_edges, split_ids, DataSplit, EdgeSplit, SplitMode, TrainingView};
pub use synth::{synth_graph_set, synth_sbm, SbmParams};

use std::collections::VecDeque;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical undirected edge, always stored with `.0 < .1`.
pub type Edge = (usize, usize);

pub fn canonical(u: usize, v: usize) -> Edge {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Simple undirected graph with node features and optional labels.
///
/// Edges are kept sorted and deduplicated so membership checks are a binary
/// search and every derived structure has a deterministic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    node_count: usize,
    edges: Vec<Edge>,
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    /// `false` marks nodes whose label is unknown (excluded from supervision).
    label_mask: Option<Vec<bool>>,
    num_classes: usize,
    pub graph_id: Option<String>,
}

/// Builds a graph, canonicalizing and deduplicating edges.
///
/// Returns the graph and the number of self-loops that were dropped.
pub fn build_graph(
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    edges: &[(usize, usize)],
) -> Result<(Graph, usize)> {
    let n = features.nrows();
    if n == 0 || features.ncols() == 0 {
        return Err(Error::ShapeMismatch("feature matrix is empty".into()));
    }
    if features.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("feature matrix"));
    }
    let mut num_classes = 0;
    if let Some(labels) = &labels {
        if labels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} nodes",
                labels.len(),
                n
            )));
        }
        num_classes = labels.iter().max().map_or(0, |&c| c + 1);
    }
    let mut self_loops = 0;
    let mut canon = Vec::with_capacity(edges.len());
    for &(u, v) in edges {
        for x in [u, v] {
            if x >= n {
                return Err(Error::OutOfRange {
                    what: "nodes",
                    index: x,
                    len: n,
                });
            }
        }
        if u == v {
            self_loops += 1;
            continue;
        }
        canon.push(canonical(u, v));
    }
    canon.sort_unstable();
    canon.dedup();
    Ok((
        Graph {
            node_count: n,
            edges: canon,
            features,
            labels,
            label_mask: None,
            num_classes,
            graph_id: None,
        },
        self_loops,
    ))
}

impl Graph {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn labels_or_err(&self) -> Result<&[usize]> {
        self.labels.as_deref().ok_or(Error::MissingLabels)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Overrides the class count, e.g. when a subgraph lacks the top class.
    pub fn with_num_classes(mut self, c: usize) -> Self {
        self.num_classes = self.num_classes.max(c);
        self
    }

    pub fn is_labeled(&self, v: usize) -> bool {
        self.labels.is_some() && self.label_mask.as_ref().is_none_or(|m| m[v])
    }

    pub fn label_mask(&self) -> Option<&[bool]> {
        self.label_mask.as_deref()
    }

    pub fn set_label_mask(&mut self, mask: Option<Vec<bool>>) {
        self.label_mask = mask;
    }

    pub(crate) fn labels_mut(&mut self) -> Option<&mut Vec<usize>> {
        self.labels.as_mut()
    }

    pub(crate) fn features_mut(&mut self) -> &mut Array2<f64> {
        &mut self.features
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u != v && self.edges.binary_search(&canonical(u, v)).is_ok()
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Same node set with the given edges removed; absent edges are ignored.
    pub fn without_edges(&self, remove: &[Edge]) -> Graph {
        let mut drop: Vec<Edge> = remove.iter().map(|&(u, v)| canonical(u, v)).collect();
        drop.sort_unstable();
        let mut g = self.clone();
        g.edges.retain(|e| drop.binary_search(e).is_err());
        g
    }

    /// Same node set with the given edges added (canonicalized, deduplicated).
    pub fn with_extra_edges(&self, add: &[Edge]) -> Result<Graph> {
        let mut all = self.edges.clone();
        all.extend_from_slice(add);
        let (mut g, _) = build_graph(self.features.clone(), self.labels.clone(), &all)?;
        g.label_mask = self.label_mask.clone();
        g.num_classes = self.num_classes;
        g.graph_id = self.graph_id.clone();
        Ok(g)
    }

    /// Removes every edge incident to `nodes`, keeping ids stable.
    pub fn isolate(&self, nodes: &[usize]) -> Graph {
        let mut mark = vec![false; self.node_count];
        for &v in nodes {
            mark[v] = true;
        }
        let mut g = self.clone();
        g.edges.retain(|&(u, v)| !mark[u] && !mark[v]);
        g
    }

    /// Subgraph induced on `nodes` (kept in the given order, re-indexed 0..).
    pub fn induced(&self, nodes: &[usize]) -> Graph {
        let mut local = vec![usize::MAX; self.node_count];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }
        let mut edges: Vec<Edge> = self
            .edges
            .iter()
            .filter(|&&(u, v)| local[u] != usize::MAX && local[v] != usize::MAX)
            .map(|&(u, v)| canonical(local[u], local[v]))
            .collect();
        edges.sort_unstable();
        let features = self.features.select(ndarray::Axis(0), nodes);
        let labels = self
            .labels
            .as_ref()
            .map(|l| nodes.iter().map(|&v| l[v]).collect());
        let label_mask = self
            .label_mask
            .as_ref()
            .map(|m| nodes.iter().map(|&v| m[v]).collect());
        Graph {
            node_count: nodes.len(),
            edges,
            features,
            labels,
            label_mask,
            num_classes: self.num_classes,
            graph_id: self.graph_id.clone(),
        }
    }

    /// Nodes within `hops` of any seed node (seeds included), ascending.
    pub fn k_hop(&self, seeds: &[usize], hops: usize) -> Vec<usize> {
        self.hop_distances(seeds)
            .into_iter()
            .enumerate()
            .filter(|&(_, d)| d <= hops)
            .map(|(v, _)| v)
            .collect()
    }

    /// BFS distance from the nearest seed; `usize::MAX` when unreachable.
    pub fn hop_distances(&self, seeds: &[usize]) -> Vec<usize> {
        let adj = self.neighbors();
        let mut dist = vec![usize::MAX; self.node_count];
        let mut queue = VecDeque::new();
        for &s in seeds {
            if dist[s] != 0 {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }
}

/// A labeled collection of graphs for graph-level tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSet {
    graphs: Vec<Graph>,
    graph_labels: Vec<usize>,
    num_classes: usize,
}

impl GraphSet {
    pub fn new(graphs: Vec<Graph>, graph_labels: Vec<usize>) -> Result<Self> {
        if graphs.len() != graph_labels.len() {
            return Err(Error::LengthMismatch(graphs.len(), graph_labels.len()));
        }
        if graphs.is_empty() {
            return Err(Error::EmptySet("graph set"));
        }
        let f = graphs[0].feature_dim();
        if graphs.iter().any(|g| g.feature_dim() != f) {
            return Err(Error::ShapeMismatch("graphs differ in feature width".into()));
        }
        let num_classes = graph_labels.iter().max().map_or(0, |&c| c + 1);
        Ok(Self {
            graphs,
            graph_labels,
            num_classes,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn labels(&self) -> &[usize] {
        &self.graph_labels
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs[0].feature_dim()
    }

    /// Copy with graph `idx` replaced.
    pub fn with_graph(&self, idx: usize, g: Graph) -> GraphSet {
        let mut out = self.clone();
        out.graphs[idx] = g;
        out
    }

    pub fn subset(&self, ids: &[usize]) -> GraphSet {
        GraphSet {
            graphs: ids.iter().map(|&i| self.graphs[i].clone()).collect(),
            graph_labels: ids.iter().map(|&i| self.graph_labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}
