use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{canonical, DataSplit, Edge, Graph};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Node,
    Edge,
    Feature,
}

impl RequestKind {
    pub fn name(self) -> &'static str {
        match self {
            RequestKind::Node => "node",
            RequestKind::Edge => "edge",
            RequestKind::Feature => "feature",
        }
    }
}

/// Raw targets handed to [`make_request`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Targets {
    Nodes(Vec<usize>),
    Edges(Vec<Edge>),
    Features(Vec<(usize, Vec<usize>)>),
}

impl Targets {
    fn level(&self) -> &'static str {
        match self {
            Targets::Nodes(_) => "node",
            Targets::Edges(_) => "edge",
            Targets::Features(_) => "feature",
        }
    }
}

/// A deletion request with exactly one populated level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlearnRequest {
    kind: RequestKind,
    delta_v: Vec<usize>,
    delta_e: Vec<Edge>,
    delta_x: Vec<(usize, Vec<usize>)>,
}

pub fn make_request(kind: RequestKind, targets: Targets) -> Result<UnlearnRequest> {
    let mismatch = |t: &Targets| Error::KindMismatch {
        expected: kind.name(),
        got: t.level(),
    };
    let mut req = UnlearnRequest {
        kind,
        delta_v: Vec::new(),
        delta_e: Vec::new(),
        delta_x: Vec::new(),
    };
    match (kind, targets) {
        (RequestKind::Node, Targets::Nodes(mut ids)) => {
            ids.sort_unstable();
            ids.dedup();
            req.delta_v = ids;
        }
        (RequestKind::Edge, Targets::Edges(edges)) => {
            let mut edges: Vec<Edge> = edges.into_iter().map(|(u, v)| canonical(u, v)).collect();
            edges.sort_unstable();
            edges.dedup();
            req.delta_e = edges;
        }
        (RequestKind::Feature, Targets::Features(entries)) => {
            let mut merged: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (v, dims) in entries {
                merged.entry(v).or_default().extend(dims);
            }
            for dims in merged.values_mut() {
                dims.sort_unstable();
                dims.dedup();
            }
            merged.retain(|_, dims| !dims.is_empty());
            req.delta_x = merged.into_iter().collect();
        }
        (_, t) => return Err(mismatch(&t)),
    }
    if req.size() == 0 {
        return Err(Error::EmptyRequest);
    }
    Ok(req)
}

impl UnlearnRequest {
    pub fn kind(&self) -> RequestKind {
        self.kind
    }

    pub fn nodes(&self) -> &[usize] {
        &self.delta_v
    }

    pub fn edges(&self) -> &[Edge] {
        &self.delta_e
    }

    pub fn features(&self) -> &[(usize, Vec<usize>)] {
        &self.delta_x
    }

    /// Cardinality `u` of the populated level.
    pub fn size(&self) -> usize {
        match self.kind {
            RequestKind::Node => self.delta_v.len(),
            RequestKind::Edge => self.delta_e.len(),
            RequestKind::Feature => self.delta_x.len(),
        }
    }

    /// Nodes the request names directly: deleted nodes, edge endpoints, or
    /// nodes whose features are masked.
    pub fn touched_nodes(&self) -> Vec<usize> {
        let mut out: Vec<usize> = match self.kind {
            RequestKind::Node => self.delta_v.clone(),
            RequestKind::Edge => self.delta_e.iter().flat_map(|&(u, v)| [u, v]).collect(),
            RequestKind::Feature => self.delta_x.iter().map(|(v, _)| *v).collect(),
        };
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Edges whose removal the request implies in `g`.
    pub fn removed_edges(&self, g: &Graph) -> Vec<Edge> {
        match self.kind {
            RequestKind::Node => g
                .edges()
                .iter()
                .copied()
                .filter(|(u, v)| {
                    self.delta_v.binary_search(u).is_ok() || self.delta_v.binary_search(v).is_ok()
                })
                .collect(),
            RequestKind::Edge => self
                .delta_e
                .iter()
                .copied()
                .filter(|&(u, v)| g.has_edge(u, v))
                .collect(),
            RequestKind::Feature => Vec::new(),
        }
    }

    /// Checks that every target exists in `g` and, when a split is given,
    /// that node and feature targets are training nodes.
    pub fn validate(&self, g: &Graph, split: Option<&DataSplit>) -> Result<()> {
        let n = g.node_count();
        let check_node = |v: usize| -> Result<()> {
            if v >= n {
                return Err(Error::MissingTarget(format!("node {v}")));
            }
            if let Some(split) = split {
                if !split.is_train(v) {
                    return Err(Error::TargetNotInTrain(v));
                }
            }
            Ok(())
        };
        match self.kind {
            RequestKind::Node => self.delta_v.iter().try_for_each(|&v| check_node(v)),
            RequestKind::Edge => self.delta_e.iter().try_for_each(|&(u, v)| {
                if g.has_edge(u, v) {
                    Ok(())
                } else {
                    Err(Error::MissingTarget(format!("edge ({u}, {v})")))
                }
            }),
            RequestKind::Feature => self.delta_x.iter().try_for_each(|(v, dims)| {
                check_node(*v)?;
                match dims.iter().find(|&&d| d >= g.feature_dim()) {
                    Some(d) => Err(Error::MissingTarget(format!("feature dim {d} of node {v}"))),
                    None => Ok(()),
                }
            }),
        }
    }

    /// Maps node ids through `id_map`, dropping targets that no longer exist.
    /// Returns `None` if nothing survives.
    pub fn remap(&self, id_map: &[Option<usize>]) -> Option<UnlearnRequest> {
        let targets = match self.kind {
            RequestKind::Node => Targets::Nodes(self.delta_v.iter().filter_map(|&v| id_map[v]).collect()),
            RequestKind::Edge => Targets::Edges(
                self.delta_e
                    .iter()
                    .filter_map(|&(u, v)| Some((id_map[u]?, id_map[v]?)))
                    .collect(),
            ),
            RequestKind::Feature => Targets::Features(
                self.delta_x
                    .iter()
                    .filter_map(|(v, dims)| Some((id_map[*v]?, dims.clone())))
                    .collect(),
            ),
        };
        make_request(self.kind, targets).ok()
    }

    /// Seeded request at `ratio` of the eligible targets: training nodes for
    /// node requests, edges for edge requests, and whole feature vectors of
    /// training nodes for feature requests.
    pub fn sample(
        g: &Graph,
        split: &DataSplit,
        kind: RequestKind,
        ratio: f64,
        seed: u64,
    ) -> Result<UnlearnRequest> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::InvalidRatio(ratio));
        }
        let mut rng = seed::rng(seed);
        let pick = |pool: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<usize> {
            let count = ((ratio * pool as f64).round() as usize).min(pool);
            let mut idx = sample(rng, pool, count).into_vec();
            idx.sort_unstable();
            idx
        };
        let targets = match kind {
            RequestKind::Node => {
                Targets::Nodes(pick(split.train_ids.len(), &mut rng).into_iter().map(|i| split.train_ids[i]).collect())
            }
            RequestKind::Edge => {
                Targets::Edges(pick(g.edge_count(), &mut rng).into_iter().map(|i| g.edges()[i]).collect())
            }
            RequestKind::Feature => {
                let all: Vec<usize> = (0..g.feature_dim()).collect();
                Targets::Features(
                    pick(split.train_ids.len(), &mut rng)
                        .into_iter()
                        .map(|i| (split.train_ids[i], all.clone()))
                        .collect(),
                )
            }
        };
        make_request(kind, targets)
    }
}

/// Graph left after applying a request. `id_map[old]` is the new id of each
/// surviving node; present only for node requests.
#[derive(Debug, Clone)]
pub struct Residual {
    pub graph: Graph,
    pub id_map: Option<Vec<Option<usize>>>,
}

impl Residual {
    pub fn map_id(&self, old: usize) -> Option<usize> {
        match &self.id_map {
            Some(map) => map[old],
            None => Some(old),
        }
    }
}

/// Removes what the request names from `g`.
///
/// Node ids must exist. Edge requests remove the listed edges with
/// set-difference semantics, so re-applying the same edge request is a no-op;
/// endpoints must still be valid node ids.
pub fn apply_request(g: &Graph, r: &UnlearnRequest) -> Result<Residual> {
    let n = g.node_count();
    match r.kind {
        RequestKind::Node => {
            if let Some(&v) = r.delta_v.iter().find(|&&v| v >= n) {
                return Err(Error::MissingTarget(format!("node {v}")));
            }
            let mut id_map = vec![None; n];
            let mut keep = Vec::with_capacity(n - r.delta_v.len());
            for v in 0..n {
                if r.delta_v.binary_search(&v).is_err() {
                    id_map[v] = Some(keep.len());
                    keep.push(v);
                }
            }
            Ok(Residual {
                graph: g.induced(&keep),
                id_map: Some(id_map),
            })
        }
        RequestKind::Edge => {
            if let Some(&(u, v)) = r.delta_e.iter().find(|&&(_, v)| v >= n) {
                return Err(Error::MissingTarget(format!("edge ({u}, {v})")));
            }
            Ok(Residual {
                graph: g.without_edges(&r.delta_e),
                id_map: None,
            })
        }
        RequestKind::Feature => {
            let mut out = g.clone();
            let f = g.feature_dim();
            {
                let x = out.features_mut();
                for (v, dims) in &r.delta_x {
                    if *v >= n {
                        return Err(Error::MissingTarget(format!("node {v}")));
                    }
                    for &d in dims {
                        if d >= f {
                            return Err(Error::MissingTarget(format!("feature dim {d} of node {v}")));
                        }
                        x[[*v, d]] = 0.0;
                    }
                }
            }
            Ok(Residual {
                graph: out,
                id_map: None,
            })
        }
    }
}
