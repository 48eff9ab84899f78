use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Edge, Graph};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Test nodes stay in the graph (unsupervised) during training.
    #[default]
    Transductive,
    /// Test nodes and their incident edges are withheld during training.
    Inductive,
}

/// Train/test partition of node (or graph) ids. Both lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub mode: SplitMode,
}

/// The graph a model is fit on, plus the local rows that carry supervision.
#[derive(Debug, Clone)]
pub struct TrainingView {
    pub graph: Graph,
    /// Local ids of labeled training nodes.
    pub rows: Vec<usize>,
    /// Global id of each local node.
    pub global: Vec<usize>,
}

pub fn split_dataset(g: &Graph, train_ratio: f64, mode: SplitMode, seed: u64) -> Result<DataSplit> {
    split_ids(g.node_count(), train_ratio, mode, seed)
}

/// Seeded shuffle split of `0..n` with `round(train_ratio * n)` training ids.
pub fn split_ids(n: usize, train_ratio: f64, mode: SplitMode, seed: u64) -> Result<DataSplit> {
    if !(0.0..=1.0).contains(&train_ratio) {
        return Err(Error::InvalidRatio(train_ratio));
    }
    let n_train = (train_ratio * n as f64).round() as usize;
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut seed::rng(seed));
    let mut train_ids = ids[..n_train].to_vec();
    let mut test_ids = ids[n_train..].to_vec();
    train_ids.sort_unstable();
    test_ids.sort_unstable();
    Ok(DataSplit {
        train_ids,
        test_ids,
        mode,
    })
}

impl DataSplit {
    /// Split with every id in training, used when supervision lives elsewhere
    /// (e.g. edges for link prediction).
    pub fn all_train(n: usize) -> Self {
        Self {
            train_ids: (0..n).collect(),
            test_ids: Vec::new(),
            mode: SplitMode::Transductive,
        }
    }

    /// Drops the given ids from both sides.
    pub fn without(&self, removed: &[usize]) -> DataSplit {
        let mut removed = removed.to_vec();
        removed.sort_unstable();
        let keep = |ids: &Vec<usize>| -> Vec<usize> {
            ids.iter()
                .copied()
                .filter(|v| removed.binary_search(v).is_err())
                .collect()
        };
        DataSplit {
            train_ids: keep(&self.train_ids),
            test_ids: keep(&self.test_ids),
            mode: self.mode,
        }
    }

    /// Re-expresses the split through a node id map (old id -> new id).
    pub fn remap(&self, id_map: &[Option<usize>]) -> DataSplit {
        let map = |ids: &Vec<usize>| -> Vec<usize> {
            let mut out: Vec<usize> = ids.iter().filter_map(|&v| id_map[v]).collect();
            out.sort_unstable();
            out
        };
        DataSplit {
            train_ids: map(&self.train_ids),
            test_ids: map(&self.test_ids),
            mode: self.mode,
        }
    }

    pub fn is_train(&self, v: usize) -> bool {
        self.train_ids.binary_search(&v).is_ok()
    }

    pub fn training_view(&self, g: &Graph) -> TrainingView {
        match self.mode {
            SplitMode::Transductive => TrainingView {
                graph: g.clone(),
                rows: self
                    .train_ids
                    .iter()
                    .copied()
                    .filter(|&v| g.is_labeled(v))
                    .collect(),
                global: (0..g.node_count()).collect(),
            },
            SplitMode::Inductive => {
                let sub = g.induced(&self.train_ids);
                let rows = (0..sub.node_count()).filter(|&v| sub.is_labeled(v)).collect();
                TrainingView {
                    graph: sub,
                    rows,
                    global: self.train_ids.clone(),
                }
            }
        }
    }
}

/// Held-out edges for link prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSplit {
    pub train: Vec<Edge>,
    pub test: Vec<Edge>,
}

/// Seeded split of the edge list; `round(train_ratio * m)` edges train.
pub fn split_edges(g: &Graph, train_ratio: f64, seed: u64) -> Result<EdgeSplit> {
    if !(0.0..=1.0).contains(&train_ratio) {
        return Err(Error::InvalidRatio(train_ratio));
    }
    let mut edges = g.edges().to_vec();
    let n_train = (train_ratio * edges.len() as f64).round() as usize;
    edges.shuffle(&mut seed::rng(seed));
    let mut train = edges[..n_train].to_vec();
    let mut test = edges[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(EdgeSplit { train, test })
}
