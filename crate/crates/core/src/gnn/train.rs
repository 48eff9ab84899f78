use serde::{Deserialize, Serialize};

use super::model::{Backbone, ModelParams};
use super::objective::{Objective, Task};
use crate::error::{Error, Result};
use crate::graph::{DataSplit, Edge, Graph, GraphSet};
use crate::seed::derive_seed;

/// Full-batch gradient descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub hidden: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 0.2,
            epochs: 200,
            weight_decay: 5e-4,
            hidden: 16,
        }
    }
}

/// Plain gradient descent from `init`; returns the model and the loss
/// recorded before each step (plus the final loss).
pub fn fit(objective: &Objective, init: ModelParams, hyper: &Hyper) -> Result<(ModelParams, Vec<f64>)> {
    let mut params = init;
    let mut history = Vec::with_capacity(hyper.epochs + 1);
    for _ in 0..hyper.epochs {
        let (loss, grads) = objective.loss_and_grad(&params)?;
        history.push(loss);
        for (w, g) in params.weights.iter_mut().zip(&grads) {
            w.scaled_add(-hyper.lr, g);
        }
    }
    history.push(objective.loss(&params)?);
    Ok((params, history))
}

/// Training edges of a link task: edges of the training view whose endpoints
/// are both training nodes.
pub fn link_positives(g: &Graph, split: &DataSplit) -> Vec<Edge> {
    g.edges()
        .iter()
        .copied()
        .filter(|&(u, v)| split.is_train(u) && split.is_train(v))
        .collect()
}

/// Builds the training objective for `task` on the training view of `g`.
pub fn objective_for(
    backbone: Backbone,
    g: &Graph,
    split: &DataSplit,
    task: Task,
    hyper: &Hyper,
    seed: u64,
) -> Result<Objective> {
    match task {
        Task::Node => {
            g.labels_or_err()?;
            let view = split.training_view(g);
            Objective::node(&view.graph, backbone, &view.rows, hyper.weight_decay)
        }
        Task::Link => {
            let view = split.training_view(g);
            let local_split = DataSplit::all_train(view.graph.node_count());
            let pos = link_positives(&view.graph, &local_split);
            if pos.is_empty() {
                return Err(Error::NoEdges);
            }
            Objective::link(&view.graph, backbone, &pos, derive_seed(seed, "negatives"), hyper.weight_decay)
        }
        Task::Graph => Err(Error::UnsupportedCombination(
            "graph task trains on a GraphSet; use train_graphs".into(),
        )),
    }
}

/// Output width of the final layer for a task.
pub fn output_dim(task: Task, num_classes: usize, hyper: &Hyper) -> usize {
    match task {
        Task::Link => hyper.hidden,
        Task::Node | Task::Graph => num_classes,
    }
}

pub fn init_for(backbone: Backbone, in_dim: usize, out_dim: usize, hyper: &Hyper, seed: u64) -> ModelParams {
    ModelParams::init(backbone, in_dim, hyper.hidden, out_dim, derive_seed(seed, "init"))
}

/// Trains a node- or link-level model; deterministic per seed.
pub fn train(
    backbone: Backbone,
    g: &Graph,
    split: &DataSplit,
    task: Task,
    hyper: &Hyper,
    seed: u64,
) -> Result<ModelParams> {
    Ok(train_with_history(backbone, g, split, task, hyper, seed)?.0)
}

pub fn train_with_history(
    backbone: Backbone,
    g: &Graph,
    split: &DataSplit,
    task: Task,
    hyper: &Hyper,
    seed: u64,
) -> Result<(ModelParams, Vec<f64>)> {
    let objective = objective_for(backbone, g, split, task, hyper, seed)?;
    let init = init_for(backbone, g.feature_dim(), output_dim(task, g.num_classes(), hyper), hyper, seed);
    fit(&objective, init, hyper)
}

/// Trains a graph classifier on the training graphs of `split`.
pub fn train_graphs(
    backbone: Backbone,
    set: &GraphSet,
    split: &DataSplit,
    hyper: &Hyper,
    seed: u64,
) -> Result<ModelParams> {
    let objective = Objective::graphs(set, &split.train_ids, backbone, hyper.weight_decay);
    let init = init_for(backbone, set.feature_dim(), set.num_classes(), hyper, seed);
    Ok(fit(&objective, init, hyper)?.0)
}
