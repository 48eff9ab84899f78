//! Message-passing backbones, task losses and their derivatives.

mod model;
mod objective;
pub mod scalar;
mod sparse;
pub mod tape;
mod train;

pub use model::{argmax_rows, score_pairs, softmax_rows, Backbone, BackboneKind, ModelParams, PreparedGraph};
pub(crate) use model::{forward_on_tape, DeletionHook};
pub use objective::{sample_negatives, Objective, Task};
pub use sparse::{mean_aggregator, normalized_adjacency, propagate, Csr, PropagationOperator};
pub use train::{
    fit, init_for, link_positives, objective_for, output_dim, train, train_graphs, train_with_history, Hyper,
};
