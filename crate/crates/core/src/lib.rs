//! Graph unlearning engine and benchmark harness.
//!
//! The crate is organized bottom-up:
//!
//! - [`graph`]: graphs, splits, deletion requests, synthetic data, perturbations
//! - [`gnn`]: GCN / SGC / GraphSAGE-mean backbones with exact gradients and
//!   Hessian-vector products
//! - [`unlearn`]: retraining oracle and one method per unlearning family
//! - [`adversary`]: membership-inference and edge-poisoning audits
//! - [`metrics`]: classification metrics and run profiling
//! - [`harness`]: JSON-configured experiments, sweeps and result files

pub mod adversary;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod seed;
pub mod unlearn;

pub use error::{Error, Result};
