//! Config-driven experiment runs, sweeps and result files.

mod config;
mod emit;
mod run;
mod sweep;

pub use config::{
    default_backbone, default_hyper, load_config, parse_config, Attack, Dataset, ExperimentConfig, GraphSetParams,
    Method, MiaMembers, RequestSpec, SplitSpec, SweepKind, SweepSpec,
};
pub use emit::{emit_report, read_reports};
pub use run::{prepare, run_experiment, run_prepared, Data, GraphData, Prepared, Trained};
pub use sweep::{perturbation_name, run_sweep, sweep_intensity, sweep_perturbation};
