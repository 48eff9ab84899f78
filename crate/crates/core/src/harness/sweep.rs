use std::path::Path;

use rayon::prelude::*;

use super::config::{ExperimentConfig, SweepKind, SweepSpec};
use super::run::{prepare, run_experiment, run_prepared};
use crate::error::{Error, Result};
use crate::graph::Perturbation;
use crate::metrics::MetricsReport;

/// One run per request ratio, all sharing the same data, seed and base
/// model. Ratio 0 reports the base model without unlearning.
pub fn sweep_intensity(cfg: &ExperimentConfig, ratios: &[f64], data_dir: Option<&Path>) -> Result<Vec<MetricsReport>> {
    if let Some(&bad) = ratios.iter().find(|r| !(0.0..=0.5).contains(*r)) {
        return Err(Error::InvalidRatio(bad));
    }
    if let Some(w) = ratios.windows(2).find(|w| w[1] < w[0]) {
        return Err(Error::InvalidRatio(w[1]));
    }
    let prepared = prepare(cfg, data_dir)?;
    ratios
        .par_iter()
        .map(|&r| run_prepared(&prepared, r, Some("ratio")))
        .collect()
}

/// One full run (training included) per perturbation level.
pub fn sweep_perturbation(
    cfg: &ExperimentConfig,
    kind: Perturbation,
    levels: &[f64],
    data_dir: Option<&Path>,
) -> Result<Vec<MetricsReport>> {
    let name = perturbation_name(kind);
    levels
        .par_iter()
        .map(|&level| {
            let mut c = cfg.clone();
            c.perturbation = Some(kind.with_level(level));
            let mut report = run_experiment(&c, data_dir)?;
            report.sweep = Some(name.to_string());
            report.level = level;
            Ok(report)
        })
        .collect()
}

/// Runs one sweep description: request ratios, or levels of its perturbation
/// family (label noise when none is given).
pub fn run_sweep(cfg: &ExperimentConfig, sweep: &SweepSpec, data_dir: Option<&Path>) -> Result<Vec<MetricsReport>> {
    match sweep.kind {
        SweepKind::Ratio => sweep_intensity(cfg, &sweep.levels, data_dir),
        SweepKind::Noise => {
            let kind = sweep.perturbation.unwrap_or(Perturbation::LabelNoise(0.0));
            sweep_perturbation(cfg, kind, &sweep.levels, data_dir)
        }
    }
}

pub fn perturbation_name(p: Perturbation) -> &'static str {
    match p {
        Perturbation::LabelNoise(_) => "label_noise",
        Perturbation::FeatureNoise(_) => "feature_noise",
        Perturbation::LabelSparsity(_) => "label_sparsity",
        Perturbation::FeatureSparsity(_) => "feature_sparsity",
    }
}
