use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MemoryProbe;
use crate::adversary::AttackReport;

/// Outcome of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub backbone: String,
    pub task: String,
    pub request: String,
    /// Sweep name, when the run belongs to one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<String>,
    /// Request ratio or perturbation level.
    pub level: f64,
    /// Name of the headline metric in `metrics`.
    pub primary: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attack: Vec<AttackReport>,
    pub unlearn_seconds: f64,
    pub total_seconds: f64,
    pub peak_bytes: u64,
    pub memory_probe: MemoryProbe,
    pub seed: u64,
    pub config_digest: String,
}

impl MetricsReport {
    pub fn primary_value(&self) -> f64 {
        self.metrics.get(&self.primary).copied().unwrap_or(f64::NAN)
    }

    /// JSON of the report without timing and memory fields, which are the
    /// only parts allowed to differ between identical runs.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(map) = v.as_object_mut() {
            for key in ["unlearn_seconds", "total_seconds", "peak_bytes", "memory_probe"] {
                map.remove(key);
            }
        }
        v.to_string()
    }

    /// Metric values, times and counts stay in their valid ranges.
    pub fn is_well_formed(&self) -> bool {
        self.metrics.values().all(|m| (0.0..=1.0).contains(m))
            && self.unlearn_seconds >= 0.0
            && self.total_seconds >= 0.0
            && !self.config_digest.is_empty()
    }
}
