use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{build_graph, Graph, GraphSet};
use crate::error::{Error, Result};
use crate::seed;

/// Stochastic block model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SbmParams {
    pub n: usize,
    pub num_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub features: usize,
    pub signal: f64,
}

impl Default for SbmParams {
    fn default() -> Self {
        Self {
            n: 300,
            num_classes: 3,
            p_in: 0.10,
            p_out: 0.01,
            features: 16,
            signal: 2.0,
        }
    }
}

/// Samples a labeled SBM graph.
///
/// Node `i` belongs to class `i % num_classes`. Features are the class
/// prototype `signal * e_class` plus unit Gaussian noise.
pub fn synth_sbm(p: &SbmParams, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p.p_in) || !(0.0..=1.0).contains(&p.p_out) || p.p_out > p.p_in {
        return Err(Error::InvalidProbability(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
            p.p_in, p.p_out
        )));
    }
    if p.num_classes == 0 || p.features < p.num_classes || p.n == 0 {
        return Err(Error::ShapeMismatch(format!(
            "need n > 0 and features >= classes > 0, got n={} f={} c={}",
            p.n, p.features, p.num_classes
        )));
    }
    let mut rng = seed::stage_rng(seed, "sbm/edges");
    let labels: Vec<usize> = (0..p.n).map(|i| i % p.num_classes).collect();
    let mut edges = Vec::new();
    for u in 0..p.n {
        for v in (u + 1)..p.n {
            let prob = if labels[u] == labels[v] { p.p_in } else { p.p_out };
            if rng.random::<f64>() < prob {
                edges.push((u, v));
            }
        }
    }
    let mut rng = seed::stage_rng(seed, "sbm/features");
    let mut x = Array2::<f64>::zeros((p.n, p.features));
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        for val in row.iter_mut() {
            *val = rng.sample(StandardNormal);
        }
        row[labels[i]] += p.signal;
    }
    let (g, _) = build_graph(x, Some(labels), &edges)?;
    Ok(g.with_num_classes(p.num_classes))
}

/// Collection of small random graphs labeled by class; node features carry a
/// class prototype scaled by `signal`, so a mean-pool readout can separate them.
pub fn synth_graph_set(
    count: usize,
    nodes_per_graph: usize,
    num_classes: usize,
    p_edge: f64,
    features: usize,
    signal: f64,
    seed: u64,
) -> Result<GraphSet> {
    if !(0.0..=1.0).contains(&p_edge) {
        return Err(Error::InvalidProbability(format!("p_edge={p_edge}")));
    }
    if features < num_classes || num_classes == 0 {
        return Err(Error::ShapeMismatch("need features >= classes > 0".into()));
    }
    let mut rng = seed::stage_rng(seed, "graphset");
    let mut graphs = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for gi in 0..count {
        let y = gi % num_classes;
        let mut edges = Vec::new();
        for u in 0..nodes_per_graph {
            for v in (u + 1)..nodes_per_graph {
                if rng.random::<f64>() < p_edge {
                    edges.push((u, v));
                }
            }
        }
        let mut x = Array2::<f64>::zeros((nodes_per_graph, features));
        for mut row in x.rows_mut() {
            for val in row.iter_mut() {
                *val = rng.sample(StandardNormal);
            }
            row[y] += signal;
        }
        let (mut g, _) = build_graph(x, None, &edges)?;
        g.graph_id = Some(format!("g{gi}"));
        graphs.push(g);
        labels.push(y);
    }
    GraphSet::new(graphs, labels)
}
