//! Forgetting audits: confidence-based membership inference and
//! heterophilic edge poisoning.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{canonical, Edge, Graph};
use crate::metrics::auc_groups;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Mia,
    Poison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub kind: AttackKind,
    /// Membership AUC, or link AUC of the model before unlearning.
    pub auc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc_after: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Members, or held-out positive edges.
    pub positives: usize,
    /// Non-members, or sampled negative pairs.
    pub negatives: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisoned_edges: Option<usize>,
    pub seed: u64,
}

/// Membership inference by true-class confidence.
///
/// `probs` holds class probabilities for every node (as produced by the model
/// under audit); each node's score is the probability of its true label.
pub fn mia_auc(
    probs: &Array2<f64>,
    labels: &[usize],
    members: &[usize],
    nonmembers: &[usize],
    seed: u64,
) -> Result<AttackReport> {
    if members.is_empty() {
        return Err(Error::EmptySet("members"));
    }
    if nonmembers.is_empty() {
        return Err(Error::EmptySet("nonmembers"));
    }
    let score = |v: usize| -> Result<f64> {
        let label = *labels.get(v).ok_or(Error::OutOfRange {
            what: "labels",
            index: v,
            len: labels.len(),
        })?;
        if v >= probs.nrows() || label >= probs.ncols() {
            return Err(Error::OutOfRange {
                what: "prediction rows",
                index: v,
                len: probs.nrows(),
            });
        }
        Ok(probs[[v, label]])
    };
    let pos = members.iter().map(|&v| score(v)).collect::<Result<Vec<_>>>()?;
    let neg = nonmembers.iter().map(|&v| score(v)).collect::<Result<Vec<_>>>()?;
    Ok(AttackReport {
        kind: AttackKind::Mia,
        auc: auc_groups(&pos, &neg)?,
        auc_after: None,
        delta: None,
        positives: pos.len(),
        negatives: neg.len(),
        poisoned_edges: None,
        seed,
    })
}

/// Adds `round(ratio * m)` uniformly drawn non-edges whose endpoints carry
/// different labels. Returns the poisoned graph and the added edges (sorted).
pub fn poison(g: &Graph, ratio: f64, seed: u64) -> Result<(Graph, Vec<Edge>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidRatio(ratio));
    }
    let labels = g.labels_or_err()?;
    let n = g.node_count();
    let count = (ratio * g.edge_count() as f64).round() as usize;
    let mut per_class = vec![0usize; g.num_classes().max(1)];
    for &l in labels {
        per_class[l] += 1;
    }
    let same: usize = per_class.iter().map(|&c| c * c.saturating_sub(1) / 2).sum();
    let cross_pairs = n * n.saturating_sub(1) / 2 - same;
    let cross_edges = g.edges().iter().filter(|&&(u, v)| labels[u] != labels[v]).count();
    let available = cross_pairs - cross_edges;
    if available < count {
        return Err(Error::InsufficientCandidates {
            needed: count,
            available,
        });
    }
    let mut rng = seed::rng(seed);
    let mut added = BTreeSet::new();
    if available < 4 * count {
        let mut pool = Vec::with_capacity(available);
        for u in 0..n {
            for v in u + 1..n {
                if labels[u] != labels[v] && !g.has_edge(u, v) {
                    pool.push((u, v));
                }
            }
        }
        for i in rand::seq::index::sample(&mut rng, pool.len(), count) {
            added.insert(pool[i]);
        }
    } else {
        while added.len() < count {
            let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
            if labels[u] != labels[v] && !g.has_edge(u, v) {
                added.insert(canonical(u, v));
            }
        }
    }
    let added: Vec<Edge> = added.into_iter().collect();
    Ok((g.with_extra_edges(&added)?, added))
}

/// `count` seeded uniform node pairs that are edges neither of `g` nor of
/// `exclude`.
pub fn sample_non_edges(g: &Graph, count: usize, exclude: &[Edge], seed: u64) -> Result<Vec<Edge>> {
    let n = g.node_count();
    let blocked: BTreeSet<Edge> = exclude.iter().map(|&(u, v)| canonical(u, v)).collect();
    let free = (n * n.saturating_sub(1) / 2).saturating_sub(g.edge_count() + blocked.len());
    if free < count {
        return Err(Error::InsufficientCandidates {
            needed: count,
            available: free,
        });
    }
    let mut rng = seed::rng(seed);
    let mut out = BTreeSet::new();
    while out.len() < count {
        let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
        let e = canonical(u, v);
        if u != v && !g.has_edge(u, v) && !blocked.contains(&e) {
            out.insert(e);
        }
    }
    Ok(out.into_iter().collect())
}

/// Link-prediction AUC on held-out positives vs negatives, before and after
/// unlearning the poison. Scorers map node pairs to link probabilities.
pub fn poison_recovery(
    before: impl Fn(&[Edge]) -> Result<Vec<f64>>,
    after: impl Fn(&[Edge]) -> Result<Vec<f64>>,
    eval_pos: &[Edge],
    eval_neg: &[Edge],
    poisoned_edges: usize,
    seed: u64,
) -> Result<AttackReport> {
    if eval_pos.is_empty() || eval_neg.is_empty() {
        return Err(Error::EmptySet("evaluation pairs"));
    }
    let auc_of = |scorer: &dyn Fn(&[Edge]) -> Result<Vec<f64>>| -> Result<f64> {
        auc_groups(&scorer(eval_pos)?, &scorer(eval_neg)?)
    };
    let a = auc_of(&before)?;
    let b = auc_of(&after)?;
    Ok(AttackReport {
        kind: AttackKind::Poison,
        auc: a,
        auc_after: Some(b),
        delta: Some(b - a),
        positives: eval_pos.len(),
        negatives: eval_neg.len(),
        poisoned_edges: Some(poisoned_edges),
        seed,
    })
}
