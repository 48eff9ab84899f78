//! Classification metrics, profiling and run reports.

mod profile;
mod report;

pub use profile::{profile, CountingAlloc, MemoryProbe, Profiled};
pub use report::MetricsReport;
pub use crate::harness::{sweep_intensity, sweep_perturbation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Micro,
    Macro,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(Error::EmptySet("predictions"));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Precision for one class. The flag is `true` when nothing was predicted as
/// `class`, in which case the value is 0.
pub fn precision(preds: &[usize], labels: &[usize], class: usize) -> Result<(f64, bool)> {
    check_lengths(preds.len(), labels.len())?;
    let predicted = preds.iter().filter(|&&p| p == class).count();
    if predicted == 0 {
        return Ok((0.0, true));
    }
    let tp = preds
        .iter()
        .zip(labels)
        .filter(|&(&p, &l)| p == class && l == class)
        .count();
    Ok((tp as f64 / predicted as f64, false))
}

/// F1 score. Micro uses global TP/FP/FN; macro averages per-class F1 over
/// every class seen in either vector, with empty classes contributing 0.
pub fn f1(preds: &[usize], labels: &[usize], mode: Averaging) -> Result<f64> {
    check_lengths(preds.len(), labels.len())?;
    let classes = preds.iter().chain(labels).max().map_or(0, |&c| c + 1);
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let f1_of = |tp: usize, fp: usize, fn_: usize| -> f64 {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    Ok(match mode {
        Averaging::Micro => f1_of(tp.iter().sum(), fp.iter().sum(), fn_.iter().sum()),
        Averaging::Macro => {
            let present: Vec<usize> = (0..classes)
                .filter(|&c| tp[c] + fp[c] + fn_[c] > 0)
                .collect();
            present.iter().map(|&c| f1_of(tp[c], fp[c], fn_[c])).sum::<f64>() / present.len() as f64
        }
    })
}

/// ROC AUC as the Mann-Whitney statistic: the fraction of (positive,
/// negative) pairs ranked correctly, ties counting one half.
///
/// Runs in `O(n log n)` through tie-averaged ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&b| b).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum over positives of (#negatives strictly below + 0.5 * #negatives tied)
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let pos_here = group.iter().filter(|&&k| labels[k]).count();
        let neg_here = group.len() - pos_here;
        wins += pos_here as f64 * (neg_below as f64 + 0.5 * neg_here as f64);
        neg_below += neg_here;
        i = j;
    }
    Ok(wins / (n_pos as f64 * n_neg as f64))
}

/// AUC of `positive` scores against `negative` scores.
pub fn auc_groups(positive: &[f64], negative: &[f64]) -> Result<f64> {
    let scores: Vec<f64> = positive.iter().chain(negative).copied().collect();
    let labels: Vec<bool> = std::iter::repeat_n(true, positive.len())
        .chain(std::iter::repeat_n(false, negative.len()))
        .collect();
    auc(&scores, &labels)
}
