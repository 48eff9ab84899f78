use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataSplit, Graph};
use crate::error::{Error, Result};
use crate::seed;

/// Noise or sparsity applied before training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "level", rename_all = "snake_case")]
pub enum Perturbation {
    /// Fraction of training labels reassigned to a different class.
    LabelNoise(f64),
    /// Gaussian noise with std `sigma_rel * std(dimension)`.
    FeatureNoise(f64),
    /// Fraction of training labels kept.
    LabelSparsity(f64),
    /// Fraction of feature entries zeroed.
    FeatureSparsity(f64),
}

impl Perturbation {
    pub fn level(&self) -> f64 {
        match *self {
            Perturbation::LabelNoise(x)
            | Perturbation::FeatureNoise(x)
            | Perturbation::LabelSparsity(x)
            | Perturbation::FeatureSparsity(x) => x,
        }
    }

    pub fn with_level(&self, level: f64) -> Perturbation {
        match self {
            Perturbation::LabelNoise(_) => Perturbation::LabelNoise(level),
            Perturbation::FeatureNoise(_) => Perturbation::FeatureNoise(level),
            Perturbation::LabelSparsity(_) => Perturbation::LabelSparsity(level),
            Perturbation::FeatureSparsity(_) => Perturbation::FeatureSparsity(level),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Perturbed {
    pub graph: Graph,
    /// Per-node flag of retained labels (label sparsity only).
    pub label_mask: Option<Vec<bool>>,
}

fn count_of(ratio: f64, pool: usize) -> usize {
    ((ratio * pool as f64).round() as usize).min(pool)
}

pub fn perturb(g: &Graph, split: &DataSplit, spec: Perturbation, seed: u64) -> Result<Perturbed> {
    let mut rng = seed::stage_rng(seed, "perturb");
    let mut out = g.clone();
    match spec {
        Perturbation::LabelNoise(ratio) => {
            check_ratio(ratio)?;
            let c = g.num_classes();
            let labels = out.labels_mut().ok_or(Error::MissingLabels)?;
            if c < 2 {
                return Ok(Perturbed { graph: out, label_mask: None });
            }
            let n_flip = count_of(ratio, split.train_ids.len());
            for i in sample(&mut rng, split.train_ids.len(), n_flip) {
                let v = split.train_ids[i];
                // uniform over the c - 1 wrong classes
                let draw = rng.random_range(0..c - 1);
                labels[v] = if draw >= labels[v] { draw + 1 } else { draw };
            }
            Ok(Perturbed { graph: out, label_mask: None })
        }
        Perturbation::FeatureNoise(sigma_rel) => {
            if !(sigma_rel >= 0.0 && sigma_rel.is_finite()) {
                return Err(Error::InvalidRatio(sigma_rel));
            }
            if sigma_rel == 0.0 {
                return Ok(Perturbed { graph: out, label_mask: None });
            }
            let std = g.features().std_axis(ndarray::Axis(0), 0.0);
            for mut row in out.features_mut().rows_mut() {
                for (x, &s) in row.iter_mut().zip(std.iter()) {
                    let z: f64 = rng.sample(StandardNormal);
                    if s > 0.0 {
                        *x += sigma_rel * s * z;
                    }
                }
            }
            Ok(Perturbed { graph: out, label_mask: None })
        }
        Perturbation::LabelSparsity(keep) => {
            check_ratio(keep)?;
            g.labels_or_err()?;
            let mut mask = match g.label_mask() {
                Some(m) => m.to_vec(),
                None => vec![true; g.node_count()],
            };
            let n_keep = count_of(keep, split.train_ids.len());
            let mut kept = vec![false; split.train_ids.len()];
            for i in sample(&mut rng, split.train_ids.len(), n_keep) {
                kept[i] = true;
            }
            for (i, &v) in split.train_ids.iter().enumerate() {
                mask[v] = mask[v] && kept[i];
            }
            out.set_label_mask(Some(mask.clone()));
            Ok(Perturbed {
                graph: out,
                label_mask: Some(mask),
            })
        }
        Perturbation::FeatureSparsity(drop) => {
            check_ratio(drop)?;
            let f = g.feature_dim();
            let total = g.node_count() * f;
            let x = out.features_mut();
            for idx in sample(&mut rng, total, count_of(drop, total)) {
                x[[idx / f, idx % f]] = 0.0;
            }
            Ok(Perturbed { graph: out, label_mask: None })
        }
    }
}

fn check_ratio(r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::InvalidRatio(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{split_dataset, synth_sbm, SbmParams, SplitMode};

    fn fixture() -> (Graph, DataSplit) {
        let g = synth_sbm(&SbmParams { n: 125, ..Default::default() }, 2).unwrap();
        let split = split_dataset(&g, 0.8, SplitMode::Transductive, 2).unwrap();
        (g, split)
    }

    #[test]
    fn full_label_noise_flips_every_train_label() {
        let (g, split) = fixture();
        let p = perturb(&g, &split, Perturbation::LabelNoise(1.0), 5).unwrap();
        let (old, new) = (g.labels().unwrap(), p.graph.labels().unwrap());
        assert!(split.train_ids.iter().all(|&v| old[v] != new[v]));
        assert!(split.test_ids.iter().all(|&v| old[v] == new[v]));
    }

    #[test]
    fn zero_levels_are_identity() {
        let (g, split) = fixture();
        for spec in [
            Perturbation::LabelNoise(0.0),
            Perturbation::FeatureNoise(0.0),
            Perturbation::FeatureSparsity(0.0),
        ] {
            assert_eq!(perturb(&g, &split, spec, 1).unwrap().graph, g);
        }
        let sparse = perturb(&g, &split, Perturbation::LabelSparsity(1.0), 1).unwrap();
        assert_eq!(sparse.graph.features(), g.features());
        assert!(sparse.label_mask.unwrap().iter().all(|&b| b));
    }

    #[test]
    fn label_sparsity_keeps_exact_count() {
        let (g, split) = fixture();
        assert_eq!(split.train_ids.len(), 100);
        let p = perturb(&g, &split, Perturbation::LabelSparsity(0.5), 3).unwrap();
        let mask = p.label_mask.unwrap();
        assert_eq!(split.train_ids.iter().filter(|&&v| mask[v]).count(), 50);
    }

    #[test]
    fn feature_sparsity_zeroes_entries() {
        let (g, split) = fixture();
        let p = perturb(&g, &split, Perturbation::FeatureSparsity(0.25), 3).unwrap();
        let zeros = p.graph.features().iter().filter(|&&x| x == 0.0).count();
        assert_eq!(zeros, (0.25 * (125 * 16) as f64).round() as usize);
    }

    #[test]
    fn seeded_noise_is_deterministic() {
        let (g, split) = fixture();
        let a = perturb(&g, &split, Perturbation::FeatureNoise(0.5), 8).unwrap();
        let b = perturb(&g, &split, Perturbation::FeatureNoise(0.5), 8).unwrap();
        assert_eq!(serde_json::to_string(&a.graph).unwrap(), serde_json::to_string(&b.graph).unwrap());
        assert_ne!(a.graph.features(), g.features());
    }

    #[test]
    fn rejects_bad_ratio() {
        let (g, split) = fixture();
        assert!(matches!(
            perturb(&g, &split, Perturbation::LabelNoise(1.2), 0),
            Err(Error::InvalidRatio(_))
        ));
    }
}
