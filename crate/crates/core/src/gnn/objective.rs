//! Training losses with exact gradients and Hessian-vector products.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{forward_on_tape, Backbone, ModelParams, PreparedGraph};
use super::scalar::{Dual, Scalar};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{canonical, Edge, Graph, GraphSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Node,
    Link,
    Graph,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Node => "node",
            Task::Link => "link",
            Task::Graph => "graph",
        }
    }
}

#[derive(Debug, Clone)]
enum Terms {
    /// Softmax cross-entropy on `rows` of the single input.
    Node { rows: Vec<usize>, labels: Vec<usize> },
    /// Logistic loss on embedding dot products of the single input.
    Link { pairs: Vec<Edge>, targets: Vec<f64> },
    /// Softmax cross-entropy on mean-pooled logits, one term per input graph.
    Graph { rows: Vec<usize>, labels: Vec<usize> },
}

/// `scale * sum(terms) + weight_decay / 2 * ||theta||^2` for a fixed backbone.
#[derive(Debug, Clone)]
pub struct Objective {
    backbone: Backbone,
    inputs: Vec<PreparedGraph>,
    terms: Terms,
    scale: f64,
    weight_decay: f64,
}

/// Deterministic negative for each positive pair.
///
/// The negative of `(u, v)` is drawn from a stream keyed by the pair itself,
/// so removing some positives leaves the negatives of the rest unchanged.
pub fn sample_negatives(g: &Graph, positives: &[Edge], seed: u64) -> Vec<Edge> {
    let n = g.node_count();
    positives
        .iter()
        .map(|&(u, v)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((u as u64) << 32) | v as u64);
            for _ in 0..64 {
                let w = rng.random_range(0..n);
                if w != u && w != v && !g.has_edge(u, w) {
                    return canonical(u, w);
                }
            }
            // dense neighborhood: first free slot after a random start
            let start = rng.random_range(0..n);
            (0..n)
                .map(|i| (start + i) % n)
                .find(|&w| w != u && w != v && !g.has_edge(u, w))
                .map(|w| canonical(u, w))
                .unwrap_or((u, v))
        })
        .collect()
}

impl Objective {
    /// Node classification on `rows` of `g`, averaged over the rows.
    pub fn node(g: &Graph, backbone: Backbone, rows: &[usize], weight_decay: f64) -> Result<Self> {
        let scale = 1.0 / rows.len().max(1) as f64;
        Self::node_scaled(g, backbone, rows, scale, weight_decay)
    }

    /// Node classification with an explicit term scale.
    pub fn node_scaled(
        g: &Graph,
        backbone: Backbone,
        rows: &[usize],
        scale: f64,
        weight_decay: f64,
    ) -> Result<Self> {
        let labels = g.labels_or_err()?;
        let labels = rows.iter().map(|&r| labels[r]).collect();
        Ok(Self {
            backbone,
            inputs: vec![PreparedGraph::new(g, backbone)],
            terms: Terms::Node {
                rows: rows.to_vec(),
                labels,
            },
            scale,
            weight_decay,
        })
    }

    /// Link prediction: `positives` as label 1 plus one sampled non-edge each
    /// as label 0, averaged over all pairs.
    pub fn link(g: &Graph, backbone: Backbone, positives: &[Edge], seed: u64, weight_decay: f64) -> Result<Self> {
        if positives.is_empty() {
            return Err(Error::NoEdges);
        }
        let negatives = sample_negatives(g, positives, seed);
        let scale = 1.0 / (2 * positives.len()) as f64;
        Ok(Self::link_pairs(g, backbone, positives, &negatives, scale, weight_decay))
    }

    pub fn link_pairs(
        g: &Graph,
        backbone: Backbone,
        positives: &[Edge],
        negatives: &[Edge],
        scale: f64,
        weight_decay: f64,
    ) -> Self {
        let pairs: Vec<Edge> = positives.iter().chain(negatives).copied().collect();
        let targets = std::iter::repeat_n(1.0, positives.len())
            .chain(std::iter::repeat_n(0.0, negatives.len()))
            .collect();
        Self {
            backbone,
            inputs: vec![PreparedGraph::new(g, backbone)],
            terms: Terms::Link { pairs, targets },
            scale,
            weight_decay,
        }
    }

    /// Graph classification over `ids` of `set`, averaged over the graphs.
    pub fn graphs(set: &GraphSet, ids: &[usize], backbone: Backbone, weight_decay: f64) -> Self {
        Self::graphs_scaled(set, ids, backbone, 1.0 / ids.len().max(1) as f64, weight_decay)
    }

    pub fn graphs_scaled(set: &GraphSet, ids: &[usize], backbone: Backbone, scale: f64, weight_decay: f64) -> Self {
        Self {
            backbone,
            inputs: ids
                .iter()
                .map(|&i| PreparedGraph::new(&set.graphs()[i], backbone))
                .collect(),
            terms: Terms::Graph {
                rows: (0..ids.len()).collect(),
                labels: ids.iter().map(|&i| set.labels()[i]).collect(),
            },
            scale,
            weight_decay,
        }
    }

    pub fn backbone(&self) -> Backbone {
        self.backbone
    }

    pub fn term_count(&self) -> usize {
        match &self.terms {
            Terms::Node { rows, .. } => rows.len(),
            Terms::Link { pairs, .. } => pairs.len(),
            Terms::Graph { labels, .. } => labels.len(),
        }
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    /// Copy with a different term scale and weight decay.
    pub fn rescaled(&self, scale: f64, weight_decay: f64) -> Self {
        Self {
            scale,
            weight_decay,
            ..self.clone()
        }
    }

    fn check(&self, params: &ModelParams) -> Result<()> {
        if params.backbone != self.backbone {
            return Err(Error::ShapeMismatch(format!(
                "model backbone {:?} differs from objective backbone {:?}",
                params.backbone, self.backbone
            )));
        }
        let width = self.inputs.first().map_or(params.input_dim(), |i| i.input().ncols());
        if width != params.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "feature width {width} does not match first layer input {}",
                params.input_dim()
            )));
        }
        Ok(())
    }

    fn evaluate<T: Scalar>(&self, weights: Vec<Array2<T>>) -> (T, Vec<Array2<T>>) {
        let shapes: Vec<_> = weights.iter().map(|w| w.dim()).collect();
        let mut tape = Tape::<T>::new();
        let ws: Vec<Var> = weights.into_iter().map(|w| tape.leaf(w)).collect();
        let mut parts = Vec::new();
        match &self.terms {
            Terms::Node { rows, labels } => {
                let out = forward_on_tape(&mut tape, self.backbone, &ws, &self.inputs[0], None);
                if !rows.is_empty() {
                    parts.push(tape.softmax_xent(out, rows, labels, self.scale));
                }
            }
            Terms::Link { pairs, targets } => {
                let out = forward_on_tape(&mut tape, self.backbone, &ws, &self.inputs[0], None);
                if !pairs.is_empty() {
                    parts.push(tape.pair_bce(out, pairs, targets, self.scale));
                }
            }
            Terms::Graph { rows, labels } => {
                if !labels.is_empty() {
                    let pooled: Vec<Var> = self
                        .inputs
                        .iter()
                        .map(|input| {
                            let out = forward_on_tape(&mut tape, self.backbone, &ws, input, None);
                            tape.mean_rows(out)
                        })
                        .collect();
                    let stacked = tape.stack_rows(&pooled);
                    parts.push(tape.softmax_xent(stacked, rows, labels, self.scale));
                }
            }
        }
        if self.weight_decay != 0.0 {
            for &w in &ws {
                parts.push(tape.sum_sq(w, 0.5 * self.weight_decay));
            }
        }
        if parts.is_empty() {
            return (T::zero(), shapes.into_iter().map(Array2::zeros).collect());
        }
        let loss = tape.sum(&parts);
        let value = tape.value(loss)[[0, 0]];
        let mut grads = tape.backward(loss);
        let gs = ws.iter().zip(shapes).map(|(&w, s)| grads.take(w, s)).collect();
        (value, gs)
    }

    pub fn loss(&self, params: &ModelParams) -> Result<f64> {
        Ok(self.loss_and_grad(params)?.0)
    }

    pub fn loss_and_grad(&self, params: &ModelParams) -> Result<(f64, Vec<Array2<f64>>)> {
        self.check(params)?;
        Ok(self.evaluate(params.weights.clone()))
    }

    /// Flat gradient in the layout of [`ModelParams::to_flat`].
    pub fn grad(&self, params: &ModelParams) -> Result<Vec<f64>> {
        let (_, g) = self.loss_and_grad(params)?;
        Ok(g.iter().flat_map(|m| m.iter().copied()).collect())
    }

    /// Exact Hessian-vector product by forward-over-reverse differentiation.
    pub fn hvp(&self, params: &ModelParams, v: &[f64]) -> Result<Vec<f64>> {
        self.check(params)?;
        if v.len() != params.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "direction has {} entries, model has {}",
                v.len(),
                params.num_params()
            )));
        }
        let mut offset = 0;
        let weights = params
            .weights
            .iter()
            .map(|w| {
                let mut d = Array2::<Dual>::zeros(w.raw_dim());
                for (slot, &x) in d.iter_mut().zip(w.iter()) {
                    *slot = Dual::new(x, v[offset]);
                    offset += 1;
                }
                d
            })
            .collect();
        let (_, g) = self.evaluate::<Dual>(weights);
        Ok(g.iter().flat_map(|m| m.iter().map(|d| d.eps)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::model::BackboneKind;
    use crate::graph::{synth_graph_set, synth_sbm, SbmParams};

    fn instance() -> Graph {
        synth_sbm(
            &SbmParams {
                n: 20,
                num_classes: 3,
                p_in: 0.4,
                p_out: 0.1,
                features: 5,
                signal: 1.0,
            },
            3,
        )
        .unwrap()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn hvp_of_zero_is_zero() {
        let g = instance();
        let b = Backbone::new(BackboneKind::Gcn, 2);
        let obj = Objective::node(&g, b, &[0, 1, 2, 3], 0.01).unwrap();
        let p = ModelParams::init(b, 5, 4, 3, 1);
        let hv = obj.hvp(&p, &vec![0.0; p.num_params()]).unwrap();
        assert!(hv.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hvp_is_linear_and_symmetric() {
        let g = instance();
        for kind in [BackboneKind::Gcn, BackboneKind::Sgc, BackboneKind::Sage] {
            let b = Backbone::new(kind, 2);
            let obj = Objective::node(&g, b, &(0..14).collect::<Vec<_>>(), 0.01).unwrap();
            let p = ModelParams::init(b, 5, 4, 3, 2);
            let n = p.num_params();
            let u: Vec<f64> = (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
            let v: Vec<f64> = (0..n).map(|i| ((i * 3 % 13) as f64 - 6.0) / 6.0).collect();
            let hu = obj.hvp(&p, &u).unwrap();
            let hv = obj.hvp(&p, &v).unwrap();
            assert!((dot(&u, &hv) - dot(&v, &hu)).abs() < 1e-7);
            let scaled: Vec<f64> = v.iter().map(|x| 2.5 * x).collect();
            let hs = obj.hvp(&p, &scaled).unwrap();
            assert!(hs.iter().zip(&hv).all(|(a, b)| (a - 2.5 * b).abs() < 1e-8));
        }
    }

    #[test]
    fn negatives_are_non_edges_and_stable() {
        let g = instance();
        let pos = g.edges().to_vec();
        let neg = sample_negatives(&g, &pos, 4);
        assert_eq!(neg.len(), pos.len());
        assert!(neg.iter().all(|&(u, v)| u != v && !g.has_edge(u, v)));
        let fewer = sample_negatives(&g, &pos[1..], 4);
        assert_eq!(&neg[1..], &fewer[..]);
    }

    #[test]
    fn link_requires_edges() {
        let g = instance();
        let b = Backbone::new(BackboneKind::Sgc, 1);
        assert!(matches!(Objective::link(&g, b, &[], 0, 0.0), Err(Error::NoEdges)));
    }

    #[test]
    fn graph_objective_gradient_matches_fd() {
        let set = synth_graph_set(6, 5, 2, 0.5, 3, 1.0, 2).unwrap();
        let b = Backbone::new(BackboneKind::Gcn, 2);
        let obj = Objective::graphs(&set, &[0, 1, 2, 3, 4], b, 0.01);
        let p = ModelParams::init(b, 3, 4, 2, 8);
        let grad = obj.grad(&p).unwrap();
        let flat = p.to_flat();
        let h = 1e-6;
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus[i] += h;
            let mut minus = flat.clone();
            minus[i] -= h;
            let fd = (obj.loss(&p.with_flat(&plus).unwrap()).unwrap()
                - obj.loss(&p.with_flat(&minus).unwrap()).unwrap())
                / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()), "coord {i}: {fd} vs {}", grad[i]);
        }
    }
}
