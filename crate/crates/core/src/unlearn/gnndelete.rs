use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{pruned_view, seed_nodes};
use crate::error::{Error, Result};
use crate::gnn::tape::{Tape, Var};
use crate::gnn::{argmax_rows, forward_on_tape, score_pairs, softmax_rows, BackboneKind, DeletionHook, ModelParams, PreparedGraph};
use crate::graph::{DataSplit, Edge, Graph, RequestKind, UnlearnRequest};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeleteOptions {
    pub epochs: usize,
    /// Weight of deleted-edge consistency against neighborhood influence.
    pub alpha: f64,
    pub lr: f64,
}

impl Default for DeleteOptions {
    fn default() -> Self {
        Self {
            epochs: 100,
            alpha: 0.5,
            lr: 0.05,
        }
    }
}

/// A frozen base model plus one square linear map per layer, applied to the
/// rows of nodes near the request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionModel {
    pub base: ModelParams,
    pub operators: Vec<Array2<f64>>,
    /// `masks[k][v]`: the operator of layer `k` acts on node `v`.
    pub masks: Vec<Vec<bool>>,
    /// Nodes within `L` hops of the request, ascending.
    pub affected: Vec<usize>,
}

impl DeletionModel {
    /// Final-layer outputs on `g` with the deletion operators in place.
    pub fn embeddings(&self, g: &Graph) -> Result<Array2<f64>> {
        if g.node_count() != self.masks[0].len() {
            return Err(Error::LengthMismatch(g.node_count(), self.masks[0].len()));
        }
        let input = PreparedGraph::new(g, self.base.backbone);
        let mut tape = Tape::<f64>::new();
        let (_, out) = record(&mut tape, &self.base, &self.operators, &self.masks, &input);
        Ok(tape.value(out).clone())
    }

    pub fn predict_proba(&self, g: &Graph) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.embeddings(g)?))
    }

    pub fn predict(&self, g: &Graph) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.embeddings(g)?))
    }

    pub fn score_edges(&self, g: &Graph, pairs: &[Edge]) -> Result<Vec<f64>> {
        score_pairs(&self.embeddings(g)?, pairs)
    }
}

/// Records the hooked forward pass; returns the operator leaves and output.
fn record<'a>(
    tape: &mut Tape<'a, f64>,
    base: &ModelParams,
    operators: &[Array2<f64>],
    masks: &'a [Vec<bool>],
    input: &'a PreparedGraph,
) -> (Vec<Var>, Var) {
    let ws: Vec<Var> = base.weights.iter().map(|w| tape.leaf(w.clone())).collect();
    let ops: Vec<Var> = operators.iter().map(|d| tape.leaf(d.clone())).collect();
    let hook = DeletionHook {
        operators: ops.clone(),
        masks,
    };
    let out = forward_on_tape(tape, base.backbone, &ws, input, Some(&hook));
    (ops, out)
}

/// Learns per-layer deletion operators on top of a frozen model.
///
/// Deleted edges are dropped from propagation. The operators are trained by
/// gradient descent on `alpha * DEC + (1 - alpha) * NI`, where DEC pulls the
/// link scores of deleted pairs toward the base scores of seeded random node
/// pairs and NI keeps retained affected nodes close to their base outputs.
pub fn gnndelete_unlearn(
    params: &ModelParams,
    g: &Graph,
    split: &DataSplit,
    request: &UnlearnRequest,
    opts: &DeleteOptions,
    seed: u64,
) -> Result<DeletionModel> {
    if request.size() == 0 {
        return Err(Error::EmptyRequest);
    }
    match request.kind() {
        RequestKind::Node => request.validate(g, Some(split))?,
        RequestKind::Edge => request.validate(g, None)?,
        RequestKind::Feature => {
            return Err(Error::KindMismatch {
                expected: "node or edge",
                got: RequestKind::Feature.name(),
            })
        }
    }
    let n = g.node_count();
    let layers = params.weights.len();
    let dist = g.hop_distances(&seed_nodes(g, request));
    let hops = params.backbone.hops;
    let masks: Vec<Vec<bool>> = (0..layers)
        .map(|k| {
            let radius = if params.backbone.kind == BackboneKind::Sgc { hops } else { k + 1 };
            dist.iter().map(|&d| d <= radius).collect()
        })
        .collect();
    let affected: Vec<usize> = (0..n).filter(|&v| masks[layers - 1][v]).collect();
    let operators: Vec<Array2<f64>> = params
        .weights
        .iter()
        .map(|w| Array2::eye(w.ncols()))
        .collect();

    let deleted_pairs = request.removed_edges(g);
    let base_out = params.forward_graph(g)?;
    let mut rng = seed::stage_rng(seed, "gnndelete/pairs");
    let random_pairs: Vec<Edge> = deleted_pairs
        .iter()
        .map(|_| loop {
            let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
            if u != v {
                break (u, v);
            }
        })
        .collect();
    let dec_targets = score_pairs(&base_out, &random_pairs)?;
    let mut gone = vec![false; n];
    if request.kind() == RequestKind::Node {
        for &v in request.nodes() {
            gone[v] = true;
        }
    }
    let ni_rows: Vec<usize> = affected.iter().copied().filter(|&v| !gone[v]).collect();
    let ni_target = base_out.select(ndarray::Axis(0), &ni_rows);

    let pruned = pruned_view(g, request)?;
    let input = PreparedGraph::new(&pruned, params.backbone);
    let dec_scale = if deleted_pairs.is_empty() {
        0.0
    } else {
        opts.alpha / deleted_pairs.len() as f64
    };
    let ni_scale = if ni_rows.is_empty() {
        0.0
    } else {
        (1.0 - opts.alpha) / ni_rows.len() as f64
    };

    let mut model = DeletionModel {
        base: params.clone(),
        operators,
        masks,
        affected,
    };
    for _ in 0..opts.epochs {
        let mut tape = Tape::<f64>::new();
        let (ops, out) = record(&mut tape, &model.base, &model.operators, &model.masks, &input);
        let mut parts = Vec::new();
        if dec_scale != 0.0 {
            parts.push(tape.pair_mse(out, &deleted_pairs, &dec_targets, dec_scale));
        }
        if ni_scale != 0.0 {
            parts.push(tape.row_sq_dist(out, &ni_rows, &ni_target, ni_scale));
        }
        if parts.is_empty() {
            break;
        }
        let loss = tape.sum(&parts);
        let mut grads = tape.backward(loss);
        for (d, &var) in model.operators.iter_mut().zip(&ops) {
            let g = grads.take(var, d.dim());
            d.scaled_add(-opts.lr, &g);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{Backbone, Hyper, Task};
    use crate::graph::{make_request, Targets};
    use crate::unlearn::tests::small_sbm;
    use crate::unlearn::TrainSpec;

    fn link_setup(kind: BackboneKind) -> (Graph, DataSplit, ModelParams) {
        let (g, _) = small_sbm(12);
        let split = DataSplit::all_train(g.node_count());
        let spec = TrainSpec {
            backbone: Backbone::new(kind, 2),
            task: Task::Link,
            hyper: Hyper {
                epochs: 150,
                lr: 0.1,
                ..Hyper::default()
            },
        };
        let model = spec.train(&g, &split, 5).unwrap();
        (g, split, model)
    }

    #[test]
    fn nodes_outside_receptive_field_are_untouched() {
        for kind in [BackboneKind::Gcn, BackboneKind::Sgc, BackboneKind::Sage] {
            let (g, split, model) = link_setup(kind);
            let r = make_request(RequestKind::Edge, Targets::Edges(vec![g.edges()[0]])).unwrap();
            let del = gnndelete_unlearn(&model, &g, &split, &r, &DeleteOptions::default(), 1).unwrap();
            assert_eq!(del.base, model);
            let before = model.forward_graph(&g).unwrap();
            let after = del.embeddings(&g.without_edges(r.edges())).unwrap();
            let outside: Vec<usize> = (0..g.node_count()).filter(|v| !del.affected.contains(v)).collect();
            assert!(!outside.is_empty());
            for v in outside {
                assert_eq!(before.row(v), after.row(v), "{kind:?} node {v}");
            }
        }
    }

    #[test]
    fn deleted_edge_score_drops() {
        let (g, split, model) = link_setup(BackboneKind::Gcn);
        let e = g.edges()[3];
        let r = make_request(RequestKind::Edge, Targets::Edges(vec![e])).unwrap();
        let del = gnndelete_unlearn(&model, &g, &split, &r, &DeleteOptions::default(), 2).unwrap();
        let before = model.score_edges(&g, &[e]).unwrap()[0];
        let after = del.score_edges(&g.without_edges(&[e]), &[e]).unwrap()[0];
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn neighborhood_only_training_stays_near_base() {
        let (g, split, model) = link_setup(BackboneKind::Gcn);
        let e = g.edges()[3];
        let r = make_request(RequestKind::Edge, Targets::Edges(vec![e])).unwrap();
        let opts = DeleteOptions {
            alpha: 0.0,
            ..DeleteOptions::default()
        };
        let del = gnndelete_unlearn(&model, &g, &split, &r, &opts, 2).unwrap();
        let before = model.score_edges(&g, &[e]).unwrap()[0];
        let after = del.score_edges(&g.without_edges(&[e]), &[e]).unwrap()[0];
        assert!((after - before).abs() <= 0.2, "{after} vs {before}");
    }

    #[test]
    fn feature_requests_are_rejected() {
        let (g, split, model) = link_setup(BackboneKind::Sgc);
        let r = make_request(RequestKind::Feature, Targets::Features(vec![(0, vec![0])])).unwrap();
        assert!(matches!(
            gnndelete_unlearn(&model, &g, &split, &r, &DeleteOptions::default(), 0),
            Err(Error::KindMismatch { .. })
        ));
    }
}
