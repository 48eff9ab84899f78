use nalgebra::DMatrix;

use super::pruned_view;
use crate::error::{Error, Result};
use crate::gnn::{normalized_adjacency, propagate, BackboneKind, ModelParams};
use crate::graph::{DataSplit, Graph, RequestKind, UnlearnRequest};

/// Projects the weights of a linear (SGC) model onto the span of the
/// retained training nodes' propagated features.
///
/// `F_r = A^L X` is computed on the graph with the requested nodes cut off
/// and restricted to the remaining training nodes. The basis comes from an
/// SVD of `F_r`, keeping singular values above `1e-10 * sigma_max`.
pub fn projector_unlearn(
    params: &ModelParams,
    g: &Graph,
    split: &DataSplit,
    request: &UnlearnRequest,
) -> Result<ModelParams> {
    if params.backbone.kind != BackboneKind::Sgc {
        return Err(Error::WrongBackbone {
            expected: BackboneKind::Sgc.name(),
            got: params.backbone.kind.name(),
        });
    }
    if request.kind() != RequestKind::Node {
        return Err(Error::KindMismatch {
            expected: RequestKind::Node.name(),
            got: request.kind().name(),
        });
    }
    let pruned = pruned_view(g, request)?;
    let retained = split.without(request.nodes());
    let view = retained.training_view(&pruned);
    let mut rows: Vec<usize> = view
        .global
        .iter()
        .enumerate()
        .filter(|&(_, &v)| retained.is_train(v))
        .map(|(i, _)| i)
        .collect();
    rows.sort_unstable();
    let f = propagate(view.graph.features(), &normalized_adjacency(&view.graph), params.backbone.hops)?
        .select(ndarray::Axis(0), &rows);
    project_onto_rows(params, &f)
}

/// `W' = Q Q^T W` for an orthonormal basis `Q` of the row space of `f`.
pub(crate) fn project_onto_rows(params: &ModelParams, f: &ndarray::Array2<f64>) -> Result<ModelParams> {
    let w = &params.weights[0];
    let dim = w.nrows();
    if f.ncols() != dim {
        return Err(Error::ShapeMismatch(format!(
            "features have {} columns, weights have {dim} rows",
            f.ncols()
        )));
    }
    let mut out = params.clone();
    if f.nrows() == 0 {
        out.weights[0].fill(0.0);
        return Ok(out);
    }
    let m = DMatrix::from_fn(f.nrows(), dim, |i, j| f[[i, j]]);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let sigma_max = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| sigma_max > 0.0 && svd.singular_values[i] > 1e-10 * sigma_max)
        .collect();
    let q = DMatrix::from_fn(dim, keep.len(), |r, c| v_t[(keep[c], r)]);
    let wm = DMatrix::from_fn(dim, w.ncols(), |i, j| w[[i, j]]);
    let projected = &q * (q.transpose() * wm);
    out.weights[0] = ndarray::Array2::from_shape_fn(w.dim(), |(i, j)| projected[(i, j)]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{Backbone, Hyper, Task};
    use crate::graph::{make_request, Targets};
    use crate::unlearn::tests::small_sbm;
    use crate::unlearn::TrainSpec;
    use ndarray::{array, Array2};

    fn model(in_dim: usize, out: usize) -> ModelParams {
        ModelParams::init(Backbone::new(BackboneKind::Sgc, 2), in_dim, 4, out, 9)
    }

    #[test]
    fn full_span_keeps_weights() {
        let p = model(3, 2);
        let f = array![[1.0, 0.2, 0.0], [0.0, 1.0, 0.5], [0.3, 0.0, 1.0], [1.0, 1.0, 1.0]];
        let out = project_onto_rows(&p, &f).unwrap();
        assert!((&out.weights[0] - &p.weights[0]).iter().all(|d| d.abs() < 1e-10));
    }

    #[test]
    fn single_basis_row_keeps_first_weight_row() {
        let p = model(4, 3);
        let f = array![[2.0, 0.0, 0.0, 0.0]];
        let out = project_onto_rows(&p, &f).unwrap();
        let w = &out.weights[0];
        for j in 0..3 {
            assert!((w[[0, j]] - p.weights[0][[0, j]]).abs() < 1e-12);
            for i in 1..4 {
                assert!(w[[i, j]].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_linear_backbones() {
        let (g, split) = small_sbm(1);
        let p = ModelParams::init(Backbone::new(BackboneKind::Gcn, 2), 16, 4, 3, 1);
        let r = make_request(RequestKind::Node, Targets::Nodes(vec![split.train_ids[0]])).unwrap();
        assert!(matches!(
            projector_unlearn(&p, &g, &split, &r),
            Err(Error::WrongBackbone { .. })
        ));
    }

    #[test]
    fn idempotent_and_orthogonal_directions_vanish() {
        let (g, split) = small_sbm(2);
        let spec = TrainSpec {
            backbone: Backbone::new(BackboneKind::Sgc, 2),
            task: Task::Node,
            hyper: Hyper::default(),
        };
        let p = spec.train(&g, &split, 1).unwrap();
        let r = make_request(RequestKind::Node, Targets::Nodes(split.train_ids[..4].to_vec())).unwrap();
        let once = projector_unlearn(&p, &g, &split, &r).unwrap();
        let twice = projector_unlearn(&once, &g, &split, &r).unwrap();
        assert!((&once.weights[0] - &twice.weights[0]).iter().all(|d| d.abs() < 1e-12));

        // low-rank retained span: 2 feature directions out of 3
        let f: Array2<f64> = array![[1.0, 1.0, 0.0], [2.0, -1.0, 0.0]];
        let q = model(3, 2);
        let out = project_onto_rows(&q, &f).unwrap();
        let v = array![0.0, 0.0, 1.0];
        assert!(v.dot(&out.weights[0]).iter().all(|x| x.abs() <= 1e-6));
    }
}
