use serde::{Deserialize, Serialize};

use super::cg::conjugate_gradient;
use super::{pruned_set, pruned_view, GraphRequest, TrainSpec};
use crate::error::{Error, Result};
use crate::gnn::{link_positives, objective_for, sample_negatives, ModelParams, Objective, Task};
use crate::graph::{DataSplit, Edge, Graph, GraphSet, RequestKind, UnlearnRequest};
use crate::seed::derive_seed;

/// Damped Newton solve settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfluenceOptions {
    pub damping: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
}

impl Default for InfluenceOptions {
    fn default() -> Self {
        Self {
            damping: 1e-2,
            cg_iters: 100,
            cg_tol: 1e-8,
        }
    }
}

/// `theta - (H + damping I)^-1 delta` with `H` the Hessian of `objective` at
/// `params`.
fn newton_step(
    params: &ModelParams,
    objective: &Objective,
    delta: &[f64],
    opts: &InfluenceOptions,
) -> Result<ModelParams> {
    if delta.iter().all(|&d| d == 0.0) {
        return Ok(params.clone());
    }
    if delta.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("influence gradient"));
    }
    let solved = conjugate_gradient(
        |v| objective.hvp(params, v),
        delta,
        opts.damping,
        opts.cg_iters,
        opts.cg_tol,
    )?;
    let theta: Vec<f64> = params
        .to_flat()
        .iter()
        .zip(&solved.x)
        .map(|(t, x)| t - x)
        .collect();
    params.with_flat(&theta)
}

/// Runs `solve` and, while it reports [`Error::CgDiverged`], retries with the
/// damping raised tenfold, at most `retries` times.
pub fn with_damping_retries<T>(
    opts: &InfluenceOptions,
    retries: usize,
    mut solve: impl FnMut(&InfluenceOptions) -> Result<T>,
) -> Result<T> {
    let mut o = *opts;
    for _ in 0..retries {
        match solve(&o) {
            Err(Error::CgDiverged { .. }) => o.damping *= 10.0,
            other => return other,
        }
    }
    solve(&o)
}

fn combine(a: f64, all: Option<&[f64]>, b: f64, pruned: &[f64], orig: &[f64]) -> Vec<f64> {
    (0..pruned.len())
        .map(|i| all.map_or(0.0, |g| a * g[i]) + b * (pruned[i] - orig[i]))
        .collect()
}

/// The requested nodes (or edge endpoints) plus their `hops`-hop
/// neighborhood, in `g`'s ids.
pub fn affected_nodes(g: &Graph, request: &UnlearnRequest, hops: usize) -> Vec<usize> {
    g.k_hop(&request.touched_nodes(), hops)
}

/// Graph-aware influence update restricted to the request's receptive field.
///
/// Only loss terms within `L` hops of the request are re-evaluated on the
/// pruned graph (exact for edge and feature requests; for node requests the
/// degree change of the deleted node's neighbors reaches one hop further and
/// is ignored); the change in normalization from dropped terms is folded in
/// through one full gradient. The step is a damped Newton step on the
/// retained objective.
pub fn gif_unlearn(
    params: &ModelParams,
    spec: &TrainSpec,
    g: &Graph,
    split: &DataSplit,
    request: &UnlearnRequest,
    seed: u64,
    opts: &InfluenceOptions,
) -> Result<ModelParams> {
    let b = spec.backbone;
    let pruned = pruned_view(g, request)?;
    let view = split.training_view(g);
    let view_p = split.training_view(&pruned);
    let mut local = vec![None; g.node_count()];
    for (i, &v) in view.global.iter().enumerate() {
        local[v] = Some(i);
    }
    let to_local = |ids: &[usize]| -> Vec<usize> { ids.iter().filter_map(|&v| local[v]).collect() };
    let seeds = to_local(&request.touched_nodes());
    let dist = view.graph.hop_distances(&seeds);
    let hit = |v: usize| dist[v] <= b.hops;
    let mut deleted = vec![false; view.graph.node_count()];
    if request.kind() == RequestKind::Node {
        for v in to_local(request.nodes()) {
            deleted[v] = true;
        }
    }

    match spec.task {
        Task::Node => {
            let rows = &view.rows;
            let rows_p: Vec<usize> = view_p.rows.iter().copied().filter(|&v| !deleted[v]).collect();
            if rows_p.is_empty() {
                return Err(Error::EmptySet("retained training nodes"));
            }
            let (n, n_p) = (rows.len() as f64, rows_p.len() as f64);
            let aff: Vec<usize> = rows.iter().copied().filter(|&v| hit(v)).collect();
            let aff_p: Vec<usize> = rows_p.iter().copied().filter(|&v| hit(v)).collect();
            let g_orig = Objective::node_scaled(&view.graph, b, &aff, 1.0, 0.0)?.grad(params)?;
            let g_pruned = Objective::node_scaled(&view_p.graph, b, &aff_p, 1.0, 0.0)?.grad(params)?;
            let shift = 1.0 / n_p - 1.0 / n;
            let g_all = if shift != 0.0 {
                Some(Objective::node_scaled(&view.graph, b, rows, 1.0, 0.0)?.grad(params)?)
            } else {
                None
            };
            let delta = combine(shift, g_all.as_deref(), 1.0 / n_p, &g_pruned, &g_orig);
            let hessian = Objective::node(&view_p.graph, b, &rows_p, spec.hyper.weight_decay)?;
            newton_step(params, &hessian, &delta, opts)
        }
        Task::Link => {
            let neg_seed = derive_seed(seed, "negatives");
            let everyone = DataSplit::all_train(view.graph.node_count());
            let pos = link_positives(&view.graph, &everyone);
            let pos_p = link_positives(&view_p.graph, &everyone);
            if pos_p.is_empty() {
                return Err(Error::NoEdges);
            }
            let neg = sample_negatives(&view.graph, &pos, neg_seed);
            let neg_p = sample_negatives(&view_p.graph, &pos_p, neg_seed);
            let touching = |pairs: &[Edge]| -> Vec<Edge> {
                pairs.iter().copied().filter(|&(u, v)| hit(u) || hit(v)).collect()
            };
            let (s, s_p) = (1.0 / (2 * pos.len()) as f64, 1.0 / (2 * pos_p.len()) as f64);
            let g_orig = Objective::link_pairs(&view.graph, b, &touching(&pos), &touching(&neg), 1.0, 0.0)
                .grad(params)?;
            let g_pruned =
                Objective::link_pairs(&view_p.graph, b, &touching(&pos_p), &touching(&neg_p), 1.0, 0.0)
                    .grad(params)?;
            let shift = s_p - s;
            let g_all = if shift != 0.0 {
                Some(Objective::link_pairs(&view.graph, b, &pos, &neg, 1.0, 0.0).grad(params)?)
            } else {
                None
            };
            let delta = combine(shift, g_all.as_deref(), s_p, &g_pruned, &g_orig);
            let hessian = Objective::link_pairs(&view_p.graph, b, &pos_p, &neg_p, s_p, spec.hyper.weight_decay);
            newton_step(params, &hessian, &delta, opts)
        }
        Task::Graph => Err(Error::UnsupportedCombination(
            "graph task uses gif_unlearn_graphs".into(),
        )),
    }
}

/// Influence update for graph classification under per-graph feature
/// requests. Only the touched training graphs are re-evaluated.
pub fn gif_unlearn_graphs(
    params: &ModelParams,
    spec: &TrainSpec,
    set: &GraphSet,
    split: &DataSplit,
    requests: &GraphRequest,
    opts: &InfluenceOptions,
) -> Result<ModelParams> {
    let pruned = pruned_set(set, requests)?;
    let mut touched: Vec<usize> = requests
        .iter()
        .map(|(i, _)| *i)
        .filter(|&i| split.is_train(i))
        .collect();
    touched.sort_unstable();
    touched.dedup();
    let n = split.train_ids.len();
    if n == 0 {
        return Err(Error::EmptySet("training graphs"));
    }
    let scale = 1.0 / n as f64;
    let g_orig = Objective::graphs_scaled(set, &touched, spec.backbone, 1.0, 0.0).grad(params)?;
    let g_pruned = Objective::graphs_scaled(&pruned, &touched, spec.backbone, 1.0, 0.0).grad(params)?;
    let delta = combine(0.0, None, scale, &g_pruned, &g_orig);
    let hessian = Objective::graphs(&pruned, &split.train_ids, spec.backbone, spec.hyper.weight_decay);
    newton_step(params, &hessian, &delta, opts)
}

/// Single Newton-style correction for edge removal over the full training
/// loss.
pub fn ceu_unlearn(
    params: &ModelParams,
    spec: &TrainSpec,
    g: &Graph,
    split: &DataSplit,
    request: &UnlearnRequest,
    seed: u64,
    opts: &InfluenceOptions,
) -> Result<ModelParams> {
    if request.kind() != RequestKind::Edge {
        return Err(Error::KindMismatch {
            expected: RequestKind::Edge.name(),
            got: request.kind().name(),
        });
    }
    let pruned = g.without_edges(request.edges());
    if pruned.edge_count() == g.edge_count() {
        return Ok(params.clone());
    }
    let before = objective_for(spec.backbone, g, split, spec.task, &spec.hyper, seed)?;
    let after = objective_for(spec.backbone, &pruned, split, spec.task, &spec.hyper, seed)?;
    let g_before = before.grad(params)?;
    let g_after = after.grad(params)?;
    let delta: Vec<f64> = g_after.iter().zip(&g_before).map(|(a, b)| a - b).collect();
    newton_step(params, &after, &delta, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{Backbone, BackboneKind, Hyper};
    use crate::graph::{build_graph, make_request, split_dataset, SplitMode, Targets};
    use crate::unlearn::retrain_oracle;
    use crate::unlearn::tests::{small_sbm, small_spec};
    use ndarray::Array2;

    fn dist(a: &ModelParams, b: &ModelParams) -> f64 {
        a.to_flat()
            .iter()
            .zip(b.to_flat())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn damping_raised_until_solve_succeeds() {
        let mut seen = Vec::new();
        let out = with_damping_retries(&InfluenceOptions::default(), 4, |o| {
            seen.push(o.damping);
            if o.damping < 0.5 {
                Err(Error::CgDiverged {
                    residual: 1.0,
                    iters: 1,
                })
            } else {
                Ok(o.damping)
            }
        })
        .unwrap();
        assert_eq!(seen.len(), 3);
        assert!((out - 1.0).abs() < 1e-12);
        let always = with_damping_retries(&InfluenceOptions::default(), 2, |_| -> Result<()> {
            Err(Error::CgDiverged {
                residual: 1.0,
                iters: 1,
            })
        });
        assert!(matches!(always, Err(Error::CgDiverged { .. })));
    }

    #[test]
    fn affected_set_on_path() {
        let g = build_graph(Array2::zeros((5, 1)), None, &[(0, 1), (1, 2), (2, 3), (3, 4)])
            .unwrap()
            .0;
        let r = make_request(RequestKind::Node, Targets::Nodes(vec![0])).unwrap();
        assert_eq!(affected_nodes(&g, &r, 2), vec![0, 1, 2]);
    }

    #[test]
    fn empty_effect_request_returns_input() {
        let (mut g, split) = small_sbm(2);
        let v = split.train_ids[3];
        g.features_mut()[[v, 1]] = 0.0;
        let spec = small_spec(Task::Node);
        let model = spec.train(&g, &split, 1).unwrap();
        let r = make_request(RequestKind::Feature, Targets::Features(vec![(v, vec![1])])).unwrap();
        let out = gif_unlearn(&model, &spec, &g, &split, &r, 1, &InfluenceOptions::default()).unwrap();
        assert_eq!(out, model);
    }

    /// Edgeless graph + SGC is multinomial logistic regression, which is
    /// strongly convex with weight decay.
    fn logistic_instance(seed: u64) -> (Graph, DataSplit, TrainSpec) {
        let mut rng = crate::seed::rng(seed);
        let n = 200;
        let f = 10;
        let w: Vec<f64> = (0..f).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let x = Array2::from_shape_simple_fn((n, f), || rand::Rng::random_range(&mut rng, -1.0..1.0));
        let labels: Vec<usize> = x
            .rows()
            .into_iter()
            .map(|r| {
                let s: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum();
                let noise: f64 = rand::Rng::random_range(&mut rng, -0.5..0.5);
                usize::from(s + noise > 0.0)
            })
            .collect();
        let g = build_graph(x, Some(labels), &[]).unwrap().0;
        let split = DataSplit::all_train(n);
        let spec = TrainSpec {
            backbone: Backbone::new(BackboneKind::Sgc, 0),
            task: Task::Node,
            hyper: Hyper {
                lr: 1.0,
                epochs: 1500,
                weight_decay: 1e-2,
                hidden: 4,
            },
        };
        (g, split, spec)
    }

    #[test]
    fn gif_moves_toward_retrained_model_on_convex_problem() {
        let (g, split, spec) = logistic_instance(11);
        let model = spec.train(&g, &split, 3).unwrap();
        let r = make_request(RequestKind::Node, Targets::Nodes(vec![3, 40, 77, 120, 199])).unwrap();
        let oracle = retrain_oracle(&spec, &g, &split, &r, 3).unwrap();
        let unlearned = gif_unlearn(&model, &spec, &g, &split, &r, 3, &InfluenceOptions::default()).unwrap();
        assert!(dist(&unlearned, &oracle) < dist(&model, &oracle));
    }

    #[test]
    fn gif_matches_full_difference_form() {
        // the affected-set decomposition equals a full-gradient difference
        let (g, split) = small_sbm(8);
        let spec = small_spec(Task::Node);
        let model = spec.train(&g, &split, 1).unwrap();
        let r = make_request(RequestKind::Edge, Targets::Edges(g.edges()[..4].to_vec())).unwrap();
        let opts = InfluenceOptions {
            damping: 0.1,
            ..InfluenceOptions::default()
        };
        let a = gif_unlearn(&model, &spec, &g, &split, &r, 1, &opts).unwrap();
        let b = ceu_unlearn(&model, &spec, &g, &split, &r, 1, &opts).unwrap();
        assert!(dist(&a, &b) < 1e-8 * (1.0 + dist(&model, &b)));
    }

    #[test]
    fn ceu_rejects_node_requests_and_ignores_empty() {
        let (g, split) = small_sbm(3);
        let spec = small_spec(Task::Link);
        let everyone = DataSplit::all_train(g.node_count());
        let model = spec.train(&g, &everyone, 1).unwrap();
        let node = make_request(RequestKind::Node, Targets::Nodes(vec![1])).unwrap();
        assert!(matches!(
            ceu_unlearn(&model, &spec, &g, &split, &node, 1, &InfluenceOptions::default()),
            Err(Error::KindMismatch { .. })
        ));
        let mut absent = (0, 1);
        while g.has_edge(absent.0, absent.1) {
            absent.1 += 1;
        }
        let r = make_request(RequestKind::Edge, Targets::Edges(vec![absent])).unwrap();
        let out = ceu_unlearn(&model, &spec, &g, &everyone, &r, 1, &InfluenceOptions::default()).unwrap();
        assert_eq!(out, model);
    }

    #[test]
    fn ceu_is_deterministic() {
        let (g, _) = small_sbm(6);
        let everyone = DataSplit::all_train(g.node_count());
        let spec = TrainSpec {
            hyper: Hyper {
                epochs: 200,
                ..Hyper::default()
            },
            ..small_spec(Task::Link)
        };
        let model = spec.train(&g, &everyone, 2).unwrap();
        let r = make_request(RequestKind::Edge, Targets::Edges(g.edges()[..3].to_vec())).unwrap();
        let opts = InfluenceOptions {
            damping: 1.0,
            ..InfluenceOptions::default()
        };
        let a = ceu_unlearn(&model, &spec, &g, &everyone, &r, 2, &opts).unwrap();
        let b = ceu_unlearn(&model, &spec, &g, &everyone, &r, 2, &opts).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, model);
    }

    #[test]
    fn graph_variant_leaves_untouched_request_alone() {
        let set = crate::graph::synth_graph_set(12, 8, 2, 0.3, 4, 1.5, 1).unwrap();
        let split = split_dataset(&build_graph(Array2::zeros((12, 1)), None, &[]).unwrap().0, 0.75, SplitMode::Transductive, 1).unwrap();
        let spec = TrainSpec {
            backbone: Backbone::new(BackboneKind::Gcn, 2),
            task: Task::Graph,
            hyper: Hyper {
                epochs: 30,
                ..Hyper::default()
            },
        };
        let model = spec.train_graphs(&set, &split, 1).unwrap();
        // a request on a test graph changes no training term
        let test_graph = split.test_ids[0];
        let r = make_request(RequestKind::Feature, Targets::Features(vec![(0, vec![0, 1])])).unwrap();
        let out = gif_unlearn_graphs(&model, &spec, &set, &split, &[(test_graph, r.clone())], &InfluenceOptions::default()).unwrap();
        assert_eq!(out, model);
        let train_graph = split.train_ids[0];
        let out = gif_unlearn_graphs(&model, &spec, &set, &split, &[(train_graph, r)], &InfluenceOptions { damping: 1.0, ..Default::default() }).unwrap();
        assert_ne!(out, model);
    }
}
