use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pruned_set, pruned_view, GraphRequest, TrainSpec};
use crate::error::{Error, Result};
use crate::gnn::{init_for, normalized_adjacency, output_dim, propagate, softmax_rows, ModelParams, Task};
use crate::graph::{DataSplit, Edge, Graph, GraphSet, RequestKind, UnlearnRequest};
use crate::seed::{self, derive_seed, derive_seed_indexed};

/// A k-way partition of training items (nodes, or graphs for graph
/// classification) with one model per shard. Predictions average the shard
/// softmax outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardPlan {
    pub k: usize,
    /// Shard of each item; `None` for items outside the training set.
    pub assignment: Vec<Option<usize>>,
    pub models: Vec<ModelParams>,
    pub spec: TrainSpec,
    pub seed: u64,
}

impl ShardPlan {
    pub fn members(&self, shard: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|&(_, &a)| a == Some(shard))
            .map(|(v, _)| v)
            .collect()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for s in self.assignment.iter().flatten() {
            sizes[*s] += 1;
        }
        sizes
    }

    /// Shards with at least one member; these take part in aggregation.
    fn active(&self) -> Vec<usize> {
        let sizes = self.shard_sizes();
        (0..self.k).filter(|&s| sizes[s] > 0).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("finite weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ndarray::ArrayView1<f64>, centers: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.rows().into_iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means with k-means++ seeding, then a capacity-constrained assignment:
/// points are placed in order of distance to their closest centroid, each
/// going to the nearest centroid that still has room. No cluster exceeds
/// `ceil(n / k)` points.
pub fn balanced_kmeans(points: &Array2<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n_train: n });
    }
    let mut rng = seed::rng(seed);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|p| sq_dist(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && t < d {
                    pick = i;
                    break;
                }
                t -= d;
            }
            if chosen.contains(&pick) {
                (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
            } else {
                pick
            }
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(next)));
        }
    }
    let mut centers = points.select(Axis(0), &chosen);

    let mut assign = vec![usize::MAX; n];
    for _ in 0..30 {
        let next: Vec<usize> = points.rows().into_iter().map(|p| nearest(p, &centers).0).collect();
        if next == assign {
            break;
        }
        assign = next;
        let mut sums = Array2::<f64>::zeros(centers.raw_dim());
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            sums.row_mut(c).scaled_add(1.0, &points.row(i));
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
    }

    let cap = n.div_ceil(k);
    let mut order: Vec<(usize, f64)> = points
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, p)| (i, nearest(p, &centers).1))
        .collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut load = vec![0usize; k];
    let mut out = vec![0usize; n];
    for (i, _) in order {
        let mut ranked: Vec<(usize, f64)> = centers
            .rows()
            .into_iter()
            .enumerate()
            .map(|(c, center)| (c, sq_dist(points.row(i), center)))
            .collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let c = ranked
            .into_iter()
            .map(|(c, _)| c)
            .find(|&c| load[c] < cap)
            .expect("total capacity covers every point");
        load[c] += 1;
        out[i] = c;
    }
    Ok(out)
}

fn train_node_shard(spec: &TrainSpec, g: &Graph, members: &[usize], seed: u64) -> Result<ModelParams> {
    let sub = g.induced(members);
    let fallback = || {
        init_for(
            spec.backbone,
            g.feature_dim(),
            output_dim(spec.task, g.num_classes(), &spec.hyper),
            &spec.hyper,
            seed,
        )
    };
    if members.is_empty() || (spec.task == Task::Link && sub.edge_count() == 0) {
        return Ok(fallback());
    }
    spec.train(&sub, &DataSplit::all_train(members.len()), seed)
}

fn train_graph_shard(spec: &TrainSpec, set: &GraphSet, members: &[usize], seed: u64) -> Result<ModelParams> {
    if members.is_empty() {
        return Ok(init_for(spec.backbone, set.feature_dim(), set.num_classes(), &spec.hyper, seed));
    }
    spec.train_graphs(&set.subset(members), &DataSplit::all_train(members.len()), seed)
}

fn shard_seed(seed: u64, shard: usize) -> u64 {
    derive_seed_indexed(seed, "shard", shard as u64)
}

/// Shard embedding `A^2 X` of the training nodes.
fn node_embedding(g: &Graph, split: &DataSplit) -> Result<Array2<f64>> {
    let a = normalized_adjacency(g);
    Ok(propagate(g.features(), &a, 2)?.select(Axis(0), &split.train_ids))
}

/// Splits the training nodes into `k` balanced shards and trains one model on
/// each shard-induced subgraph, in parallel.
pub fn partition(spec: &TrainSpec, g: &Graph, split: &DataSplit, k: usize, seed: u64) -> Result<ShardPlan> {
    let n_train = split.train_ids.len();
    if k == 0 || k > n_train {
        return Err(Error::InvalidK { k, n_train });
    }
    let view = match split.mode {
        crate::graph::SplitMode::Transductive => g.clone(),
        crate::graph::SplitMode::Inductive => g.isolate(&split.test_ids),
    };
    let clusters = balanced_kmeans(&node_embedding(&view, split)?, k, derive_seed(seed, "kmeans"))?;
    let mut assignment = vec![None; g.node_count()];
    for (&v, &c) in split.train_ids.iter().zip(&clusters) {
        assignment[v] = Some(c);
    }
    let mut plan = ShardPlan {
        k,
        assignment,
        models: Vec::new(),
        spec: *spec,
        seed,
    };
    plan.models = (0..k)
        .into_par_iter()
        .map(|s| train_node_shard(spec, g, &plan.members(s), shard_seed(seed, s)))
        .collect::<Result<_>>()?;
    Ok(plan)
}

/// Retrains only the shards that hold a node named by the request (deleted
/// nodes, edge endpoints, masked nodes). All other shard models are kept
/// as they are.
pub fn eraser_unlearn(plan: &ShardPlan, g: &Graph, request: &UnlearnRequest) -> Result<ShardPlan> {
    request.validate(g, None)?;
    if plan.assignment.len() != g.node_count() {
        return Err(Error::LengthMismatch(plan.assignment.len(), g.node_count()));
    }
    let pruned = pruned_view(g, request)?;
    let mut out = plan.clone();
    let mut dirty = vec![false; plan.k];
    for v in request.touched_nodes() {
        if let Some(s) = plan.assignment[v] {
            dirty[s] = true;
        }
    }
    if request.kind() == RequestKind::Node {
        for &v in request.nodes() {
            out.assignment[v] = None;
        }
    }
    let dirty: Vec<usize> = (0..plan.k).filter(|&s| dirty[s]).collect();
    let retrained: Vec<ModelParams> = dirty
        .par_iter()
        .map(|&s| train_node_shard(&plan.spec, &pruned, &out.members(s), shard_seed(plan.seed, s)))
        .collect::<Result<_>>()?;
    for (s, m) in dirty.into_iter().zip(retrained) {
        out.models[s] = m;
    }
    Ok(out)
}

/// Mean of the shard models' softmax outputs on `g` for `nodes`.
pub fn aggregate_predict(plan: &ShardPlan, g: &Graph, nodes: &[usize]) -> Result<Array2<f64>> {
    let active = plan.active();
    let mut acc: Option<Array2<f64>> = None;
    for &s in &active {
        let p = plan.models[s].predict_proba(g)?.select(Axis(0), nodes);
        acc = Some(match acc {
            Some(a) => a + p,
            None => p,
        });
    }
    Ok(acc.expect("a plan has at least one member") / active.len() as f64)
}

/// Mean of the shard models' link probabilities on `g` for `pairs`.
pub fn aggregate_scores(plan: &ShardPlan, g: &Graph, pairs: &[Edge]) -> Result<Vec<f64>> {
    let active = plan.active();
    let mut acc = Array1::<f64>::zeros(pairs.len());
    for &s in &active {
        acc += &Array1::from(plan.models[s].score_edges(g, pairs)?);
    }
    Ok((acc / active.len() as f64).to_vec())
}

/// Mean of the shard models' class probabilities for graphs `ids` of `set`.
pub fn aggregate_graph_predict(plan: &ShardPlan, set: &GraphSet, ids: &[usize]) -> Result<Array2<f64>> {
    let active = plan.active();
    let c = set.num_classes();
    let mut acc = Array2::<f64>::zeros((ids.len(), c));
    for &s in &active {
        let mut logits = Array2::<f64>::zeros((ids.len(), c));
        for (row, &i) in ids.iter().enumerate() {
            logits
                .row_mut(row)
                .assign(&Array1::from(plan.models[s].graph_logits(&set.graphs()[i])?));
        }
        acc += &softmax_rows(&logits);
    }
    Ok(acc / active.len() as f64)
}

/// Graph-classification variant of [`partition`]: graphs are clustered by
/// their mean-pooled `A^2 X`.
pub fn partition_graphs(spec: &TrainSpec, set: &GraphSet, split: &DataSplit, k: usize, seed: u64) -> Result<ShardPlan> {
    let n_train = split.train_ids.len();
    if k == 0 || k > n_train {
        return Err(Error::InvalidK { k, n_train });
    }
    let mut emb = Array2::<f64>::zeros((n_train, set.feature_dim()));
    for (row, &i) in split.train_ids.iter().enumerate() {
        let g = &set.graphs()[i];
        let h = propagate(g.features(), &normalized_adjacency(g), 2)?;
        emb.row_mut(row).assign(&h.mean_axis(Axis(0)).expect("nonempty graph"));
    }
    let clusters = balanced_kmeans(&emb, k, derive_seed(seed, "kmeans"))?;
    let mut assignment = vec![None; set.len()];
    for (&i, &c) in split.train_ids.iter().zip(&clusters) {
        assignment[i] = Some(c);
    }
    let mut plan = ShardPlan {
        k,
        assignment,
        models: Vec::new(),
        spec: *spec,
        seed,
    };
    plan.models = (0..k)
        .into_par_iter()
        .map(|s| train_graph_shard(spec, set, &plan.members(s), shard_seed(seed, s)))
        .collect::<Result<_>>()?;
    Ok(plan)
}

/// Retrains the shards holding any graph named in `requests`.
pub fn eraser_unlearn_graphs(plan: &ShardPlan, set: &GraphSet, requests: &GraphRequest) -> Result<ShardPlan> {
    let pruned = pruned_set(set, requests)?;
    let mut dirty = vec![false; plan.k];
    for (i, _) in requests {
        if let Some(s) = plan.assignment[*i] {
            dirty[s] = true;
        }
    }
    let dirty: Vec<usize> = (0..plan.k).filter(|&s| dirty[s]).collect();
    let retrained: Vec<ModelParams> = dirty
        .par_iter()
        .map(|&s| train_graph_shard(&plan.spec, &pruned, &plan.members(s), shard_seed(plan.seed, s)))
        .collect::<Result<_>>()?;
    let mut out = plan.clone();
    for (s, m) in dirty.into_iter().zip(retrained) {
        out.models[s] = m;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_request, Targets};
    use crate::unlearn::tests::{small_sbm, small_spec};
    use proptest::prelude::*;

    #[test]
    fn single_shard_holds_everything() {
        let (g, split) = small_sbm(1);
        let spec = small_spec(Task::Node);
        let plan = partition(&spec, &g, &split, 1, 4).unwrap();
        assert_eq!(plan.members(0), split.train_ids);
        let nodes: Vec<usize> = (0..g.node_count()).collect();
        let agg = aggregate_predict(&plan, &g, &nodes).unwrap();
        assert_eq!(agg, plan.models[0].predict_proba(&g).unwrap());
    }

    #[test]
    fn singleton_shards_when_k_equals_train_size() {
        let pts = Array2::from_shape_fn((7, 2), |(i, j)| (i * (j + 1)) as f64);
        let mut a = balanced_kmeans(&pts, 7, 3).unwrap();
        a.sort_unstable();
        assert_eq!(a, (0..7).collect::<Vec<_>>());
        assert!(matches!(balanced_kmeans(&pts, 8, 3), Err(Error::InvalidK { .. })));
        assert!(matches!(balanced_kmeans(&pts, 0, 3), Err(Error::InvalidK { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn capacity_respected(n in 1usize..60, k_frac in 0.0f64..1.0, seed in 0u64..1000) {
            let k = 1 + ((n - 1) as f64 * k_frac) as usize;
            let mut rng = crate::seed::rng(seed);
            let pts = Array2::from_shape_simple_fn((n, 3), || rand::Rng::random_range(&mut rng, -1.0..1.0));
            let a = balanced_kmeans(&pts, k, seed).unwrap();
            let mut load = vec![0; k];
            for c in a { load[c] += 1; }
            prop_assert!(load.into_iter().max().unwrap() <= n.div_ceil(k));
        }
    }

    #[test]
    fn unaffected_shards_are_kept_byte_for_byte() {
        let (g, split) = small_sbm(2);
        let spec = small_spec(Task::Node);
        let plan = partition(&spec, &g, &split, 4, 7).unwrap();
        let victim = plan.members(2)[0];
        let r = make_request(RequestKind::Node, Targets::Nodes(vec![victim])).unwrap();
        let after = eraser_unlearn(&plan, &g, &r).unwrap();
        for s in [0, 1, 3] {
            assert_eq!(after.models[s].to_json(), plan.models[s].to_json());
        }
        assert_ne!(after.models[2], plan.models[2]);
        assert_eq!(after.assignment[victim], None);
    }

    #[test]
    fn empty_effect_request_keeps_plan() {
        let (mut g, split) = small_sbm(3);
        let v = split.train_ids[0];
        g.features_mut()[[v, 0]] = 0.0;
        let plan = partition(&small_spec(Task::Node), &g, &split, 3, 1).unwrap();
        let r = make_request(RequestKind::Feature, Targets::Features(vec![(v, vec![0])])).unwrap();
        assert_eq!(eraser_unlearn(&plan, &g, &r).unwrap(), plan);
    }

    #[test]
    fn aggregation_rows_are_distributions_and_json_round_trips() {
        let (g, split) = small_sbm(5);
        let plan = partition(&small_spec(Task::Node), &g, &split, 3, 2).unwrap();
        let p = aggregate_predict(&plan, &g, &split.test_ids).unwrap();
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        assert_eq!(ShardPlan::from_json(&plan.to_json()).unwrap(), plan);
    }

    #[test]
    fn identical_shards_aggregate_to_one_shard() {
        let (g, split) = small_sbm(6);
        let mut plan = partition(&small_spec(Task::Node), &g, &split, 3, 2).unwrap();
        let m = plan.models[0].clone();
        plan.models = vec![m.clone(); 3];
        let p = aggregate_predict(&plan, &g, &split.test_ids).unwrap();
        let q = m.predict_proba(&g).unwrap().select(Axis(0), &split.test_ids);
        assert!((p - q).iter().all(|d| d.abs() < 1e-12));
    }
}
