use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::index::sample;

use super::config::{Attack, Dataset, ExperimentConfig, Method, MiaMembers};
use crate::adversary::{mia_auc, poison, poison_recovery, sample_non_edges, AttackReport};
use crate::error::{Error, Result};
use crate::gnn::{argmax_rows, softmax_rows, ModelParams, Task};
use crate::graph::{
    load_dataset, make_request, perturb, split_dataset, split_edges, split_ids, synth_graph_set, synth_sbm,
    DataSplit, Edge, Graph, GraphSet, RequestKind, Targets, UnlearnRequest,
};
use crate::metrics::{accuracy, auc_groups, f1, profile, Averaging, MetricsReport};
use crate::seed::derive_seed;
use crate::unlearn::{
    aggregate_graph_predict, aggregate_predict, aggregate_scores, ceu_unlearn, eraser_unlearn,
    eraser_unlearn_graphs, gif_unlearn, gif_unlearn_graphs, gnndelete_unlearn, partition, partition_graphs,
    projector_unlearn, pruned_view, retrain_graphs, retrain_oracle, utu_graph, DeletionModel,
    with_damping_retries, InfluenceOptions, ShardPlan, TrainSpec,
};

/// Retries with a tenfold larger damping each time CG fails.
const DAMPING_RETRIES: usize = 4;

/// A trained model in whichever form the method produces.
#[derive(Debug, Clone)]
pub enum Trained {
    Params(ModelParams),
    Plan(ShardPlan),
    Deletion(DeletionModel),
}

impl Trained {
    pub fn predict_proba(&self, g: &Graph) -> Result<Array2<f64>> {
        match self {
            Trained::Params(p) => p.predict_proba(g),
            Trained::Plan(plan) => aggregate_predict(plan, g, &(0..g.node_count()).collect::<Vec<_>>()),
            Trained::Deletion(d) => d.predict_proba(g),
        }
    }

    pub fn score_edges(&self, g: &Graph, pairs: &[Edge]) -> Result<Vec<f64>> {
        match self {
            Trained::Params(p) => p.score_edges(g, pairs),
            Trained::Plan(plan) => aggregate_scores(plan, g, pairs),
            Trained::Deletion(d) => d.score_edges(g, pairs),
        }
    }

    fn graph_proba(&self, set: &GraphSet, ids: &[usize]) -> Result<Array2<f64>> {
        match self {
            Trained::Params(p) => {
                let mut logits = Array2::zeros((ids.len(), set.num_classes()));
                for (row, &i) in ids.iter().enumerate() {
                    logits.row_mut(row).assign(&ndarray::Array1::from(p.graph_logits(&set.graphs()[i])?));
                }
                Ok(softmax_rows(&logits))
            }
            Trained::Plan(plan) => aggregate_graph_predict(plan, set, ids),
            Trained::Deletion(_) => Err(Error::UnsupportedCombination("deletion operator on graph task".into())),
        }
    }
}

/// Single-graph data after splitting (and, for link prediction, holding out
/// test edges and optionally poisoning).
#[derive(Debug, Clone)]
pub struct GraphData {
    /// Graph the model is trained on.
    pub train_graph: Graph,
    pub split: DataSplit,
    /// Labels before any perturbation.
    pub clean_labels: Option<Vec<usize>>,
    pub eval_pos: Vec<Edge>,
    pub eval_neg: Vec<Edge>,
    pub poison: Vec<Edge>,
}

#[derive(Debug, Clone)]
pub enum Data {
    Single(GraphData),
    Set { set: GraphSet, split: DataSplit },
}

/// Data and base model shared by every unlearning level of one config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub spec: TrainSpec,
    pub data: Data,
    pub base: Trained,
    pub setup_seconds: f64,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.at(name))
}

fn seed_for(cfg: &ExperimentConfig, stage: &str) -> u64 {
    derive_seed(cfg.seed, stage)
}

/// Loads data, splits it, applies perturbations and poison, and trains the
/// base model (a shard plan for the partition method).
pub fn prepare(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<Prepared> {
    let start = Instant::now();
    stage("config", cfg.validate())?;
    let spec = TrainSpec {
        backbone: cfg.backbone,
        task: cfg.task,
        hyper: cfg.hyper,
    };
    let train_seed = seed_for(cfg, "train");
    let (data, base) = match cfg.task {
        Task::Graph => {
            let Dataset::Graphs(p) = cfg.dataset else {
                return Err(Error::UnsupportedCombination("graph task needs a graph collection".into()).at("data"));
            };
            let set = stage(
                "data",
                synth_graph_set(
                    p.count,
                    p.nodes_per_graph,
                    p.num_classes,
                    p.p_edge,
                    p.features,
                    p.signal,
                    seed_for(cfg, "data"),
                ),
            )?;
            let split = stage("split", split_ids(set.len(), cfg.split.ratio, cfg.split.mode, seed_for(cfg, "split")))?;
            let base = stage(
                "train",
                match cfg.method {
                    Method::Eraser => partition_graphs(&spec, &set, &split, cfg.shards, train_seed).map(Trained::Plan),
                    _ => spec.train_graphs(&set, &split, train_seed).map(Trained::Params),
                },
            )?;
            (Data::Set { set, split }, base)
        }
        Task::Node | Task::Link => {
            let g = stage(
                "data",
                match &cfg.dataset {
                    Dataset::Synthetic(p) => synth_sbm(p, seed_for(cfg, "data")),
                    Dataset::Dir(_) => load_dataset(&cfg.dataset_dir(data_dir).expect("directory dataset")),
                    Dataset::Graphs(_) => Err(Error::UnsupportedCombination("graph collection on single-graph task".into())),
                },
            )?;
            let clean_labels = g.labels().map(<[usize]>::to_vec);
            let data = stage("split", split_single(cfg, g, clean_labels))?;
            let base = stage(
                "train",
                match cfg.method {
                    Method::Eraser => {
                        partition(&spec, &data.train_graph, &data.split, cfg.shards, train_seed).map(Trained::Plan)
                    }
                    _ => spec.train(&data.train_graph, &data.split, train_seed).map(Trained::Params),
                },
            )?;
            (Data::Single(data), base)
        }
    };
    Ok(Prepared {
        cfg: cfg.clone(),
        spec,
        data,
        base,
        setup_seconds: start.elapsed().as_secs_f64(),
    })
}

fn split_single(cfg: &ExperimentConfig, g: Graph, clean_labels: Option<Vec<usize>>) -> Result<GraphData> {
    let split_seed = seed_for(cfg, "split");
    let (mut train_graph, split, eval_pos) = match cfg.task {
        Task::Node => {
            let split = split_dataset(&g, cfg.split.ratio, cfg.split.mode, split_seed)?;
            (g, split, Vec::new())
        }
        _ => {
            let edges = split_edges(&g, cfg.split.ratio, split_seed)?;
            let train_graph = g.without_edges(&edges.test);
            let split = DataSplit::all_train(g.node_count());
            (train_graph, split, edges.test)
        }
    };
    if let Some(p) = cfg.perturbation {
        train_graph = perturb(&train_graph, &split, p, seed_for(cfg, "perturb"))?.graph;
    }
    let mut poison_edges = Vec::new();
    if cfg.attacks.contains(&Attack::Poison) {
        let (poisoned, added) = poison(&train_graph, cfg.poison_ratio, seed_for(cfg, "poison"))?;
        train_graph = poisoned;
        poison_edges = added;
    }
    let eval_neg = if cfg.task == Task::Link {
        let mut exclude = eval_pos.clone();
        exclude.extend_from_slice(&poison_edges);
        sample_non_edges(&g_with(&train_graph, &eval_pos)?, eval_pos.len(), &exclude, seed_for(cfg, "eval"))?
    } else {
        Vec::new()
    };
    Ok(GraphData {
        train_graph,
        split,
        clean_labels,
        eval_pos,
        eval_neg,
        poison: poison_edges,
    })
}

/// `g` plus held-out edges, so negatives avoid both.
fn g_with(g: &Graph, extra: &[Edge]) -> Result<Graph> {
    if extra.is_empty() {
        Ok(g.clone())
    } else {
        g.with_extra_edges(extra)
    }
}

fn node_request(cfg: &ExperimentConfig, data: &GraphData, ratio: f64) -> Result<Option<UnlearnRequest>> {
    let r = if let Some(t) = &cfg.request.targets {
        make_request(cfg.request.kind, t.clone())?
    } else if cfg.attacks.contains(&Attack::Poison) {
        make_request(RequestKind::Edge, Targets::Edges(data.poison.clone()))?
    } else if ratio == 0.0 {
        return Ok(None);
    } else {
        match UnlearnRequest::sample(
            &data.train_graph,
            &data.split,
            cfg.request.kind,
            ratio,
            seed_for(cfg, "request"),
        ) {
            Err(Error::EmptyRequest) => return Ok(None),
            other => other?,
        }
    };
    let split = (r.kind() != RequestKind::Edge).then_some(&data.split);
    r.validate(&data.train_graph, split)?;
    Ok(Some(r))
}

/// Half of the training graphs, each with `ratio` of its nodes' feature
/// vectors zeroed.
fn graph_requests(cfg: &ExperimentConfig, set: &GraphSet, split: &DataSplit, ratio: f64) -> Result<Vec<(usize, UnlearnRequest)>> {
    if ratio == 0.0 {
        return Ok(Vec::new());
    }
    let mut rng = crate::seed::stage_rng(cfg.seed, "request");
    let n_train = split.train_ids.len();
    let mut picked = sample(&mut rng, n_train, n_train.div_ceil(2)).into_vec();
    picked.sort_unstable();
    let mut out = Vec::new();
    for i in picked {
        let gi = split.train_ids[i];
        let g = &set.graphs()[gi];
        let count = ((ratio * g.node_count() as f64).round() as usize).clamp(1, g.node_count());
        let mut nodes = sample(&mut rng, g.node_count(), count).into_vec();
        nodes.sort_unstable();
        let dims: Vec<usize> = (0..g.feature_dim()).collect();
        let targets = Targets::Features(nodes.into_iter().map(|v| (v, dims.clone())).collect());
        out.push((gi, make_request(RequestKind::Feature, targets)?));
    }
    Ok(out)
}

fn influence<T>(opts: &InfluenceOptions, run: impl FnMut(&InfluenceOptions) -> Result<T>) -> Result<T> {
    with_damping_retries(opts, DAMPING_RETRIES, run)
}

fn base_params(p: &Prepared) -> &ModelParams {
    match &p.base {
        Trained::Params(m) => m,
        _ => unreachable!("only the partition method keeps a shard plan"),
    }
}

fn unlearn_single(p: &Prepared, data: &GraphData, r: &UnlearnRequest) -> Result<(Trained, Graph)> {
    let cfg = &p.cfg;
    let g = &data.train_graph;
    let train_seed = seed_for(cfg, "train");
    let eval_graph = pruned_view(g, r)?;
    let model = match cfg.method {
        Method::Retrain => Trained::Params(retrain_oracle(&p.spec, g, &data.split, r, train_seed)?),
        Method::Eraser => match &p.base {
            Trained::Plan(plan) => Trained::Plan(eraser_unlearn(plan, g, r)?),
            _ => unreachable!("partition method trains a shard plan"),
        },
        Method::Gif => Trained::Params(influence(&cfg.influence, |o| {
            gif_unlearn(base_params(p), &p.spec, g, &data.split, r, train_seed, o)
        })?),
        Method::Ceu => Trained::Params(influence(&cfg.influence, |o| {
            ceu_unlearn(base_params(p), &p.spec, g, &data.split, r, train_seed, o)
        })?),
        Method::Gnndelete => Trained::Deletion(gnndelete_unlearn(
            base_params(p),
            g,
            &data.split,
            r,
            &cfg.gnndelete,
            seed_for(cfg, "unlearn"),
        )?),
        Method::Utu => return Ok((p.base.clone(), utu_graph(g, r)?)),
        Method::Projector => Trained::Params(projector_unlearn(base_params(p), g, &data.split, r)?),
    };
    Ok((model, eval_graph))
}

fn classification_metrics(preds: &[usize], labels: &[usize], out: &mut BTreeMap<String, f64>) -> Result<()> {
    out.insert("f1".into(), f1(preds, labels, Averaging::Micro)?);
    out.insert("f1_macro".into(), f1(preds, labels, Averaging::Macro)?);
    out.insert("accuracy".into(), accuracy(preds, labels)?);
    Ok(())
}

/// Runs one configuration end to end.
pub fn run_experiment(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<MetricsReport> {
    let prepared = prepare(cfg, data_dir)?;
    run_prepared(&prepared, cfg.request.ratio, None)
}

/// Unlearns at request ratio `ratio` on top of a prepared base model and
/// evaluates. Ratio 0 evaluates the base model itself.
pub fn run_prepared(p: &Prepared, ratio: f64, sweep: Option<&str>) -> Result<MetricsReport> {
    let start = Instant::now();
    let cfg = &p.cfg;
    let mut effective = cfg.clone();
    effective.request.ratio = ratio;
    stage("config", effective.validate())?;
    let mut metrics = BTreeMap::new();
    let mut attacks: Vec<AttackReport> = Vec::new();
    let (unlearn_seconds, peak_bytes, probe, primary) = match &p.data {
        Data::Single(data) => {
            let request = stage("request", node_request(&effective, data, ratio))?;
            let prof = profile(|| match &request {
                Some(r) => unlearn_single(p, data, r),
                None => Ok((p.base.clone(), data.train_graph.clone())),
            });
            let (model, eval_graph) = stage("unlearn", prof.result)?;
            let primary = stage("evaluate", evaluate_single(p, data, &model, &eval_graph, &mut metrics))?;
            for attack in &cfg.attacks {
                let report = stage("attack", run_attack(p, data, *attack, request.as_ref(), &model, &eval_graph))?;
                let key = match attack {
                    Attack::Mia => "mia_auc",
                    Attack::Poison => "auc_before",
                };
                metrics.insert(key.into(), report.auc);
                if let Some(after) = report.auc_after {
                    metrics.insert("auc_after".into(), after);
                }
                attacks.push(report);
            }
            (prof.wall_seconds, prof.peak_bytes, prof.probe, primary)
        }
        Data::Set { set, split } => {
            let requests = stage("request", graph_requests(&effective, set, split, ratio))?;
            let prof = profile(|| -> Result<(Trained, GraphSet)> {
                if requests.is_empty() {
                    return Ok((p.base.clone(), set.clone()));
                }
                let train_seed = seed_for(cfg, "train");
                let pruned = crate::unlearn::pruned_set(set, &requests)?;
                let model = match (&cfg.method, &p.base) {
                    (Method::Retrain, _) => Trained::Params(retrain_graphs(&p.spec, set, split, &requests, train_seed)?),
                    (Method::Eraser, Trained::Plan(plan)) => Trained::Plan(eraser_unlearn_graphs(plan, set, &requests)?),
                    (Method::Gif, Trained::Params(m)) => Trained::Params(influence(&cfg.influence, |o| {
                        gif_unlearn_graphs(m, &p.spec, set, split, &requests, o)
                    })?),
                    _ => return Err(Error::UnsupportedCombination(format!("{} on graph task", cfg.method.name()))),
                };
                Ok((model, pruned))
            });
            let (model, pruned) = stage("unlearn", prof.result)?;
            stage("evaluate", (|| -> Result<()> {
                let probs = model.graph_proba(&pruned, &split.test_ids)?;
                let labels: Vec<usize> = split.test_ids.iter().map(|&i| set.labels()[i]).collect();
                classification_metrics(&argmax_rows(&probs), &labels, &mut metrics)
            })())?;
            (prof.wall_seconds, prof.peak_bytes, prof.probe, "f1")
        }
    };
    Ok(MetricsReport {
        method: cfg.method.name().into(),
        backbone: cfg.backbone.kind.name().into(),
        task: cfg.task.name().into(),
        request: cfg.request.kind.name().into(),
        sweep: sweep.map(str::to_string),
        level: match sweep {
            Some(name) if name != "ratio" => cfg.perturbation.map_or(0.0, |x| x.level()),
            _ => ratio,
        },
        primary: primary.into(),
        metrics,
        attack: attacks,
        unlearn_seconds,
        total_seconds: p.setup_seconds + start.elapsed().as_secs_f64(),
        peak_bytes,
        memory_probe: probe,
        seed: cfg.seed,
        config_digest: effective.digest(),
    })
}

fn evaluate_single(
    p: &Prepared,
    data: &GraphData,
    model: &Trained,
    eval_graph: &Graph,
    metrics: &mut BTreeMap<String, f64>,
) -> Result<&'static str> {
    match p.cfg.task {
        Task::Node => {
            let labels = data.clean_labels.as_ref().ok_or(Error::MissingLabels)?;
            let test = &data.split.test_ids;
            if test.is_empty() {
                return Err(Error::EmptySet("test nodes"));
            }
            let probs = model.predict_proba(eval_graph)?.select(Axis(0), test);
            let truth: Vec<usize> = test.iter().map(|&v| labels[v]).collect();
            classification_metrics(&argmax_rows(&probs), &truth, metrics)?;
            Ok("f1")
        }
        _ => {
            let pos = model.score_edges(eval_graph, &data.eval_pos)?;
            let neg = model.score_edges(eval_graph, &data.eval_neg)?;
            metrics.insert("auc".into(), auc_groups(&pos, &neg)?);
            Ok("auc")
        }
    }
}

fn run_attack(
    p: &Prepared,
    data: &GraphData,
    attack: Attack,
    request: Option<&UnlearnRequest>,
    model: &Trained,
    eval_graph: &Graph,
) -> Result<AttackReport> {
    let seed = seed_for(&p.cfg, "attack");
    match attack {
        Attack::Mia => {
            let labels = data.clean_labels.as_ref().ok_or(Error::MissingLabels)?;
            let removed: &[usize] = request.map_or(&[], |r| r.nodes());
            let members: Vec<usize> = match p.cfg.mia_members {
                MiaMembers::Unlearned => removed.to_vec(),
                MiaMembers::Train => data.split.without(removed).train_ids,
            };
            // query on the graph the base model saw, so unlearned nodes keep
            // their neighborhoods and only the model differs
            let probs = model.predict_proba(&data.train_graph)?;
            mia_auc(&probs, labels, &members, &data.split.test_ids, seed)
        }
        Attack::Poison => {
            let before = |pairs: &[Edge]| p.base.score_edges(&data.train_graph, pairs);
            let after = |pairs: &[Edge]| model.score_edges(eval_graph, pairs);
            poison_recovery(before, after, &data.eval_pos, &data.eval_neg, data.poison.len(), seed)
        }
    }
}
