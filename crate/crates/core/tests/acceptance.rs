//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.

use std::time::{Duration, Instant};

use graphforget::gnn::{
    normalized_adjacency, propagate, Backbone, BackboneKind, Hyper, ModelParams, Objective, Task,
};
use graphforget::graph::{
    build_graph, make_request, split_dataset, synth_sbm, DataSplit, Graph, Perturbation, RequestKind,
    SbmParams, SplitMode, Targets,
};
use graphforget::harness::{emit_report, parse_config, read_reports, run_experiment, sweep_perturbation};
use graphforget::metrics::{accuracy, auc, f1, profile, Averaging, CountingAlloc};
use graphforget::unlearn::{
    ceu_unlearn, eraser_unlearn, gif_unlearn, partition, projector_unlearn, pruned_view, retrain_oracle,
    with_damping_retries, InfluenceOptions, TrainSpec,
};
use graphforget::Result;
use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn dist(a: &ModelParams, b: &ModelParams) -> f64 {
    a.to_flat()
        .iter()
        .zip(b.to_flat())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn small_instance(seed: u64) -> Graph {
    let p = SbmParams {
        n: 20,
        num_classes: 3,
        p_in: 0.4,
        p_out: 0.05,
        features: 6,
        signal: 1.0,
    };
    synth_sbm(&p, seed).unwrap()
}

fn gradient_checks() -> Result<Outcome> {
    let mut worst_rel = 0.0f64;
    let mut worst_sym = 0.0f64;
    let h = 1e-5;
    for seed in 0..3u64 {
        let g = small_instance(seed);
        let rows: Vec<usize> = (0..14).collect();
        for kind in [BackboneKind::Gcn, BackboneKind::Sgc, BackboneKind::Sage] {
            let b = Backbone::new(kind, 2);
            let objectives = [
                (Objective::node(&g, b, &rows, 5e-3)?, 3),
                (Objective::link(&g, b, g.edges(), seed, 5e-3)?, 4),
            ];
            for (obj, out) in objectives {
                let p = ModelParams::init(b, 6, 5, out, seed + 10);
                let grad = obj.grad(&p)?;
                let flat = p.to_flat();
                for i in 0..flat.len() {
                    let mut plus = flat.clone();
                    plus[i] += h;
                    let mut minus = flat.clone();
                    minus[i] -= h;
                    let fd = (obj.loss(&p.with_flat(&plus)?)? - obj.loss(&p.with_flat(&minus)?)?) / (2.0 * h);
                    let scale = grad[i].abs().max(fd.abs());
                    // coordinates with an (exactly or numerically) zero gradient
                    if scale > 1e-8 {
                        worst_rel = worst_rel.max((grad[i] - fd).abs() / scale);
                    }
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = p.num_params();
                let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let sym = (dot(&u, &obj.hvp(&p, &v)?) - dot(&v, &obj.hvp(&p, &u)?)).abs();
                worst_sym = worst_sym.max(sym);
            }
        }
    }
    outcome(
        worst_rel <= 1e-3 && worst_sym <= 1e-7,
        format!("max grad rel err {worst_rel:.2e}, max hvp asymmetry {worst_sym:.2e}"),
    )
}

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

fn metric_oracles() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut auc_err = 0.0f64;
    let mut f1_err = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..80);
        let levels = rng.random_range(2..20);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        auc_err = auc_err.max((auc(&scores, &labels)? - pairwise_auc(&scores, &labels)).abs());

        let m = rng.random_range(1..120);
        let classes = rng.random_range(2..7);
        let y: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
        let p: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
        f1_err = f1_err.max((f1(&p, &y, Averaging::Micro)? - accuracy(&p, &y)?).abs());
    }
    outcome(
        auc_err <= 1e-12 && f1_err <= 1e-12,
        format!("max |auc - pairwise| {auc_err:.1e}, max |microF1 - acc| {f1_err:.1e}"),
    )
}

fn node_config(method: &str, extra: &str) -> String {
    format!(r#"{{"method":"{method}","task":"node","seed":7{extra}}}"#)
}

fn retained_reasoning() -> Result<Outcome> {
    let base = run_experiment(&parse_config(&node_config("retrain", r#","request":{"ratio":0.0}"#))?, None)?;
    let base_f1 = base.metrics["f1"];
    let oracle = run_experiment(&parse_config(&node_config("retrain", ""))?, None)?;
    let oracle_f1 = oracle.metrics["f1"];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for method in ["eraser", "gif", "gnndelete", "utu", "projector"] {
        let r = run_experiment(&parse_config(&node_config(method, ""))?, None)?;
        let gap = (r.metrics["f1"] - oracle_f1).abs();
        worst = worst.max(gap);
        parts.push(format!("{method} {:.3}", r.metrics["f1"]));
    }
    outcome(
        base_f1 >= 0.85 && worst <= 0.10,
        format!(
            "base F1 {base_f1:.3}, oracle {oracle_f1:.3}, {}; max gap {worst:.3}",
            parts.join(", ")
        ),
    )
}

/// Edgeless graph with SGC (L = 0) is L2-regularized logistic regression.
fn logistic_instance(seed: u64) -> (Graph, TrainSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, f) = (200, 10);
    let w: Vec<f64> = (0..f).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = Array2::from_shape_simple_fn((n, f), || rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = x
        .rows()
        .into_iter()
        .map(|r| {
            let s: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum();
            usize::from(s + rng.random_range(-0.5..0.5) > 0.0)
        })
        .collect();
    let g = build_graph(x, Some(labels), &[]).unwrap().0;
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
    (g, spec)
}

fn link_instance(seed: u64) -> (Graph, TrainSpec) {
    let p = SbmParams {
        n: 100,
        num_classes: 2,
        p_in: 0.12,
        p_out: 0.01,
        features: 8,
        signal: 1.5,
    };
    let spec = TrainSpec {
        backbone: Backbone::new(BackboneKind::Sgc, 1),
        task: Task::Link,
        hyper: Hyper {
            lr: 0.5,
            epochs: 1500,
            weight_decay: 1e-2,
            hidden: 4,
        },
    };
    (synth_sbm(&p, seed).unwrap(), spec)
}

fn influence_fidelity() -> Result<Outcome> {
    let opts = InfluenceOptions::default();
    let mut gif_wins = 0;
    let mut ceu_wins = 0;
    for seed in 0..10u64 {
        let (g, spec) = logistic_instance(100 + seed);
        let split = DataSplit::all_train(g.node_count());
        let model = spec.train(&g, &split, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes: Vec<usize> = rand::seq::index::sample(&mut rng, g.node_count(), 5).into_vec();
        nodes.sort_unstable();
        let r = make_request(RequestKind::Node, Targets::Nodes(nodes))?;
        let oracle = retrain_oracle(&spec, &g, &split, &r, seed)?;
        let gif = with_damping_retries(&opts, 4, |o| gif_unlearn(&model, &spec, &g, &split, &r, seed, o))?;
        gif_wins += usize::from(dist(&gif, &oracle) < dist(&model, &oracle));

        let (g, spec) = link_instance(200 + seed);
        let split = DataSplit::all_train(g.node_count());
        let model = spec.train(&g, &split, seed)?;
        let picks = rand::seq::index::sample(&mut rng, g.edge_count(), 5).into_vec();
        let edges = picks.iter().map(|&i| g.edges()[i]).collect();
        let r = make_request(RequestKind::Edge, Targets::Edges(edges))?;
        let oracle = retrain_oracle(&spec, &g, &split, &r, seed)?;
        let ceu = with_damping_retries(&opts, 4, |o| ceu_unlearn(&model, &spec, &g, &split, &r, seed, o))?;
        ceu_wins += usize::from(dist(&ceu, &oracle) < dist(&model, &oracle));
    }
    outcome(
        gif_wins >= 9 && ceu_wins >= 9,
        format!("gif closer in {gif_wins}/10 seeds, ceu closer in {ceu_wins}/10 seeds"),
    )
}

fn forgetting_audit() -> Result<Outcome> {
    let cfg = parse_config(&node_config("retrain", r#","attacks":["mia"]"#))?;
    let oracle_auc = run_experiment(&cfg, None)?.metrics["mia_auc"];
    let overfit = parse_config(
        r#"{"method":"retrain","task":"node","seed":7,"attacks":["mia"],"mia_members":"train",
            "dataset":{"synthetic":{"features":256}},
            "backbone":{"kind":"sage","hops":2},
            "hyper":{"epochs":500,"weight_decay":0.0,"hidden":64,"lr":0.2},
            "request":{"ratio":0.0}}"#,
    )?;
    let overfit_auc = run_experiment(&overfit, None)?.metrics["mia_auc"];
    outcome(
        (0.40..=0.60).contains(&oracle_auc) && overfit_auc >= 0.55,
        format!("oracle unlearned-vs-test AUC {oracle_auc:.3}, overfit train-vs-test AUC {overfit_auc:.3}"),
    )
}

fn poison_recovery_check() -> Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for method in ["retrain", "eraser", "gif", "utu"] {
        let cfg = parse_config(&format!(
            r#"{{"method":"{method}","task":"link","seed":7,"attacks":["poison"],"request":{{"kind":"edge"}},
                "dataset":{{"synthetic":{{"signal":1.0}}}}}}"#
        ))?;
        let r = run_experiment(&cfg, None)?;
        let (before, after) = (r.metrics["auc_before"], r.metrics["auc_after"]);
        pass &= after >= before;
        parts.push(format!("{method} {before:.3}->{after:.3}"));
    }
    outcome(pass, parts.join(", "))
}

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    xs[xs.len() / 2]
}

fn partition_efficiency() -> Result<Outcome> {
    let g = synth_sbm(
        &SbmParams {
            n: 1000,
            ..SbmParams::default()
        },
        7,
    )?;
    let split = split_dataset(&g, 0.8, SplitMode::Transductive, 7)?;
    let spec = TrainSpec {
        backbone: Backbone::new(BackboneKind::Gcn, 2),
        task: Task::Node,
        hyper: Hyper::default(),
    };
    let plan = partition(&spec, &g, &split, 8, 7)?;
    let target = plan.members(3)[0];
    let r = make_request(RequestKind::Node, Targets::Nodes(vec![target]))?;
    let mut full = Vec::new();
    let mut unlearn = Vec::new();
    let mut after = None;
    for _ in 0..3 {
        let t = Instant::now();
        spec.train(&g, &split, 7)?;
        full.push(t.elapsed());
        let t = Instant::now();
        after = Some(eraser_unlearn(&plan, &g, &r)?);
        unlearn.push(t.elapsed());
    }
    let after = after.unwrap();
    let identical = (0..8)
        .filter(|&s| s != 3)
        .all(|s| plan.models[s].to_json() == after.models[s].to_json());
    let (full, unlearn) = (median(full), median(unlearn));
    let ratio = unlearn.as_secs_f64() / full.as_secs_f64();
    outcome(
        ratio <= 0.5 && identical,
        format!(
            "unlearn {:.3}s vs full retrain {:.3}s (ratio {ratio:.2}), other 7 shards byte-identical: {identical}",
            unlearn.as_secs_f64(),
            full.as_secs_f64()
        ),
    )
}

fn projector_exactness() -> Result<Outcome> {
    // more feature dimensions than retained training nodes, so the retained
    // span has a non-trivial orthogonal complement
    let g = synth_sbm(
        &SbmParams {
            n: 60,
            features: 64,
            ..SbmParams::default()
        },
        3,
    )?;
    let split = split_dataset(&g, 0.5, SplitMode::Transductive, 3)?;
    let spec = TrainSpec {
        backbone: Backbone::new(BackboneKind::Sgc, 2),
        task: Task::Node,
        hyper: Hyper::default(),
    };
    let model = spec.train(&g, &split, 3)?;
    let r = make_request(RequestKind::Node, Targets::Nodes(split.train_ids[..6].to_vec()))?;
    let projected = projector_unlearn(&model, &g, &split, &r)?;
    let again = projector_unlearn(&projected, &g, &split, &r)?;
    let idem = (&projected.weights[0] - &again.weights[0])
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()));

    let pruned = pruned_view(&g, &r)?;
    let retained = split.without(r.nodes());
    let f = propagate(pruned.features(), &normalized_adjacency(&pruned), 2)?.select(Axis(0), &retained.train_ids);
    let m = DMatrix::from_fn(f.nrows(), f.ncols(), |i, j| f[[i, j]]);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.unwrap();
    let smax = svd.singular_values.max();
    let basis: Vec<Array1<f64>> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-10 * smax)
        .map(|i| Array1::from_iter(v_t.row(i).iter().copied()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut v = Array1::from_shape_simple_fn(f.ncols(), || rng.random_range(-1.0..1.0));
        for q in &basis {
            let c = v.dot(q);
            v.scaled_add(-c, q);
        }
        let norm = v.dot(&v).sqrt();
        v /= norm;
        let out = v.dot(&projected.weights[0]);
        worst = worst.max(out.dot(&out).sqrt());
    }
    outcome(
        worst <= 1e-6 && idem <= 1e-10,
        format!(
            "span rank {} of {}, max |v^T W'| {worst:.1e}, re-projection change {idem:.1e}",
            basis.len(),
            f.ncols()
        ),
    )
}

fn robustness() -> Result<Outcome> {
    let levels = [0.0, 0.2, 0.4, 0.8];
    let mut pass = true;
    let mut parts = Vec::new();
    for method in ["retrain", "gif"] {
        let cfg = parse_config(&node_config(method, ""))?;
        let reports = sweep_perturbation(&cfg, Perturbation::LabelNoise(0.0), &levels, None)?;
        let f1s: Vec<f64> = reports.iter().map(|r| r.metrics["f1"]).collect();
        pass &= f1s[0] - f1s[3] >= 0.3;
        parts.push(format!("{method} {f1s:.2?}"));
    }
    outcome(pass, parts.join(", "))
}

fn determinism() -> Result<Outcome> {
    let mut pass = true;
    let mut lines = 0;
    for method in ["gif", "eraser", "gnndelete"] {
        let cfg = parse_config(&node_config(method, r#","attacks":["mia"]"#))?;
        let mut runs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            emit_report(&[run_experiment(&cfg, None)?], dir.path())?;
            runs.push(read_reports(dir.path())?);
        }
        for (a, b) in runs[0].iter().zip(&runs[1]) {
            pass &= a.deterministic_json() == b.deterministic_json() && a.config_digest == b.config_digest;
            lines += 1;
        }
    }
    outcome(pass, format!("{lines} report pairs compared"))
}

type Check = fn() -> Result<Outcome>;

fn main() {
    let criteria: [(&str, Check, Option<u64>); 10] = [
        ("gradient and Hessian checks", gradient_checks, Some(10)),
        ("metric oracles", metric_oracles, Some(10)),
        ("retained-data reasoning", retained_reasoning, Some(120)),
        ("influence fidelity", influence_fidelity, Some(60)),
        ("forgetting audit", forgetting_audit, Some(120)),
        ("poison recovery", poison_recovery_check, Some(180)),
        ("partition efficiency", partition_efficiency, None),
        ("projector exactness", projector_exactness, None),
        ("label-noise robustness", robustness, Some(300)),
        ("determinism", determinism, None),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let run = profile(check);
        let secs = run.wall_seconds;
        let (pass, detail) = match run.result {
            Ok(o) => (o.pass && limit.is_none_or(|l| secs < l as f64), o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let limit = limit.map_or(String::new(), |l| format!(" (limit {l}s)"));
        println!(
            "criterion {:>2} {}: {name}: {detail}; {secs:.2}s{limit}, peak {:.1} MiB",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            run.peak_bytes as f64 / (1024.0 * 1024.0)
        );
        failed += usize::from(!pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
