use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::sparse::{mean_aggregator, normalized_adjacency, propagate, Csr};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Gcn,
    Sgc,
    /// GraphSAGE with mean aggregation.
    Sage,
}

impl BackboneKind {
    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::Gcn => "gcn",
            BackboneKind::Sgc => "sgc",
            BackboneKind::Sage => "sage",
        }
    }
}

/// Architecture: kind plus hop count `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Backbone {
    pub kind: BackboneKind,
    pub hops: usize,
}

impl Backbone {
    pub fn new(kind: BackboneKind, hops: usize) -> Self {
        Self { kind, hops }
    }

    /// Weight shapes for the given input, hidden and output widths.
    pub fn shapes(&self, in_dim: usize, hidden: usize, out_dim: usize) -> Vec<(usize, usize)> {
        match self.kind {
            BackboneKind::Sgc => vec![(in_dim, out_dim)],
            BackboneKind::Gcn | BackboneKind::Sage => {
                let layers = self.hops.max(1);
                let fan = if self.kind == BackboneKind::Sage { 2 } else { 1 };
                (0..layers)
                    .map(|k| {
                        let i = if k == 0 { in_dim } else { hidden };
                        let o = if k + 1 == layers { out_dim } else { hidden };
                        (fan * i, o)
                    })
                    .collect()
            }
        }
    }
}

/// Trained (or initialized) backbone weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub backbone: Backbone,
    pub weights: Vec<Array2<f64>>,
}

/// Graph inputs preprocessed for one backbone.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    kind: BackboneKind,
    hops: usize,
    /// Raw features, or `A^L X` for SGC.
    x: Array2<f64>,
    op: Option<Csr>,
    op_t: Option<Csr>,
}

impl PreparedGraph {
    pub fn new(g: &Graph, backbone: Backbone) -> Self {
        let (x, op, op_t) = match backbone.kind {
            BackboneKind::Sgc => {
                let a = normalized_adjacency(g);
                let x = propagate(g.features(), &a, backbone.hops).expect("operator matches graph");
                (x, None, None)
            }
            BackboneKind::Gcn => {
                let a = normalized_adjacency(g).csr().clone();
                (g.features().clone(), Some(a), None)
            }
            BackboneKind::Sage => {
                let m = mean_aggregator(g);
                let mt = m.transpose();
                (g.features().clone(), Some(m), Some(mt))
            }
        };
        Self {
            kind: backbone.kind,
            hops: backbone.hops,
            x,
            op,
            op_t,
        }
    }

    pub fn node_count(&self) -> usize {
        self.x.nrows()
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.x
    }

    fn ops(&self) -> (&Csr, &Csr) {
        let op = self.op.as_ref().expect("message-passing operator");
        (op, self.op_t.as_ref().unwrap_or(op))
    }
}

/// Per-layer deletion operators applied to masked rows after each layer.
pub(crate) struct DeletionHook<'a> {
    pub operators: Vec<Var>,
    pub masks: &'a [Vec<bool>],
}

/// Records the backbone forward pass on `tape` and returns the final layer.
pub(crate) fn forward_on_tape<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    backbone: Backbone,
    weights: &[Var],
    input: &'a PreparedGraph,
    hook: Option<&DeletionHook<'a>>,
) -> Var {
    let apply_hook = |tape: &mut Tape<'a, T>, h: Var, k: usize| -> Var {
        match hook {
            Some(hook) => {
                let d = tape.matmul(h, hook.operators[k]);
                tape.row_mix(h, d, &hook.masks[k])
            }
            None => h,
        }
    };
    let x = tape.leaf(input.x.mapv(T::from_f64));
    match backbone.kind {
        BackboneKind::Sgc => {
            let z = tape.matmul(x, weights[0]);
            apply_hook(tape, z, 0)
        }
        BackboneKind::Gcn => {
            let (op, _) = input.ops();
            let mut h = x;
            for (k, &w) in weights.iter().enumerate() {
                let hw = tape.matmul(h, w);
                let z = tape.sparse(op, op, hw);
                h = if k + 1 < weights.len() { tape.relu(z) } else { z };
                h = apply_hook(tape, h, k);
            }
            h
        }
        BackboneKind::Sage => {
            let (op, op_t) = input.ops();
            let mut h = x;
            for (k, &w) in weights.iter().enumerate() {
                let agg = tape.sparse(op, op_t, h);
                let cat = tape.concat_cols(h, agg);
                let z = tape.matmul(cat, w);
                h = if k + 1 < weights.len() { tape.relu(z) } else { z };
                h = apply_hook(tape, h, k);
            }
            h
        }
    }
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let total = row.sum();
        row /= total;
    }
    out
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows(scores: &Array2<f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

impl ModelParams {
    /// Glorot-uniform initialization, `U(-s, s)` with `s = sqrt(6 / (fan_in + fan_out))`.
    pub fn init(backbone: Backbone, in_dim: usize, hidden: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let weights = backbone
            .shapes(in_dim, hidden, out_dim)
            .into_iter()
            .map(|(r, c)| {
                let s = (6.0 / (r + c) as f64).sqrt();
                Array2::from_shape_simple_fn((r, c), || rng.random_range(-s..=s))
            })
            .collect();
        Self { backbone, weights }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            backbone: self.backbone,
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        let rows = self.weights[0].nrows();
        if self.backbone.kind == BackboneKind::Sage {
            rows / 2
        } else {
            rows
        }
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, |w| w.ncols())
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.weights.iter().flat_map(|w| w.iter().copied()).collect()
    }

    /// Same shapes, entries taken from `flat` in row-major order.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "flat vector has {} entries, model has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        let weights = self
            .weights
            .iter()
            .map(|w| {
                let len = w.len();
                let m = Array2::from_shape_vec(w.raw_dim(), flat[offset..offset + len].to_vec())
                    .expect("shape preserved");
                offset += len;
                m
            })
            .collect();
        Ok(Self {
            backbone: self.backbone,
            weights,
        })
    }

    fn check_input(&self, input: &PreparedGraph) -> Result<()> {
        if input.kind != self.backbone.kind || input.hops != self.backbone.hops {
            return Err(Error::ShapeMismatch(format!(
                "input prepared for {} (L={}), model is {} (L={})",
                input.kind.name(),
                input.hops,
                self.backbone.kind.name(),
                self.backbone.hops
            )));
        }
        if input.x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "feature width {} does not match first layer input {}",
                input.x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Final-layer outputs (logits or embeddings), one row per node.
    pub fn forward(&self, input: &PreparedGraph) -> Result<Array2<f64>> {
        self.check_input(input)?;
        let mut tape = Tape::<f64>::new();
        let ws: Vec<Var> = self.weights.iter().map(|w| tape.leaf(w.clone())).collect();
        let out = forward_on_tape(&mut tape, self.backbone, &ws, input, None);
        Ok(tape.value(out).clone())
    }

    pub fn forward_graph(&self, g: &Graph) -> Result<Array2<f64>> {
        self.forward(&PreparedGraph::new(g, self.backbone))
    }

    /// Class probabilities for every node of `g`.
    pub fn predict_proba(&self, g: &Graph) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.forward_graph(g)?))
    }

    pub fn predict(&self, g: &Graph) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward_graph(g)?))
    }

    /// Link probabilities `sigmoid(h_u . h_v)` from final embeddings.
    pub fn score_edges(&self, g: &Graph, pairs: &[Edge]) -> Result<Vec<f64>> {
        let h = self.forward_graph(g)?;
        score_pairs(&h, pairs)
    }

    /// Mean-pooled logits for one graph.
    pub fn graph_logits(&self, g: &Graph) -> Result<Vec<f64>> {
        let h = self.forward_graph(g)?;
        Ok(h.mean_axis(ndarray::Axis(0)).expect("nonempty graph").to_vec())
    }

    /// Serializes as `{backbone, L, shapes, weights}` with row-major arrays.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelDoc::from(self)).expect("finite weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        doc.try_into()
    }
}

pub fn score_pairs(h: &Array2<f64>, pairs: &[Edge]) -> Result<Vec<f64>> {
    let n = h.nrows();
    pairs
        .iter()
        .map(|&(u, v)| {
            for x in [u, v] {
                if x >= n {
                    return Err(Error::OutOfRange {
                        what: "nodes",
                        index: x,
                        len: n,
                    });
                }
            }
            Ok(h.row(u).dot(&h.row(v)).sigmoid())
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
pub(crate) struct ModelDoc {
    backbone: BackboneKind,
    #[serde(rename = "L")]
    hops: usize,
    shapes: Vec<(usize, usize)>,
    weights: Vec<Vec<f64>>,
}

impl From<&ModelParams> for ModelDoc {
    fn from(p: &ModelParams) -> Self {
        Self {
            backbone: p.backbone.kind,
            hops: p.backbone.hops,
            shapes: p.weights.iter().map(|w| w.dim()).collect(),
            weights: p.weights.iter().map(|w| w.iter().copied().collect()).collect(),
        }
    }
}

impl TryFrom<ModelDoc> for ModelParams {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        if doc.shapes.len() != doc.weights.len() {
            return Err(Error::Parse("shapes and weights differ in length".into()));
        }
        let weights = doc
            .shapes
            .iter()
            .zip(doc.weights)
            .map(|(&shape, data)| {
                Array2::from_shape_vec(shape, data).map_err(|e| Error::Parse(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        if weights.windows(2).any(|w| w[0].ncols() * if doc.backbone == BackboneKind::Sage { 2 } else { 1 } != w[1].nrows()) {
            return Err(Error::Parse("consecutive weight shapes are incompatible".into()));
        }
        if weights.iter().flat_map(|w| w.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model weights"));
        }
        Ok(ModelParams {
            backbone: Backbone::new(doc.backbone, doc.hops),
            weights,
        })
    }
}

impl Serialize for ModelParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelDoc::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        ModelDoc::deserialize(d)?.try_into().map_err(serde::de::Error::custom)
    }
}
