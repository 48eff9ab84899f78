//! Minimal reverse-mode differentiation over dense matrices.
//!
//! Only the handful of operations the backbones and losses need are
//! supported. Every loss node produces a 1x1 matrix.

use ndarray::{concatenate, s, Array2, Axis};

use super::scalar::Scalar;
use super::sparse::Csr;
use crate::graph::Edge;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<'a> {
    Leaf,
    MatMul(usize, usize),
    /// Holds the transpose of the forward operator.
    Sparse {
        bwd: &'a Csr,
        a: usize,
    },
    Relu(usize),
    Add(usize, usize),
    ConcatCols(usize, usize),
    /// Row `v` comes from `alt` when `mask[v]`, else from `base`.
    RowMix {
        base: usize,
        alt: usize,
        mask: &'a [bool],
    },
    MeanRows(usize),
    StackRows(Vec<usize>),
    SoftmaxXent {
        logits: usize,
        rows: &'a [usize],
        labels: &'a [usize],
        scale: f64,
    },
    PairBce {
        emb: usize,
        pairs: &'a [Edge],
        targets: &'a [f64],
        scale: f64,
    },
    PairMse {
        emb: usize,
        pairs: &'a [Edge],
        targets: &'a [f64],
        scale: f64,
    },
    RowSqDist {
        a: usize,
        rows: &'a [usize],
        target: &'a Array2<f64>,
        scale: f64,
    },
    SumSq {
        a: usize,
        scale: f64,
    },
    Sum(Vec<usize>),
}

struct Node<'a, T> {
    value: Array2<T>,
    op: Op<'a>,
}

pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
}

fn scalar<T: Scalar>(x: T) -> Array2<T> {
    Array2::from_elem((1, 1), x)
}

fn softmax_row<T: Scalar>(row: ndarray::ArrayView1<T>) -> Vec<T> {
    let max = row.iter().map(|x| x.re()).fold(f64::NEG_INFINITY, f64::max);
    let shift = T::from_f64(max);
    let exps: Vec<T> = row.iter().map(|&x| (x - shift).exp()).collect();
    let mut total = T::zero();
    for &e in &exps {
        total += e;
    }
    exps.into_iter().map(|e| e / total).collect()
}

fn dot<T: Scalar>(a: ndarray::ArrayView1<T>, b: ndarray::ArrayView1<T>) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        acc += x * y;
    }
    acc
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<T>, op: Op<'a>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a.0, b.0))
    }

    /// `fwd * a`; `bwd` must be the transpose of `fwd`.
    pub fn sparse(&mut self, fwd: &'a Csr, bwd: &'a Csr, a: Var) -> Var {
        let value = fwd.mul_dense(self.value(a).view());
        self.push(value, Op::Sparse { bwd, a: a.0 })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(Scalar::relu);
        self.push(value, Op::Relu(a.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a.0, b.0))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts agree");
        self.push(value, Op::ConcatCols(a.0, b.0))
    }

    pub fn row_mix(&mut self, base: Var, alt: Var, mask: &'a [bool]) -> Var {
        let mut value = self.value(base).clone();
        let alt_v = self.value(alt);
        for (v, &m) in mask.iter().enumerate() {
            if m {
                value.row_mut(v).assign(&alt_v.row(v));
            }
        }
        self.push(value, Op::RowMix { base: base.0, alt: alt.0, mask })
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let inv = T::from_f64(1.0 / x.nrows() as f64);
        let value = x.sum_axis(Axis(0)).insert_axis(Axis(0)) * inv;
        self.push(value, Op::MeanRows(a.0))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("column counts agree");
        self.push(value, Op::StackRows(parts.iter().map(|p| p.0).collect()))
    }

    /// `scale * sum_i CE(softmax(logits[rows[i]]), labels[i])`.
    pub fn softmax_xent(&mut self, logits: Var, rows: &'a [usize], labels: &'a [usize], scale: f64) -> Var {
        let z = self.value(logits);
        let mut total = T::zero();
        for (&r, &y) in rows.iter().zip(labels) {
            let row = z.row(r);
            let max = row.iter().map(|x| x.re()).fold(f64::NEG_INFINITY, f64::max);
            let shift = T::from_f64(max);
            let mut sum = T::zero();
            for &x in row.iter() {
                sum += (x - shift).exp();
            }
            total += sum.ln() + shift - row[y];
        }
        let value = scalar(total * T::from_f64(scale));
        self.push(
            value,
            Op::SoftmaxXent {
                logits: logits.0,
                rows,
                labels,
                scale,
            },
        )
    }

    /// `scale * sum_i BCE(sigmoid(h_u . h_v), t_i)` in logit form.
    pub fn pair_bce(&mut self, emb: Var, pairs: &'a [Edge], targets: &'a [f64], scale: f64) -> Var {
        let h = self.value(emb);
        let mut total = T::zero();
        for (&(u, v), &t) in pairs.iter().zip(targets) {
            let s = dot(h.row(u), h.row(v));
            total += s.softplus() - s * T::from_f64(t);
        }
        let value = scalar(total * T::from_f64(scale));
        self.push(
            value,
            Op::PairBce {
                emb: emb.0,
                pairs,
                targets,
                scale,
            },
        )
    }

    /// `scale * sum_i (sigmoid(h_u . h_v) - t_i)^2`.
    pub fn pair_mse(&mut self, emb: Var, pairs: &'a [Edge], targets: &'a [f64], scale: f64) -> Var {
        let h = self.value(emb);
        let mut total = T::zero();
        for (&(u, v), &t) in pairs.iter().zip(targets) {
            let d = dot(h.row(u), h.row(v)).sigmoid() - T::from_f64(t);
            total += d * d;
        }
        let value = scalar(total * T::from_f64(scale));
        self.push(
            value,
            Op::PairMse {
                emb: emb.0,
                pairs,
                targets,
                scale,
            },
        )
    }

    /// `scale * sum_i ||a[rows[i]] - target[i]||^2`.
    pub fn row_sq_dist(&mut self, a: Var, rows: &'a [usize], target: &'a Array2<f64>, scale: f64) -> Var {
        let x = self.value(a);
        let mut total = T::zero();
        for (i, &r) in rows.iter().enumerate() {
            for (&xv, &tv) in x.row(r).iter().zip(target.row(i)) {
                let d = xv - T::from_f64(tv);
                total += d * d;
            }
        }
        let value = scalar(total * T::from_f64(scale));
        self.push(
            value,
            Op::RowSqDist {
                a: a.0,
                rows,
                target,
                scale,
            },
        )
    }

    /// `scale * sum(a^2)`.
    pub fn sum_sq(&mut self, a: Var, scale: f64) -> Var {
        let mut total = T::zero();
        for &x in self.value(a).iter() {
            total += x * x;
        }
        self.push(scalar(total * T::from_f64(scale)), Op::SumSq { a: a.0, scale })
    }

    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut total = T::zero();
        for p in parts {
            total += self.value(*p)[[0, 0]];
        }
        self.push(scalar(total), Op::Sum(parts.iter().map(|p| p.0).collect()))
    }

    /// Gradients of the 1x1 node `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(scalar(T::one()));
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let mut acc = |target: usize, delta: Array2<T>| match &mut grads[target] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    acc(*a, g.dot(&bv.t()));
                    acc(*b, av.t().dot(&g));
                }
                Op::Sparse { bwd, a } => acc(*a, bwd.mul_dense(g.view())),
                Op::Relu(a) => {
                    let mut d = g.clone();
                    for (dv, x) in d.iter_mut().zip(self.nodes[*a].value.iter()) {
                        if x.re() <= 0.0 {
                            *dv = T::zero();
                        }
                    }
                    acc(*a, d);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::ConcatCols(a, b) => {
                    let split = self.nodes[*a].value.ncols();
                    acc(*a, g.slice(s![.., ..split]).to_owned());
                    acc(*b, g.slice(s![.., split..]).to_owned());
                }
                Op::RowMix { base, alt, mask } => {
                    let mut to_base = g.clone();
                    let mut to_alt = Array2::zeros(g.raw_dim());
                    for (v, &m) in mask.iter().enumerate() {
                        if m {
                            to_alt.row_mut(v).assign(&g.row(v));
                            to_base.row_mut(v).fill(T::zero());
                        }
                    }
                    acc(*base, to_base);
                    acc(*alt, to_alt);
                }
                Op::MeanRows(a) => {
                    let n = self.nodes[*a].value.nrows();
                    let row = g.row(0).to_owned() * T::from_f64(1.0 / n as f64);
                    let d = row
                        .broadcast((n, row.len()))
                        .expect("broadcast mean gradient")
                        .to_owned();
                    acc(*a, d);
                }
                Op::StackRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.nodes[p].value.nrows();
                        acc(p, g.slice(s![start..start + rows, ..]).to_owned());
                        start += rows;
                    }
                }
                Op::SoftmaxXent {
                    logits,
                    rows,
                    labels,
                    scale,
                } => {
                    let z = &self.nodes[*logits].value;
                    let coef = g[[0, 0]] * T::from_f64(*scale);
                    let mut d = Array2::zeros(z.raw_dim());
                    for (&r, &y) in rows.iter().zip(labels.iter()) {
                        let p = softmax_row(z.row(r));
                        let mut drow = d.row_mut(r);
                        for (k, pk) in p.into_iter().enumerate() {
                            let t = if k == y { T::one() } else { T::zero() };
                            drow[k] += coef * (pk - t);
                        }
                    }
                    acc(*logits, d);
                }
                Op::PairBce {
                    emb,
                    pairs,
                    targets,
                    scale,
                } => {
                    let h = &self.nodes[*emb].value;
                    let coef = g[[0, 0]] * T::from_f64(*scale);
                    let mut d = Array2::zeros(h.raw_dim());
                    for (&(u, v), &t) in pairs.iter().zip(targets.iter()) {
                        let s = dot(h.row(u), h.row(v));
                        let w = coef * (s.sigmoid() - T::from_f64(t));
                        d.row_mut(u).scaled_add(w, &h.row(v));
                        d.row_mut(v).scaled_add(w, &h.row(u));
                    }
                    acc(*emb, d);
                }
                Op::PairMse {
                    emb,
                    pairs,
                    targets,
                    scale,
                } => {
                    let h = &self.nodes[*emb].value;
                    let coef = g[[0, 0]] * T::from_f64(*scale);
                    let mut d = Array2::zeros(h.raw_dim());
                    let two = T::from_f64(2.0);
                    for (&(u, v), &t) in pairs.iter().zip(targets.iter()) {
                        let sig = dot(h.row(u), h.row(v)).sigmoid();
                        let w = coef * two * (sig - T::from_f64(t)) * sig * (T::one() - sig);
                        d.row_mut(u).scaled_add(w, &h.row(v));
                        d.row_mut(v).scaled_add(w, &h.row(u));
                    }
                    acc(*emb, d);
                }
                Op::RowSqDist {
                    a,
                    rows,
                    target,
                    scale,
                } => {
                    let x = &self.nodes[*a].value;
                    let coef = g[[0, 0]] * T::from_f64(2.0 * scale);
                    let mut d = Array2::zeros(x.raw_dim());
                    for (i, &r) in rows.iter().enumerate() {
                        for ((dv, &xv), &tv) in d.row_mut(r).iter_mut().zip(x.row(r)).zip(target.row(i)) {
                            *dv += coef * (xv - T::from_f64(tv));
                        }
                    }
                    acc(*a, d);
                }
                Op::SumSq { a, scale } => {
                    let coef = g[[0, 0]] * T::from_f64(2.0 * scale);
                    acc(*a, &self.nodes[*a].value * coef);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        acc(p, g.clone());
                    }
                }
            }
        }
        Gradients { grads }
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; zeros of `shape` when `v` did not reach the output.
    pub fn take(&mut self, v: Var, shape: (usize, usize)) -> Array2<T> {
        self.grads[v.0].take().unwrap_or_else(|| Array2::zeros(shape))
    }
}
