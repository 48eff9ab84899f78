use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Compressed sparse rows with ascending column order in each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Csr {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds from per-row `(col, value)` lists already sorted by column.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in &rows {
            for &(c, v) in row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.indices[span.clone()].binary_search(&j) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> Csr {
        let mut rows = vec![Vec::new(); self.cols];
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                rows[j].push((i, v));
            }
        }
        Csr::from_rows(self.rows, rows)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// `self * x` for any scalar type.
    pub fn mul_dense<T: Scalar>(&self, x: ArrayView2<T>) -> Array2<T> {
        assert_eq!(self.cols, x.nrows(), "sparse-dense product shape");
        let mut out = Array2::<T>::zeros((self.rows, x.ncols()));
        for (i, mut out_row) in out.rows_mut().into_iter().enumerate() {
            for (j, v) in self.row(i) {
                out_row.scaled_add(T::from_f64(v), &x.row(j));
            }
        }
        out
    }
}

/// Symmetrically normalized adjacency with self-loops, `D^-1/2 (A + I) D^-1/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationOperator(Csr);

impl PropagationOperator {
    pub fn csr(&self) -> &Csr {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.rows
    }
}

pub fn normalized_adjacency(g: &Graph) -> PropagationOperator {
    let adj = g.neighbors();
    let deg: Vec<f64> = adj.iter().map(|nb| (nb.len() + 1) as f64).collect();
    let rows = adj
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            let mut cols: Vec<usize> = nb.clone();
            let pos = cols.binary_search(&i).unwrap_err();
            cols.insert(pos, i);
            cols.into_iter()
                .map(|j| (j, 1.0 / (deg[i] * deg[j]).sqrt()))
                .collect()
        })
        .collect();
    PropagationOperator(Csr::from_rows(g.node_count(), rows))
}

/// Row-stochastic neighbor mean without self-loops; isolated rows are empty.
pub fn mean_aggregator(g: &Graph) -> Csr {
    let rows = g
        .neighbors()
        .into_iter()
        .map(|nb| {
            let w = 1.0 / nb.len().max(1) as f64;
            nb.into_iter().map(|j| (j, w)).collect()
        })
        .collect();
    Csr::from_rows(g.node_count(), rows)
}

/// `op^hops * x` by repeated sparse products.
pub fn propagate(x: &Array2<f64>, op: &PropagationOperator, hops: usize) -> Result<Array2<f64>> {
    if x.nrows() != op.size() {
        return Err(Error::ShapeMismatch(format!(
            "features have {} rows, operator has {}",
            x.nrows(),
            op.size()
        )));
    }
    let mut h = x.clone();
    for _ in 0..hops {
        h = op.0.mul_dense(h.view());
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, synth_sbm, SbmParams};
    use ndarray::array;

    #[test]
    fn isolated_node_is_one() {
        let (g, _) = build_graph(array![[2.0]], None, &[]).unwrap();
        assert_eq!(normalized_adjacency(&g).csr().to_dense(), array![[1.0]]);
    }

    #[test]
    fn single_edge_is_half_everywhere() {
        let (g, _) = build_graph(Array2::eye(2), None, &[(0, 1)]).unwrap();
        // degrees with self-loops are 2, so every entry is 1/sqrt(2*2)
        assert_eq!(normalized_adjacency(&g).csr().to_dense(), array![[0.5, 0.5], [0.5, 0.5]]);
        let h = propagate(g.features(), &normalized_adjacency(&g), 1).unwrap();
        assert_eq!(h, array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn symmetric_with_entries_in_unit_interval() {
        let g = synth_sbm(&SbmParams { n: 40, ..Default::default() }, 1).unwrap();
        let a = normalized_adjacency(&g).csr().to_dense();
        assert_eq!(a, a.t());
        assert!(a.iter().all(|&x| x == 0.0 || (x > 0.0 && x <= 1.0)));
        let op = normalized_adjacency(&g);
        assert_eq!(op.csr().nnz(), 2 * g.edge_count() + g.node_count());
    }

    #[test]
    fn zero_hops_and_edgeless_are_identity() {
        let g = synth_sbm(&SbmParams { n: 12, ..Default::default() }, 2).unwrap();
        let op = normalized_adjacency(&g);
        assert_eq!(&propagate(g.features(), &op, 0).unwrap(), g.features());
        let (bare, _) = build_graph(g.features().clone(), None, &[]).unwrap();
        let op = normalized_adjacency(&bare);
        assert_eq!(&propagate(bare.features(), &op, 3).unwrap(), bare.features());
    }

    #[test]
    fn shape_mismatch() {
        let (g, _) = build_graph(Array2::eye(2), None, &[(0, 1)]).unwrap();
        let op = normalized_adjacency(&g);
        assert!(propagate(&Array2::zeros((3, 1)), &op, 1).is_err());
    }

    #[test]
    fn mean_aggregator_rows() {
        let (g, _) = build_graph(Array2::eye(3), None, &[(0, 1), (0, 2)]).unwrap();
        let m = mean_aggregator(&g).to_dense();
        assert_eq!(m, array![[0.0, 0.5, 0.5], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(mean_aggregator(&g).transpose().to_dense(), m.t());
    }
}
