//! CSR sparse matrix plus the GCN-style symmetric adjacency normalization.

use crate::error::{Error, Result};
use crate::graph::HomoGraph;
use crate::linalg::DenseMatrix;

/// CSR sparse matrix with `f64` values.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut offsets = vec![0usize; rows + 1];
        for &(r, _, _) in &entries {
            offsets[r + 1] += 1;
        }
        for i in 0..rows {
            offsets[i + 1] += offsets[i];
        }
        SparseMatrix {
            rows,
            cols,
            offsets,
            indices: entries.iter().map(|&(_, c, _)| c).collect(),
            values: entries.iter().map(|&(_, _, v)| v).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.offsets[i];
        let hi = self.offsets[i + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut entries = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                entries.push((j, i, v));
            }
        }
        SparseMatrix::from_triplets(self.cols, self.rows, entries)
    }

    /// Sparse x dense product.
    pub fn matmul_dense(&self, m: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, m.rows(), "spmm shape mismatch");
        let mut out = DenseMatrix::zeros(self.rows, m.cols());
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                let src = m.row(j);
                let dst = out.row_mut(i);
                for (k, &s) in src.iter().enumerate() {
                    dst[k] += v * s;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (idx, vals) = self.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                d.set(i, j, d.get(i, j) + v);
            }
        }
        d
    }
}

/// Symmetrically normalized adjacency with added self-loops:
/// `D^(-1/2) (A + I) D^(-1/2)` where `D` is the degree matrix of `A + I`.
pub fn normalized_adjacency(g: &HomoGraph) -> Result<SparseMatrix> {
    if g.is_directed() {
        return Err(Error::usage(
            "normalized_adjacency requires an undirected graph",
        ));
    }
    let n = g.num_nodes();
    // Degrees of A + I, counting weights.
    let mut deg = vec![1.0; n];
    for u in 0..n {
        for (_, w) in g.nbrs(u).iter() {
            deg[u] += w;
        }
    }
    let mut entries = Vec::with_capacity(g.num_arcs() + n);
    for u in 0..n {
        entries.push((u, u, 1.0 / (deg[u].sqrt() * deg[u].sqrt())));
        for (v, w) in g.nbrs(u).iter() {
            entries.push((u, v, w / (deg[u].sqrt() * deg[v].sqrt())));
        }
    }
    Ok(SparseMatrix::from_triplets(n, n, entries))
}
