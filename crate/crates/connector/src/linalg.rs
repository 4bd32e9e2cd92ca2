//! Dense matrix kernels used by the spectral, gnn and eval modules.
//!
//! Everything here is plain row-major `f64` at desk scale; no BLAS, no
//! unsafe. The SVD is a one-sided Jacobi, accurate enough for the
//! reconstruction tolerances the factorization models need.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        DenseMatrix { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DenseMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let out_row = out.row_mut(i);
                for (j, &b) in orow.iter().enumerate() {
                    out_row[j] += a * b;
                }
            }
        }
        out
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a + b)
            .collect();
        DenseMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a - b)
            .collect();
        DenseMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        let data = self.data.iter().map(|a| a * s).collect();
        DenseMatrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Solve `A X = B` by LU factorization with partial pivoting. `B` may carry
/// multiple right-hand sides as columns.
pub fn solve_lu(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::usage("solve_lu: matrix must be square"));
    }
    if b.rows() != n {
        return Err(Error::usage("solve_lu: rhs row count mismatch"));
    }
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();

    for k in 0..n {
        let mut pivot = k;
        let mut max = lu.get(k, k).abs();
        for i in k + 1..n {
            let v = lu.get(i, k).abs();
            if v > max {
                max = v;
                pivot = i;
            }
        }
        if max < 1e-300 {
            return Err(Error::numeric("solve_lu: singular matrix"));
        }
        if pivot != k {
            for j in 0..n {
                let tmp = lu.get(k, j);
                lu.set(k, j, lu.get(pivot, j));
                lu.set(pivot, j, tmp);
            }
            perm.swap(k, pivot);
        }
        let d = lu.get(k, k);
        for i in k + 1..n {
            let factor = lu.get(i, k) / d;
            lu.set(i, k, factor);
            for j in k + 1..n {
                let v = lu.get(i, j) - factor * lu.get(k, j);
                lu.set(i, j, v);
            }
        }
    }

    let nrhs = b.cols();
    let mut x = DenseMatrix::zeros(n, nrhs);
    for c in 0..nrhs {
        // Forward substitution on the permuted rhs.
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b.get(perm[i], c);
            for j in 0..i {
                s -= lu.get(i, j) * y[j];
            }
            y[i] = s;
        }
        // Back substitution.
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= lu.get(i, j) * x.get(j, c);
            }
            x.set(i, c, s / lu.get(i, i));
        }
    }
    Ok(x)
}

/// Estimate the spectral radius of a square matrix with a fixed number of
/// power-iteration steps, starting from the all-ones direction.
pub fn spectral_radius_estimate(a: &DenseMatrix, steps: usize) -> f64 {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    if n == 0 {
        return 0.0;
    }
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut radius = 0.0;
    for _ in 0..steps {
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = a.row(i);
            let mut s = 0.0;
            for (j, &v) in row.iter().enumerate() {
                s += v * x[j];
            }
            y[i] = s;
        }
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return 0.0;
        }
        radius = norm;
        for v in &mut y {
            *v /= norm;
        }
        x = y;
    }
    radius
}

/// Full SVD `M = U diag(sigma) V^T` via one-sided Jacobi.
///
/// Singular values come back sorted descending. Columns of `U` matching a
/// zero singular value are left as zero vectors.
pub fn svd(m: &DenseMatrix) -> (DenseMatrix, Vec<f64>, DenseMatrix) {
    // One-sided Jacobi orthogonalizes columns, so work on the tall side.
    if m.rows() < m.cols() {
        let (u, s, v) = svd(&m.transpose());
        return (v, s, u);
    }
    let rows = m.rows();
    let cols = m.cols();
    let mut w = m.clone();
    let mut v = DenseMatrix::identity(cols);

    let max_sweeps = 60;
    let tol = 1e-14;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..cols.saturating_sub(1) {
            for q in p + 1..cols {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..rows {
                    let wp = w.get(i, p);
                    let wq = w.get(i, q);
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let wp = w.get(i, p);
                    let wq = w.get(i, q);
                    w.set(i, p, c * wp - s * wq);
                    w.set(i, q, s * wp + c * wq);
                }
                for i in 0..cols {
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<f64> = (0..cols)
        .map(|j| (0..rows).map(|i| w.get(i, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut u = DenseMatrix::zeros(rows, cols);
    let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);
    for j in 0..cols {
        if sigma[j] > sigma_max * 1e-300 && sigma[j] > 0.0 {
            for i in 0..rows {
                u.set(i, j, w.get(i, j) / sigma[j]);
            }
        } else {
            sigma[j] = 0.0;
        }
    }

    // Sort singular triplets descending.
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap());
    let sigma_sorted: Vec<f64> = order.iter().map(|&j| sigma[j]).collect();
    let mut u_sorted = DenseMatrix::zeros(rows, cols);
    let mut v_sorted = DenseMatrix::zeros(cols, cols);
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..rows {
            u_sorted.set(i, new_j, u.get(i, old_j));
        }
        for i in 0..cols {
            v_sorted.set(i, new_j, v.get(i, old_j));
        }
    }
    (u_sorted, sigma_sorted, v_sorted)
}
