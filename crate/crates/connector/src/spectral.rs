//! HOPE: Katz-proximity matrix factorization into source/target embeddings.
//!
//! The proximity matrix is `S = (I - beta*A)^(-1) * beta*A`, computed by a
//! dense solve, then factorized with the in-repo SVD. Sized for graphs up
//! to a few thousand nodes.

use crate::error::{Error, Result};
use crate::graph::HomoGraph;
use crate::linalg::{solve_lu, spectral_radius_estimate, svd, DenseMatrix};

#[derive(Debug, Clone)]
pub struct KatzConfig {
    /// Decay; must satisfy `beta * rho(A) < 1`. `None` picks `0.5 / rho`.
    pub beta: Option<f64>,
    /// Target rank of the factorization.
    pub dim: usize,
}

fn adjacency_dense(g: &HomoGraph) -> DenseMatrix {
    let n = g.num_nodes();
    let mut a = DenseMatrix::zeros(n, n);
    for (u, v, w) in g.arcs() {
        a.set(u, v, a.get(u, v) + w);
    }
    a
}

/// Resolve the decay parameter, estimating the spectral radius with 100
/// power-iteration steps and rejecting divergent choices.
pub fn resolve_beta(g: &HomoGraph, beta: Option<f64>) -> Result<f64> {
    let a = adjacency_dense(g);
    let rho = spectral_radius_estimate(&a, 100);
    match beta {
        Some(b) => {
            if !b.is_finite() || b <= 0.0 {
                return Err(Error::usage("beta must be positive"));
            }
            if b * rho >= 1.0 {
                return Err(Error::usage(format!(
                    "beta {b} too large: beta * rho must be < 1 (estimated rho = {rho})"
                )));
            }
            Ok(b)
        }
        None => {
            if rho <= 0.0 {
                // Edgeless graph: any beta converges, S is zero anyway.
                Ok(0.5)
            } else {
                Ok(0.5 / rho)
            }
        }
    }
}

/// Katz proximity matrix `S = (I - beta*A)^(-1) * beta*A`.
pub fn katz_matrix(g: &HomoGraph, beta: f64) -> Result<DenseMatrix> {
    let n = g.num_nodes();
    let a = adjacency_dense(g);
    let rho = spectral_radius_estimate(&a, 100);
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::usage("beta must be positive"));
    }
    if beta * rho >= 1.0 {
        return Err(Error::usage(format!(
            "beta {beta} too large: beta * rho must be < 1 (estimated rho = {rho})"
        )));
    }
    let beta_a = a.scale(beta);
    let m = DenseMatrix::identity(n).sub(&beta_a);
    solve_lu(&m, &beta_a)
}

/// Top-`rank` singular triplets of a dense matrix.
pub fn truncated_svd(m: &DenseMatrix, rank: usize) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix)> {
    if rank > m.rows().min(m.cols()) {
        return Err(Error::usage(format!(
            "rank {rank} exceeds min(rows, cols) = {}",
            m.rows().min(m.cols())
        )));
    }
    if !m.is_finite() {
        return Err(Error::numeric("truncated_svd input has non-finite entries"));
    }
    let (u, s, v) = svd(m);
    let u_trunc = DenseMatrix::from_fn(u.rows(), rank, |i, j| u.get(i, j));
    let v_trunc = DenseMatrix::from_fn(v.rows(), rank, |i, j| v.get(i, j));
    Ok((u_trunc, s[..rank].to_vec(), v_trunc))
}

/// HOPE embedding: `S ~ U_s U_t^T` with `U_s = U sqrt(Sigma)` and
/// `U_t = V sqrt(Sigma)`, each `n x dim`.
pub fn hope_embed(g: &HomoGraph, cfg: &KatzConfig) -> Result<(DenseMatrix, DenseMatrix)> {
    if cfg.dim > g.num_nodes() {
        return Err(Error::usage(format!(
            "dim {} exceeds num_nodes {}",
            cfg.dim,
            g.num_nodes()
        )));
    }
    let beta = resolve_beta(g, cfg.beta)?;
    let s = katz_matrix(g, beta)?;
    let (u, sigma, v) = truncated_svd(&s, cfg.dim)?;
    let mut src = u;
    let mut tgt = v;
    for j in 0..cfg.dim {
        let root = sigma[j].max(0.0).sqrt();
        for i in 0..src.rows() {
            src.set(i, j, src.get(i, j) * root);
        }
        for i in 0..tgt.rows() {
            tgt.set(i, j, tgt.get(i, j) * root);
        }
    }
    Ok((src, tgt))
}
