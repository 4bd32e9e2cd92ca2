//! SiNE-style signed network embedding from structural balance triplets.
//!
//! Each node should sit closer to its positive neighbors than to its
//! negative ones. Nodes with only one sign of neighbor are paired with a
//! virtual node (reserved id `num_nodes`) under a separate margin. The
//! similarity is the bilinear form f(a, b) = a.b; the margin-triplet
//! structure of the original model is kept, its deep similarity network is
//! not.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::{dot, EmbeddingTable};
use crate::error::{Error, Result};
use crate::graph::SignedGraph;

/// One structural balance constraint: `node` should be closer to `pos`
/// than to `neg`. Either partner (not both) may be the virtual node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BalanceTriplet {
    pub node: usize,
    pub pos: usize,
    pub neg: usize,
    pub uses_virtual: bool,
}

/// Triplets from a signed graph, symmetrizing directed input by default.
pub fn extract_balance_triplets(sg: &SignedGraph) -> Vec<BalanceTriplet> {
    extract_balance_triplets_with(sg, true)
}

/// As [`extract_balance_triplets`], with control over whether directed
/// arcs are mirrored before extraction.
pub fn extract_balance_triplets_with(sg: &SignedGraph, symmetrize: bool) -> Vec<BalanceTriplet> {
    let n = sg.base.num_nodes();
    let virtual_id = n;
    let mut pos: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut neg: Vec<Vec<usize>> = vec![Vec::new(); n];
    for u in 0..n {
        let (targets, signs) = sg.signed_neighbors(u);
        for (&v, &s) in targets.iter().zip(signs) {
            let bucket = if s == 1 { &mut pos } else { &mut neg };
            bucket[u].push(v);
            if symmetrize && sg.base.is_directed() && u != v {
                let bucket = if s == 1 { &mut pos } else { &mut neg };
                bucket[v].push(u);
            }
        }
    }
    let mut out = Vec::new();
    for u in 0..n {
        match (pos[u].is_empty(), neg[u].is_empty()) {
            (false, false) => {
                for &p in &pos[u] {
                    for &q in &neg[u] {
                        out.push(BalanceTriplet { node: u, pos: p, neg: q, uses_virtual: false });
                    }
                }
            }
            (false, true) => {
                for &p in &pos[u] {
                    out.push(BalanceTriplet {
                        node: u,
                        pos: p,
                        neg: virtual_id,
                        uses_virtual: true,
                    });
                }
            }
            (true, false) => {
                for &q in &neg[u] {
                    out.push(BalanceTriplet {
                        node: u,
                        pos: virtual_id,
                        neg: q,
                        uses_virtual: true,
                    });
                }
            }
            (true, true) => {}
        }
    }
    out
}

/// Hinge loss of one triplet: max(0, f(u,n) + delta' - f(u,p)) with
/// delta' = delta0 when the triplet uses the virtual node, else delta.
pub fn sine_loss(
    x_u: &[f64],
    x_p: &[f64],
    x_n: &[f64],
    delta: f64,
    delta0: f64,
    uses_virtual: bool,
) -> f64 {
    let margin = if uses_virtual { delta0 } else { delta };
    (dot(x_u, x_n) + margin - dot(x_u, x_p)).max(0.0)
}

/// Loss plus subgradients for the three vectors (zero when the hinge is
/// inactive).
pub fn sine_loss_grads(
    x_u: &[f64],
    x_p: &[f64],
    x_n: &[f64],
    delta: f64,
    delta0: f64,
    uses_virtual: bool,
) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let loss = sine_loss(x_u, x_p, x_n, delta, delta0, uses_virtual);
    if loss <= 0.0 {
        let z = vec![0.0; x_u.len()];
        return (loss, z.clone(), z.clone(), z);
    }
    let g_u: Vec<f64> = x_n.iter().zip(x_p).map(|(n, p)| n - p).collect();
    let g_p: Vec<f64> = x_u.iter().map(|u| -u).collect();
    let g_n: Vec<f64> = x_u.to_vec();
    (loss, g_u, g_p, g_n)
}

#[derive(Debug, Clone)]
pub struct SineConfig {
    pub dim: usize,
    pub delta: f64,
    pub delta0: f64,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Mirror directed arcs before extracting triplets.
    pub symmetrize: bool,
}

impl Default for SineConfig {
    fn default() -> Self {
        SineConfig {
            dim: 64,
            delta: 1.0,
            delta0: 0.5,
            lambda: 1e-4,
            lr: 0.01,
            epochs: 20,
            seed: 42,
            symmetrize: true,
        }
    }
}

/// Train on shuffled triplets with per-triplet SGD. The Frobenius penalty
/// is applied as a proximal shrink `x / (1 + 2 lr lambda)` on the rows a
/// triplet touches, which stays stable for any lambda. Returns rows for
/// all nodes plus the trailing virtual row, and the per-epoch objective.
pub fn train_sine(sg: &SignedGraph, cfg: &SineConfig) -> Result<(EmbeddingTable, Vec<f64>)> {
    if cfg.dim < 1 {
        return Err(Error::usage("dim must be >= 1"));
    }
    if !(cfg.delta.is_finite() && cfg.delta > 0.0 && cfg.delta0.is_finite() && cfg.delta0 > 0.0) {
        return Err(Error::usage("margins must be positive"));
    }
    if cfg.lambda < 0.0 {
        return Err(Error::usage("lambda must be non-negative"));
    }
    let triplets = extract_balance_triplets_with(sg, cfg.symmetrize);
    if triplets.is_empty() {
        return Err(Error::data(
            "signed graph yields no balance triplets (no signed edges)",
        ));
    }
    let n = sg.base.num_nodes();
    let rows = n + 1;
    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = vec![0.0f64; rows * dim];
    for v in x.iter_mut() {
        *v = (rng.gen::<f64>() - 0.5) / dim as f64;
    }

    let shrink = 1.0 / (1.0 + 2.0 * cfg.lr * cfg.lambda);
    let mut trajectory = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    for _ in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut hinge_sum = 0.0;
        for &ti in &order {
            let t = triplets[ti];
            let (loss, g_u, g_p, g_n) = {
                let xu = &x[t.node * dim..(t.node + 1) * dim];
                let xp = &x[t.pos * dim..(t.pos + 1) * dim];
                let xn = &x[t.neg * dim..(t.neg + 1) * dim];
                sine_loss_grads(xu, xp, xn, cfg.delta, cfg.delta0, t.uses_virtual)
            };
            hinge_sum += loss;
            if loss > 0.0 {
                for j in 0..dim {
                    x[t.node * dim + j] -= cfg.lr * g_u[j];
                    x[t.pos * dim + j] -= cfg.lr * g_p[j];
                    x[t.neg * dim + j] -= cfg.lr * g_n[j];
                }
            }
            if cfg.lambda > 0.0 {
                for &row in &[t.node, t.pos, t.neg] {
                    for j in 0..dim {
                        x[row * dim + j] *= shrink;
                    }
                }
            }
        }
        let frob_sq: f64 = x.iter().map(|v| v * v).sum();
        let objective = (hinge_sum + cfg.lambda * frob_sq) / triplets.len() as f64;
        if !objective.is_finite() {
            return Err(Error::numeric("sine training produced a non-finite loss"));
        }
        trajectory.push(objective);
    }
    let table = EmbeddingTable::set_matrices(dim, x, vec![0.0; rows * dim]);
    Ok((table, trajectory))
}
