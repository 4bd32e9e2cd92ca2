//! Struc2Vec multilayer context graph and walks.
//!
//! Layer `k` compares, for each node pair, the sorted degree sequences of
//! the rings at hop distance `k` via dynamic time warping with element
//! cost `max(a,b)/min(a,b) - 1`; distances accumulate across layers. The
//! construction is exact (no approximation), sized for graphs up to about
//! a thousand nodes.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{HomoGraph, NodeId};
use crate::walks::{schedule, run_schedule, TokenSpace, WalkConfig, WalkCorpus};

#[derive(Debug, Clone)]
struct Layer {
    /// Accumulated structural distance f_k(u, v), flattened n*n.
    /// NaN marks pairs undefined at this layer.
    dist: Vec<f64>,
    /// Average in-layer edge weight over defined unordered pairs.
    avg_weight: f64,
    /// Per node: count of incident in-layer edges heavier than average.
    gamma: Vec<usize>,
}

/// Multilayer structural context: per-layer pairwise distances plus the
/// cross-layer weights that drive the walker.
#[derive(Debug, Clone)]
pub struct StrucContext {
    n: usize,
    k_max: usize,
    layers: Vec<Layer>,
}

impl StrucContext {
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Number of materialized layers (some may hold no defined pairs).
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Accumulated distance f_k(u, v), if both nodes reach layer k.
    pub fn distance(&self, k: usize, u: NodeId, v: NodeId) -> Option<f64> {
        let d = *self.layers.get(k)?.dist.get(u * self.n + v)?;
        if d.is_nan() {
            None
        } else {
            Some(d)
        }
    }

    /// In-layer edge weight w_k(u, v) = exp(-f_k(u, v)).
    pub fn weight(&self, k: usize, u: NodeId, v: NodeId) -> Option<f64> {
        self.distance(k, u, v).map(|d| (-d).exp())
    }

    /// Whether node `u` has at least one in-layer partner at layer `k`.
    pub fn has_layer(&self, u: NodeId, k: usize) -> bool {
        match self.layers.get(k) {
            None => false,
            Some(layer) => (0..self.n)
                .any(|v| v != u && !layer.dist[u * self.n + v].is_nan()),
        }
    }

    /// Weight of the edge from (u, k) up to (u, k+1): ln(gamma_k(u) + e).
    pub fn up_weight(&self, u: NodeId, k: usize) -> f64 {
        let gamma = self.layers[k].gamma[u];
        (gamma as f64 + std::f64::consts::E).ln()
    }

    /// Weight of the edge from (u, k) down to (u, k-1).
    pub fn down_weight(&self, _u: NodeId, _k: usize) -> f64 {
        1.0
    }

    pub fn layer_average_weight(&self, k: usize) -> f64 {
        self.layers[k].avg_weight
    }
}

/// DTW with element cost max(a,b)/min(a,b) - 1 over sorted sequences.
/// Degree zero (isolated nodes) is penalized by the raw partner degree.
fn dtw(a: &[usize], b: &[usize]) -> f64 {
    debug_assert!(!a.is_empty() && !b.is_empty());
    let cost = |x: usize, y: usize| -> f64 {
        let (lo, hi) = if x < y { (x, y) } else { (y, x) };
        if lo == 0 {
            hi as f64
        } else {
            hi as f64 / lo as f64 - 1.0
        }
    };
    let (la, lb) = (a.len(), b.len());
    let mut dp = vec![f64::INFINITY; (la + 1) * (lb + 1)];
    dp[0] = 0.0;
    let idx = |i: usize, j: usize| i * (lb + 1) + j;
    for i in 1..=la {
        for j in 1..=lb {
            let c = cost(a[i - 1], b[j - 1]);
            let best = dp[idx(i - 1, j)]
                .min(dp[idx(i, j - 1)])
                .min(dp[idx(i - 1, j - 1)]);
            dp[idx(i, j)] = c + best;
        }
    }
    dp[idx(la, lb)]
}

/// Sorted degree sequences of the rings at hop distances 0..=k_max.
fn rings(g: &HomoGraph, k_max: usize) -> Vec<Vec<Vec<usize>>> {
    let n = g.num_nodes();
    let degrees: Vec<usize> = (0..n).map(|u| g.degree(u)).collect();
    (0..n)
        .map(|src| {
            let mut dist = vec![usize::MAX; n];
            let mut queue = VecDeque::new();
            dist[src] = 0;
            queue.push_back(src);
            while let Some(u) = queue.pop_front() {
                if dist[u] >= k_max {
                    continue;
                }
                for &v in g.nbrs(u).targets {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            let mut by_ring: Vec<Vec<usize>> = vec![Vec::new(); k_max + 1];
            for v in 0..n {
                if dist[v] <= k_max {
                    by_ring[dist[v]].push(degrees[v]);
                }
            }
            for ring in &mut by_ring {
                ring.sort_unstable();
            }
            by_ring
        })
        .collect()
}

/// Build the struc2vec context for all node pairs and layers `0..=k_max`.
pub fn struc2vec_context(g: &HomoGraph, k_max: usize) -> Result<StrucContext> {
    let n = g.num_nodes();
    if n == 0 {
        return Err(Error::usage("cannot build a structural context for an empty graph"));
    }
    let node_rings = rings(g, k_max);
    let mut layers: Vec<Layer> = Vec::with_capacity(k_max + 1);

    for k in 0..=k_max {
        let mut dist = vec![f64::NAN; n * n];
        for u in 0..n {
            dist[u * n + u] = 0.0;
            for v in u + 1..n {
                let prev = if k == 0 {
                    Some(0.0)
                } else {
                    let d = layers[k - 1].dist[u * n + v];
                    if d.is_nan() {
                        None
                    } else {
                        Some(d)
                    }
                };
                let (ru, rv) = (&node_rings[u][k], &node_rings[v][k]);
                if let Some(base) = prev {
                    if !ru.is_empty() && !rv.is_empty() {
                        let d = base + dtw(ru, rv);
                        dist[u * n + v] = d;
                        dist[v * n + u] = d;
                    }
                }
            }
        }
        // Layer statistics for the cross-layer weights.
        let mut sum = 0.0;
        let mut count = 0usize;
        for u in 0..n {
            for v in u + 1..n {
                let d = dist[u * n + v];
                if !d.is_nan() {
                    sum += (-d).exp();
                    count += 1;
                }
            }
        }
        let avg_weight = if count > 0 { sum / count as f64 } else { 0.0 };
        let gamma: Vec<usize> = (0..n)
            .map(|u| {
                (0..n)
                    .filter(|&v| {
                        v != u && {
                            let d = dist[u * n + v];
                            !d.is_nan() && (-d).exp() > avg_weight
                        }
                    })
                    .count()
            })
            .collect();
        layers.push(Layer { dist, avg_weight, gamma });
    }
    Ok(StrucContext { n, k_max, layers })
}

/// Walks over the multilayer context graph. With probability `stay_prob`
/// the walker steps inside the current layer (weights w_k); otherwise it
/// moves up or down a layer (weights ln(gamma + e) and 1) without emitting
/// a token. Emitted tokens are original node ids.
pub fn struc2vec_walks(
    ctx: &StrucContext,
    cfg: &WalkConfig,
    stay_prob: f64,
) -> Result<WalkCorpus> {
    if !(stay_prob > 0.0 && stay_prob < 1.0) {
        return Err(Error::usage("stay_prob must lie strictly between 0 and 1"));
    }
    if cfg.walk_length < 1 {
        return Err(Error::usage("walk_length must be >= 1"));
    }
    let n = ctx.num_nodes();
    let starts: Vec<NodeId> = (0..n).collect();
    let sched = schedule(&starts, cfg.walks_per_node, cfg.seed);
    let walks = run_schedule(&sched, cfg.threads, cfg.seed, |start, rng| {
        let mut walk = Vec::with_capacity(cfg.walk_length);
        walk.push(start);
        let mut cur = start;
        let mut layer = 0usize;
        while walk.len() < cfg.walk_length {
            let mut in_layer = rng.gen::<f64>() < stay_prob;
            if !in_layer {
                let up = if ctx.has_layer(cur, layer + 1) {
                    ctx.up_weight(cur, layer)
                } else {
                    0.0
                };
                let down = if layer > 0 { ctx.down_weight(cur, layer) } else { 0.0 };
                let total = up + down;
                if total > 0.0 {
                    if rng.gen::<f64>() * total < up {
                        layer += 1;
                    } else {
                        layer -= 1;
                    }
                    continue;
                }
                // No layer to move to; the draw degenerates to an
                // in-layer step.
                in_layer = true;
            }
            if in_layer {
                let mut weights = Vec::with_capacity(n.saturating_sub(1));
                let mut candidates = Vec::with_capacity(n.saturating_sub(1));
                for v in 0..n {
                    if v != cur {
                        if let Some(w) = ctx.weight(layer, cur, v) {
                            weights.push(w);
                            candidates.push(v);
                        }
                    }
                }
                let total: f64 = weights.iter().sum();
                if total <= 0.0 {
                    break;
                }
                let mut x = rng.gen::<f64>() * total;
                let mut chosen = candidates.len() - 1;
                for (i, &w) in weights.iter().enumerate() {
                    x -= w;
                    if x <= 0.0 {
                        chosen = i;
                        break;
                    }
                }
                cur = candidates[chosen];
                walk.push(cur);
            }
        }
        walk
    });
    Ok(WalkCorpus { walks, token_space: TokenSpace::GraphNodes })
}
