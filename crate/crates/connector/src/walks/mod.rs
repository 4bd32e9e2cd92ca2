//! Random-walk corpus generation for DeepWalk, Node2Vec, Metapath2Vec and
//! Struc2Vec.
//!
//! Every walk owns an rng seeded from the run seed xor the walk's index in
//! the generation schedule, so the corpus is identical no matter how many
//! worker threads are used. Walks truncate at sink nodes (no restart).

mod struc2vec;

pub use struc2vec::{struc2vec_context, struc2vec_walks, StrucContext};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{AliasTable, HeteroGraph, HomoGraph, NodeId};

/// Walk generation parameters. `p` and `q` are the node2vec return and
/// in-out parameters; uniform walks ignore them.
#[derive(Debug, Clone)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    /// Number of nodes per walk (the start node counts).
    pub walk_length: usize,
    pub p: f64,
    pub q: f64,
    pub seed: u64,
    /// Worker threads; the corpus content does not depend on this.
    pub threads: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walks_per_node: 10,
            walk_length: 40,
            p: 1.0,
            q: 1.0,
            seed: 42,
            threads: 1,
        }
    }
}

impl WalkConfig {
    fn validate(&self) -> Result<()> {
        if self.walk_length < 1 {
            return Err(Error::usage("walk_length must be >= 1"));
        }
        if !(self.p.is_finite() && self.p > 0.0 && self.q.is_finite() && self.q > 0.0) {
            return Err(Error::usage("p and q must be positive"));
        }
        Ok(())
    }
}

/// Id space the corpus tokens live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenSpace {
    GraphNodes,
    ContextGraphNodes,
}

/// Sequences of node tokens consumed by the skip-gram trainer.
#[derive(Debug, Clone)]
pub struct WalkCorpus {
    pub walks: Vec<Vec<NodeId>>,
    pub token_space: TokenSpace,
}

impl WalkCorpus {
    pub fn num_tokens(&self) -> usize {
        self.walks.iter().map(|w| w.len()).sum()
    }
}

/// Start-node schedule: `walks_per_node` passes over all start nodes, each
/// pass in a freshly shuffled order.
fn schedule(starts: &[NodeId], walks_per_node: usize, seed: u64) -> Vec<NodeId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(starts.len() * walks_per_node);
    let mut pass: Vec<NodeId> = starts.to_vec();
    for _ in 0..walks_per_node {
        pass.shuffle(&mut rng);
        out.extend_from_slice(&pass);
    }
    out
}

fn walk_rng(seed: u64, walk_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ walk_index as u64)
}

/// Run one generator per scheduled walk, optionally across threads. The
/// output ordering follows the schedule regardless of thread count.
fn run_schedule<F>(schedule: &[NodeId], threads: usize, seed: u64, gen: F) -> Vec<Vec<NodeId>>
where
    F: Fn(NodeId, &mut ChaCha8Rng) -> Vec<NodeId> + Sync,
{
    let total = schedule.len();
    if threads <= 1 || total < 2 {
        return schedule
            .iter()
            .enumerate()
            .map(|(i, &s)| gen(s, &mut walk_rng(seed, i)))
            .collect();
    }
    let workers = threads.min(total);
    let chunk = total.div_ceil(workers);
    let mut out: Vec<Vec<NodeId>> = Vec::with_capacity(total);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(total);
            if lo >= hi {
                break;
            }
            let gen = &gen;
            handles.push(scope.spawn(move || {
                schedule[lo..hi]
                    .iter()
                    .enumerate()
                    .map(|(k, &s)| gen(s, &mut walk_rng(seed, lo + k)))
                    .collect::<Vec<_>>()
            }));
        }
        for h in handles {
            out.extend(h.join().expect("walk worker panicked"));
        }
    });
    out
}

/// Exact first-order transition distribution out of `v`: uniform over
/// neighbors, or weight-proportional on weighted graphs. Probabilities are
/// aligned with the CSR neighbor slice.
pub fn uniform_transition(g: &HomoGraph, v: NodeId) -> Vec<f64> {
    let nbrs = g.nbrs(v);
    let total: f64 = nbrs.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return vec![0.0; nbrs.len()];
    }
    nbrs.iter().map(|(_, w)| w / total).collect()
}

/// Exact node2vec second-order transition distribution for the step
/// (prev `t`, current `v`), aligned with the CSR neighbor slice of `v`.
/// The unnormalized weight toward `x` is `w(v,x) * bias` with bias `1/p`
/// if `x == t`, `1` if `x` neighbors `t`, `1/q` otherwise.
pub fn node2vec_transition(g: &HomoGraph, t: NodeId, v: NodeId, p: f64, q: f64) -> Vec<f64> {
    let nbrs = g.nbrs(v);
    let mut weights: Vec<f64> = nbrs
        .iter()
        .map(|(x, w)| {
            let bias = if x == t {
                1.0 / p
            } else if g.has_edge(t, x) {
                1.0
            } else {
                1.0 / q
            };
            w * bias
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        for w in &mut weights {
            *w /= total;
        }
    }
    weights
}

fn sample_cumulative(weights: &[f64], rng: &mut impl Rng) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut x = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        x -= w;
        if x <= 0.0 {
            return Some(i);
        }
    }
    Some(weights.len() - 1)
}

/// Per-node alias tables for weight-proportional first-order steps.
fn weighted_samplers(g: &HomoGraph) -> Vec<Option<AliasTable>> {
    (0..g.num_nodes())
        .map(|u| {
            let nbrs = g.nbrs(u);
            if nbrs.is_empty() {
                return None;
            }
            let w: Vec<f64> = nbrs.iter().map(|(_, w)| w).collect();
            AliasTable::build(&w).ok()
        })
        .collect()
}

fn first_order_step(
    g: &HomoGraph,
    samplers: &[Option<AliasTable>],
    u: NodeId,
    rng: &mut impl Rng,
) -> Option<NodeId> {
    let nbrs = g.nbrs(u);
    if nbrs.is_empty() {
        return None;
    }
    if g.is_weighted() {
        samplers[u].as_ref().map(|t| nbrs.targets[t.draw(rng)])
    } else {
        Some(nbrs.targets[rng.gen_range(0..nbrs.len())])
    }
}

/// First-order (DeepWalk-style) walks.
///
/// ```
/// use connector::graph::HomoGraph;
/// use connector::walks::{uniform_walks, WalkConfig};
///
/// let g = HomoGraph::build(&[(0, 1), (1, 2), (2, 0)], 3, false)?;
/// let cfg = WalkConfig { walks_per_node: 4, walk_length: 10, ..Default::default() };
/// let corpus = uniform_walks(&g, &cfg)?;
/// assert_eq!(corpus.walks.len(), 12);
/// # Ok::<(), connector::Error>(())
/// ```
pub fn uniform_walks(g: &HomoGraph, cfg: &WalkConfig) -> Result<WalkCorpus> {
    cfg.validate()?;
    if g.num_nodes() == 0 {
        return Err(Error::usage("cannot walk an empty graph"));
    }
    let starts: Vec<NodeId> = (0..g.num_nodes()).collect();
    let sched = schedule(&starts, cfg.walks_per_node, cfg.seed);
    let samplers = weighted_samplers(g);
    let walks = run_schedule(&sched, cfg.threads, cfg.seed, |start, rng| {
        let mut walk = Vec::with_capacity(cfg.walk_length);
        walk.push(start);
        let mut cur = start;
        while walk.len() < cfg.walk_length {
            match first_order_step(g, &samplers, cur, rng) {
                Some(next) => {
                    walk.push(next);
                    cur = next;
                }
                None => break,
            }
        }
        walk
    });
    Ok(WalkCorpus { walks, token_space: TokenSpace::GraphNodes })
}

/// Second-order biased walks (node2vec). With `p == q == 1` the step
/// distribution reduces exactly to the first-order one.
pub fn node2vec_walks(g: &HomoGraph, cfg: &WalkConfig) -> Result<WalkCorpus> {
    cfg.validate()?;
    if g.num_nodes() == 0 {
        return Err(Error::usage("cannot walk an empty graph"));
    }
    let starts: Vec<NodeId> = (0..g.num_nodes()).collect();
    let sched = schedule(&starts, cfg.walks_per_node, cfg.seed);
    let samplers = weighted_samplers(g);
    let walks = run_schedule(&sched, cfg.threads, cfg.seed, |start, rng| {
        let mut walk = Vec::with_capacity(cfg.walk_length);
        walk.push(start);
        if cfg.walk_length == 1 {
            return walk;
        }
        let mut prev = start;
        let mut cur = match first_order_step(g, &samplers, start, rng) {
            Some(next) => {
                walk.push(next);
                next
            }
            None => return walk,
        };
        while walk.len() < cfg.walk_length {
            let nbrs = g.nbrs(cur);
            if nbrs.is_empty() {
                break;
            }
            let weights: Vec<f64> = nbrs
                .iter()
                .map(|(x, w)| {
                    let bias = if x == prev {
                        1.0 / cfg.p
                    } else if g.has_edge(prev, x) {
                        1.0
                    } else {
                        1.0 / cfg.q
                    };
                    w * bias
                })
                .collect();
            match sample_cumulative(&weights, rng) {
                Some(k) => {
                    let next = nbrs.targets[k];
                    walk.push(next);
                    prev = cur;
                    cur = next;
                }
                None => break,
            }
        }
        walk
    });
    Ok(WalkCorpus { walks, token_space: TokenSpace::GraphNodes })
}

/// Metapath-guided walks over a heterogeneous graph. The metapath is a
/// cyclic type sequence (first == last); each step picks uniformly among
/// neighbors of the next type in the cycle and truncates when none exists.
pub fn metapath_walks(
    hg: &HeteroGraph,
    metapath: &[usize],
    cfg: &WalkConfig,
) -> Result<WalkCorpus> {
    cfg.validate()?;
    if metapath.len() < 2 {
        return Err(Error::usage("metapath needs at least two positions"));
    }
    if metapath.first() != metapath.last() {
        return Err(Error::usage(
            "metapath must begin and end with the same type so it can cycle",
        ));
    }
    for &ty in metapath {
        if ty >= hg.num_types() {
            return Err(Error::usage(format!("metapath type id {ty} out of range")));
        }
    }
    let starts = hg.nodes_of_type(metapath[0]).to_vec();
    if starts.is_empty() {
        return Err(Error::data(format!(
            "no nodes of type {:?} to start from",
            hg.type_names()[metapath[0]]
        )));
    }
    // Last position repeats the first, so the cycle has length |path| - 1.
    let cycle = &metapath[..metapath.len() - 1];
    let sched = schedule(&starts, cfg.walks_per_node, cfg.seed);
    let walks = run_schedule(&sched, cfg.threads, cfg.seed, |start, rng| {
        let mut walk = Vec::with_capacity(cfg.walk_length);
        walk.push(start);
        let mut cur = start;
        let mut pos = 0usize;
        while walk.len() < cfg.walk_length {
            let next_type = cycle[(pos + 1) % cycle.len()];
            let nbrs = g_typed_neighbors(hg, cur, next_type);
            if nbrs.is_empty() {
                break;
            }
            let next = nbrs[rng.gen_range(0..nbrs.len())];
            walk.push(next);
            cur = next;
            pos += 1;
        }
        walk
    });
    Ok(WalkCorpus { walks, token_space: TokenSpace::GraphNodes })
}

fn g_typed_neighbors(hg: &HeteroGraph, u: NodeId, ty: usize) -> Vec<NodeId> {
    hg.base
        .nbrs(u)
        .targets
        .iter()
        .copied()
        .filter(|&v| hg.node_type(v) == ty)
        .collect()
}
