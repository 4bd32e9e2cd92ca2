//! In-memory graph types shared by every model: CSR homogeneous graphs and
//! the signed / heterogeneous / knowledge wrappers around them.
//!
//! All graph types are immutable after construction and safe to share
//! across threads.

mod alias;
mod sparse;

pub use alias::AliasTable;
pub use sparse::{normalized_adjacency, SparseMatrix};

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub type NodeId = usize;

/// Homogeneous graph in CSR form: `offsets` has length `num_nodes + 1` and
/// `targets[offsets[u]..offsets[u+1]]` are the (sorted) out-neighbors of `u`.
/// Undirected graphs store both arc directions. Parallel edges are kept.
#[derive(Debug, Clone)]
pub struct HomoGraph {
    num_nodes: usize,
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
    weights: Option<Vec<f64>>,
    directed: bool,
    pub features: Option<DenseMatrix>,
    pub labels: Option<Vec<Option<usize>>>,
}

/// Neighbor slice of one node: targets plus optional aligned weights.
#[derive(Debug, Clone, Copy)]
pub struct Neighbors<'a> {
    pub targets: &'a [NodeId],
    pub weights: Option<&'a [f64]>,
}

impl<'a> Neighbors<'a> {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Iterate `(target, weight)` pairs; unweighted graphs yield weight 1.
    pub fn iter(&self) -> impl Iterator<Item = (NodeId, f64)> + 'a {
        let weights = self.weights;
        self.targets
            .iter()
            .enumerate()
            .map(move |(k, &t)| (t, weights.map_or(1.0, |w| w[k])))
    }
}

fn build_csr<P: Copy>(
    edges: &[(NodeId, NodeId, P)],
    num_nodes: usize,
    directed: bool,
) -> Result<(Vec<usize>, Vec<NodeId>, Vec<P>)> {
    let mut arcs: Vec<(NodeId, NodeId, P)> = Vec::with_capacity(if directed {
        edges.len()
    } else {
        edges.len() * 2
    });
    for &(src, dst, p) in edges {
        if src >= num_nodes || dst >= num_nodes {
            return Err(Error::data(format!(
                "edge ({src}, {dst}) out of range for {num_nodes} nodes"
            )));
        }
        arcs.push((src, dst, p));
        if !directed && src != dst {
            arcs.push((dst, src, p));
        }
    }
    arcs.sort_by_key(|&(s, t, _)| (s, t));

    let mut offsets = vec![0usize; num_nodes + 1];
    for &(s, _, _) in &arcs {
        offsets[s + 1] += 1;
    }
    for i in 0..num_nodes {
        offsets[i + 1] += offsets[i];
    }
    let targets: Vec<NodeId> = arcs.iter().map(|&(_, t, _)| t).collect();
    let payload: Vec<P> = arcs.iter().map(|&(_, _, p)| p).collect();
    Ok((offsets, targets, payload))
}

impl HomoGraph {
    /// Build an unweighted graph from an edge list. Undirected input is
    /// stored with both arc directions; duplicate edges are preserved.
    ///
    /// ```
    /// use connector::graph::HomoGraph;
    ///
    /// let g = HomoGraph::build(&[(0, 1), (1, 2), (2, 0)], 3, false)?;
    /// assert_eq!(g.num_edges(), 3);
    /// assert_eq!(g.neighbors(0)?.targets, &[1, 2]);
    /// # Ok::<(), connector::Error>(())
    /// ```
    pub fn build(edges: &[(NodeId, NodeId)], num_nodes: usize, directed: bool) -> Result<Self> {
        let tagged: Vec<(NodeId, NodeId, ())> = edges.iter().map(|&(s, t)| (s, t, ())).collect();
        let (offsets, targets, _) = build_csr(&tagged, num_nodes, directed)?;
        Ok(HomoGraph {
            num_nodes,
            offsets,
            targets,
            weights: None,
            directed,
            features: None,
            labels: None,
        })
    }

    /// Build a weighted graph. Weights must be non-negative.
    pub fn build_weighted(
        edges: &[(NodeId, NodeId, f64)],
        num_nodes: usize,
        directed: bool,
    ) -> Result<Self> {
        for &(s, t, w) in edges {
            if w < 0.0 || !w.is_finite() {
                return Err(Error::data(format!(
                    "edge ({s}, {t}) has invalid weight {w}"
                )));
            }
        }
        let (offsets, targets, weights) = build_csr(edges, num_nodes, directed)?;
        Ok(HomoGraph {
            num_nodes,
            offsets,
            targets,
            weights: Some(weights),
            directed,
            features: None,
            labels: None,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of stored arcs (directed edges). An undirected edge counts
    /// twice, except self-loops which are stored once.
    pub fn num_arcs(&self) -> usize {
        self.targets.len()
    }

    /// Number of edges under undirected counting: arcs are halved, each
    /// self-loop counts once. For directed graphs this equals `num_arcs`.
    pub fn num_edges(&self) -> usize {
        if self.directed {
            return self.targets.len();
        }
        let self_loops = (0..self.num_nodes)
            .map(|u| {
                self.targets[self.offsets[u]..self.offsets[u + 1]]
                    .iter()
                    .filter(|&&t| t == u)
                    .count()
            })
            .sum::<usize>();
        (self.targets.len() - self_loops) / 2 + self_loops
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }

    pub fn degree(&self, u: NodeId) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    /// CSR neighbor slice for `u`.
    pub fn neighbors(&self, u: NodeId) -> Result<Neighbors<'_>> {
        if u >= self.num_nodes {
            return Err(Error::data(format!(
                "node {u} out of range for {} nodes",
                self.num_nodes
            )));
        }
        Ok(self.nbrs(u))
    }

    /// Unchecked neighbor slice, for hot loops where `u` is known valid.
    #[inline]
    pub(crate) fn nbrs(&self, u: NodeId) -> Neighbors<'_> {
        let lo = self.offsets[u];
        let hi = self.offsets[u + 1];
        Neighbors {
            targets: &self.targets[lo..hi],
            weights: self.weights.as_ref().map(|w| &w[lo..hi]),
        }
    }

    /// Edge test via binary search over the sorted neighbor list.
    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        if u >= self.num_nodes {
            return false;
        }
        self.nbrs(u).targets.binary_search(&v).is_ok()
    }

    /// Enumerate all stored arcs as `(src, dst, weight)`.
    pub fn arcs(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        (0..self.num_nodes).flat_map(move |u| self.nbrs(u).iter().map(move |(t, w)| (u, t, w)))
    }

    /// CSR offsets array (length `num_nodes + 1`).
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }
}

/// Signed graph: a CSR base plus a `+1`/`-1` sign aligned with each arc.
#[derive(Debug, Clone)]
pub struct SignedGraph {
    pub base: HomoGraph,
    signs: Vec<i8>,
}

impl SignedGraph {
    pub fn build(
        edges: &[(NodeId, NodeId, i8)],
        num_nodes: usize,
        directed: bool,
    ) -> Result<Self> {
        for &(s, t, sign) in edges {
            if sign != 1 && sign != -1 {
                return Err(Error::data(format!(
                    "edge ({s}, {t}) has sign {sign}, expected 1 or -1"
                )));
            }
        }
        let (offsets, targets, signs) = build_csr(edges, num_nodes, directed)?;
        let base = HomoGraph {
            num_nodes,
            offsets,
            targets,
            weights: None,
            directed,
            features: None,
            labels: None,
        };
        Ok(SignedGraph { base, signs })
    }

    /// Signs aligned with the neighbor slice of `u`.
    pub fn signed_neighbors(&self, u: NodeId) -> (&[NodeId], &[i8]) {
        let lo = self.base.offsets[u];
        let hi = self.base.offsets[u + 1];
        (&self.base.targets[lo..hi], &self.signs[lo..hi])
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn positive_arcs(&self) -> usize {
        self.signs.iter().filter(|&&s| s == 1).count()
    }

    pub fn negative_arcs(&self) -> usize {
        self.signs.iter().filter(|&&s| s == -1).count()
    }
}

/// Heterogeneous graph: a CSR base plus one type id per node and a
/// per-type node index.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    pub base: HomoGraph,
    node_types: Vec<usize>,
    type_names: Vec<String>,
    per_type: Vec<Vec<NodeId>>,
}

impl HeteroGraph {
    pub fn new(base: HomoGraph, node_types: Vec<usize>, type_names: Vec<String>) -> Result<Self> {
        if node_types.len() != base.num_nodes() {
            return Err(Error::data(format!(
                "node_types length {} != num_nodes {}",
                node_types.len(),
                base.num_nodes()
            )));
        }
        let mut per_type = vec![Vec::new(); type_names.len()];
        for (node, &ty) in node_types.iter().enumerate() {
            if ty >= type_names.len() {
                return Err(Error::data(format!("node {node} has unknown type id {ty}")));
            }
            per_type[ty].push(node);
        }
        Ok(HeteroGraph { base, node_types, type_names, per_type })
    }

    pub fn node_type(&self, u: NodeId) -> usize {
        self.node_types[u]
    }

    pub fn node_types(&self) -> &[usize] {
        &self.node_types
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn num_types(&self) -> usize {
        self.type_names.len()
    }

    /// Sorted node ids of one type.
    pub fn nodes_of_type(&self, ty: usize) -> &[NodeId] {
        &self.per_type[ty]
    }

    pub fn type_id(&self, name: &str) -> Option<usize> {
        self.type_names.iter().position(|n| n == name)
    }
}

/// One `(head, relation, tail)` fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: usize,
    pub rel: usize,
    pub tail: usize,
}

/// Knowledge graph: entity/relation vocabularies plus train/valid/test
/// triple lists and a membership set over their union.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    known: HashSet<Triple>,
}

impl KnowledgeGraph {
    pub fn new(
        entity_names: Vec<String>,
        relation_names: Vec<String>,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let ne = entity_names.len();
        let nr = relation_names.len();
        let mut known = HashSet::new();
        for t in train.iter().chain(valid.iter()).chain(test.iter()) {
            if t.head >= ne || t.tail >= ne || t.rel >= nr {
                return Err(Error::data(format!(
                    "triple ({}, {}, {}) out of vocabulary bounds",
                    t.head, t.rel, t.tail
                )));
            }
            known.insert(*t);
        }
        Ok(KnowledgeGraph { entity_names, relation_names, train, valid, test, known })
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    /// Membership over the union of all three splits.
    pub fn is_known(&self, t: &Triple) -> bool {
        self.known.contains(t)
    }

    pub fn known_len(&self) -> usize {
        self.known.len()
    }
}
