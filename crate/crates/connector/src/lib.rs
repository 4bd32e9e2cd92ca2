//! Connector: a graph representation learning toolkit.
//!
//! Loads four kinds of graphs (homogeneous, signed, heterogeneous,
//! knowledge), trains thirteen embedding models — nine shallow (DeepWalk,
//! Node2Vec, Struc2Vec, HOPE, SiNE, Metapath2Vec, TransE, TransH, TransR)
//! and four deep (GCN, GraphSAGE, GIN, GAT) — and evaluates embeddings via
//! node classification and link prediction. Usable as a library or through
//! the `connector` batch CLI.

pub mod logging;

pub mod embedding;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod graph;
pub mod kge;
pub mod linalg;
pub mod loaders;
pub mod runner;
pub mod sgns;
pub mod signed;
pub mod spectral;
pub mod walks;

pub use embedding::EmbeddingTable;
pub use error::{Error, Result};
pub use graph::{HeteroGraph, HomoGraph, KnowledgeGraph, SignedGraph};
