//! File loaders for the four graph families.
//!
//! All formats are line-oriented UTF-8. Lines starting with `#` and blank
//! lines are skipped; fields are separated by tabs or runs of spaces.
//! Tokens are mapped to dense ids in first-appearance order and the
//! original strings are kept in a side table.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, HomoGraph, KnowledgeGraph, SignedGraph, Triple};
use crate::linalg::DenseMatrix;
use crate::logging::{info_log, warn_log};

/// Which of the four graph families a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    Homogeneous,
    Signed,
    Heterogeneous,
    Knowledge,
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GraphKind::Homogeneous => "homogeneous",
            GraphKind::Signed => "signed",
            GraphKind::Heterogeneous => "heterogeneous",
            GraphKind::Knowledge => "knowledge",
        };
        f.write_str(s)
    }
}

/// File roles a dataset may declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FileRole {
    Edges,
    Nodes,
    Features,
    Labels,
    Train,
    Valid,
    Test,
}

/// Declarative description of an on-disk dataset.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub kind: GraphKind,
    pub paths: HashMap<FileRole, PathBuf>,
    pub directed: bool,
    pub weighted: bool,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let required: &[FileRole] = match self.kind {
            GraphKind::Homogeneous | GraphKind::Signed => &[FileRole::Edges],
            GraphKind::Heterogeneous => &[FileRole::Nodes, FileRole::Edges],
            GraphKind::Knowledge => &[FileRole::Train, FileRole::Valid, FileRole::Test],
        };
        for role in required {
            if !self.paths.contains_key(role) {
                return Err(Error::usage(format!(
                    "{} dataset requires a {:?} file",
                    self.kind, role
                )));
            }
        }
        Ok(())
    }

    pub fn path(&self, role: FileRole) -> Option<&Path> {
        self.paths.get(&role).map(|p| p.as_path())
    }
}

/// Token <-> dense-id side table, first-appearance order.
#[derive(Debug, Clone, Default)]
pub struct TokenTable {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl TokenTable {
    pub fn intern(&mut self, token: &str) -> usize {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len();
        self.id_to_token.push(token.to_string());
        self.token_to_id.insert(token.to_string(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }
}

/// A loaded homogeneous graph plus its token side tables.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: HomoGraph,
    pub tokens: TokenTable,
    pub label_names: Vec<String>,
    /// Nodes that had no feature line and were zero-filled.
    pub missing_features: usize,
}

#[derive(Debug, Clone)]
pub struct LoadedSignedGraph {
    pub graph: SignedGraph,
    pub tokens: TokenTable,
}

#[derive(Debug, Clone)]
pub struct LoadedHeteroGraph {
    pub graph: HeteroGraph,
    pub tokens: TokenTable,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').to_string()))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .collect())
}

fn fields(line: &str) -> Vec<&str> {
    line.split(['\t', ' '])
        .filter(|f| !f.is_empty())
        .collect()
}

/// Load a homogeneous edge list: `src dst` or `src dst weight` per line.
pub fn load_edge_list(path: &Path, directed: bool, weighted: bool) -> Result<LoadedGraph> {
    let lines = read_lines(path)?;
    let mut tokens = TokenTable::default();
    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(lines.len());
    for (lineno, line) in &lines {
        let f = fields(line);
        let expected = if weighted { 3 } else { 2 };
        if f.len() != expected {
            return Err(Error::data(format!(
                "{}:{lineno}: expected {expected} fields, found {}",
                path.display(),
                f.len()
            )));
        }
        let src = tokens.intern(f[0]);
        let dst = tokens.intern(f[1]);
        let w = if weighted {
            f[2].parse::<f64>().map_err(|_| {
                Error::data(format!(
                    "{}:{lineno}: bad weight {:?}",
                    path.display(),
                    f[2]
                ))
            })?
        } else {
            1.0
        };
        edges.push((src, dst, w));
    }
    if tokens.is_empty() {
        return Err(Error::data(format!(
            "{}: no edges found (empty graph)",
            path.display()
        )));
    }
    let graph = if weighted {
        HomoGraph::build_weighted(&edges, tokens.len(), directed)?
    } else {
        let plain: Vec<(usize, usize)> = edges.iter().map(|&(s, t, _)| (s, t)).collect();
        HomoGraph::build(&plain, tokens.len(), directed)?
    };
    info_log!(
        "loaded {}: {} nodes, {} arcs ({} edges undirected-counted)",
        path.display(),
        graph.num_nodes(),
        graph.num_arcs(),
        graph.num_edges()
    );
    Ok(LoadedGraph { graph, tokens, label_names: Vec::new(), missing_features: 0 })
}

/// Load a signed edge list: `src dst sign` with sign in {1, -1}.
pub fn load_signed_edge_list(path: &Path) -> Result<LoadedSignedGraph> {
    let lines = read_lines(path)?;
    let mut tokens = TokenTable::default();
    let mut edges: Vec<(usize, usize, i8)> = Vec::with_capacity(lines.len());
    for (lineno, line) in &lines {
        let f = fields(line);
        if f.len() != 3 {
            return Err(Error::data(format!(
                "{}:{lineno}: expected 3 fields, found {}",
                path.display(),
                f.len()
            )));
        }
        let sign = match f[2] {
            "1" | "+1" => 1i8,
            "-1" => -1i8,
            other => {
                return Err(Error::data(format!(
                    "{}:{lineno}: sign must be 1 or -1, found {other:?}",
                    path.display()
                )))
            }
        };
        let src = tokens.intern(f[0]);
        let dst = tokens.intern(f[1]);
        edges.push((src, dst, sign));
    }
    if tokens.is_empty() {
        return Err(Error::data(format!(
            "{}: no edges found (empty graph)",
            path.display()
        )));
    }
    let graph = SignedGraph::build(&edges, tokens.len(), true)?;
    info_log!(
        "loaded {}: {} nodes, {} positive / {} negative arcs",
        path.display(),
        graph.base.num_nodes(),
        graph.positive_arcs(),
        graph.negative_arcs()
    );
    Ok(LoadedSignedGraph { graph, tokens })
}

/// Load a heterogeneous graph from a node file (`token<TAB>type_name`) and
/// an edge file (`src_token<TAB>dst_token`). Edges are undirected.
pub fn load_hetero(node_path: &Path, edge_path: &Path) -> Result<LoadedHeteroGraph> {
    let mut tokens = TokenTable::default();
    let mut type_names: Vec<String> = Vec::new();
    let mut node_types: Vec<usize> = Vec::new();

    for (lineno, line) in read_lines(node_path)? {
        let f = fields(&line);
        if f.len() != 2 {
            return Err(Error::data(format!(
                "{}:{lineno}: expected 2 fields, found {}",
                node_path.display(),
                f.len()
            )));
        }
        let ty = match type_names.iter().position(|t| t == f[1]) {
            Some(i) => i,
            None => {
                type_names.push(f[1].to_string());
                type_names.len() - 1
            }
        };
        let before = tokens.len();
        let id = tokens.intern(f[0]);
        if id < before {
            if node_types[id] != ty {
                return Err(Error::data(format!(
                    "{}:{lineno}: node {:?} declared with conflicting types {:?} and {:?}",
                    node_path.display(),
                    f[0],
                    type_names[node_types[id]],
                    f[1]
                )));
            }
        } else {
            node_types.push(ty);
        }
    }

    let mut edges: Vec<(usize, usize)> = Vec::new();
    for (lineno, line) in read_lines(edge_path)? {
        let f = fields(&line);
        if f.len() != 2 {
            return Err(Error::data(format!(
                "{}:{lineno}: expected 2 fields, found {}",
                edge_path.display(),
                f.len()
            )));
        }
        let src = tokens.get(f[0]).ok_or_else(|| {
            Error::data(format!(
                "{}:{lineno}: edge endpoint {:?} not declared in node file",
                edge_path.display(),
                f[0]
            ))
        })?;
        let dst = tokens.get(f[1]).ok_or_else(|| {
            Error::data(format!(
                "{}:{lineno}: edge endpoint {:?} not declared in node file",
                edge_path.display(),
                f[1]
            ))
        })?;
        edges.push((src, dst));
    }

    let base = HomoGraph::build(&edges, tokens.len(), false)?;
    let graph = HeteroGraph::new(base, node_types, type_names)?;
    info_log!(
        "loaded {} + {}: {} nodes, {} types, {} edges",
        node_path.display(),
        edge_path.display(),
        graph.base.num_nodes(),
        graph.num_types(),
        graph.base.num_edges()
    );
    Ok(LoadedHeteroGraph { graph, tokens })
}

/// Load knowledge-graph triples: `head<TAB>relation<TAB>tail` per line.
/// Vocabularies cover the union of the three splits.
pub fn load_triples(train: &Path, valid: &Path, test: &Path) -> Result<KnowledgeGraph> {
    let mut entities = TokenTable::default();
    let mut relations = TokenTable::default();
    let mut load_split = |path: &Path| -> Result<Vec<Triple>> {
        let mut triples = Vec::new();
        for (lineno, line) in read_lines(path)? {
            let f = fields(&line);
            if f.len() != 3 {
                return Err(Error::data(format!(
                    "{}:{lineno}: expected 3 fields, found {}",
                    path.display(),
                    f.len()
                )));
            }
            triples.push(Triple {
                head: entities.intern(f[0]),
                rel: relations.intern(f[1]),
                tail: entities.intern(f[2]),
            });
        }
        Ok(triples)
    };
    let train_t = load_split(train)?;
    let valid_t = load_split(valid)?;
    let test_t = load_split(test)?;
    if train_t.is_empty() {
        return Err(Error::data(format!(
            "{}: train split is empty",
            train.display()
        )));
    }
    let kg = KnowledgeGraph::new(
        entities.tokens().to_vec(),
        relations.tokens().to_vec(),
        train_t,
        valid_t,
        test_t,
    )?;
    info_log!(
        "loaded triples: {} entities, {} relations, splits {}/{}/{}",
        kg.num_entities(),
        kg.num_relations(),
        kg.train.len(),
        kg.valid.len(),
        kg.test.len()
    );
    Ok(kg)
}

/// Read a `token class_name` label file into (token, class) pairs.
pub(crate) fn read_label_file(path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in read_lines(path)? {
        let f = fields(&line);
        if f.len() != 2 {
            return Err(Error::data(format!(
                "{}:{lineno}: expected 2 fields, found {}",
                path.display(),
                f.len()
            )));
        }
        out.push((f[0].to_string(), f[1].to_string()));
    }
    Ok(out)
}

/// Attach node features (`token f1 ... fk`) and/or labels (`token class`)
/// to an already loaded graph. Nodes without a feature line get zero rows.
pub fn load_features_labels(
    features_path: Option<&Path>,
    labels_path: Option<&Path>,
    lg: &mut LoadedGraph,
) -> Result<()> {
    let n = lg.graph.num_nodes();
    if let Some(fp) = features_path {
        let mut width: Option<usize> = None;
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; n];
        for (lineno, line) in read_lines(fp)? {
            let f = fields(&line);
            if f.len() < 2 {
                return Err(Error::data(format!(
                    "{}:{lineno}: feature line needs a token and at least one value",
                    fp.display()
                )));
            }
            let node = lg.tokens.get(f[0]).ok_or_else(|| {
                Error::data(format!(
                    "{}:{lineno}: unknown node token {:?}",
                    fp.display(),
                    f[0]
                ))
            })?;
            let values: Vec<f64> = f[1..]
                .iter()
                .map(|v| {
                    v.parse::<f64>().map_err(|_| {
                        Error::data(format!("{}:{lineno}: bad feature value {v:?}", fp.display()))
                    })
                })
                .collect::<Result<_>>()?;
            match width {
                None => width = Some(values.len()),
                Some(w) if w != values.len() => {
                    return Err(Error::data(format!(
                        "{}:{lineno}: feature width {} != {}",
                        fp.display(),
                        values.len(),
                        w
                    )))
                }
                _ => {}
            }
            rows[node] = Some(values);
        }
        let w = width.ok_or_else(|| Error::data(format!("{}: no feature rows", fp.display())))?;
        let missing = rows.iter().filter(|r| r.is_none()).count();
        if missing > 0 {
            warn_log!("{missing} nodes have no feature line; zero-filled");
        }
        lg.missing_features = missing;
        let mat = DenseMatrix::from_fn(n, w, |i, j| {
            rows[i].as_ref().map_or(0.0, |r| r[j])
        });
        lg.graph.features = Some(mat);
    }

    if let Some(lp) = labels_path {
        let mut label_names: Vec<String> = Vec::new();
        let mut labels: Vec<Option<usize>> = vec![None; n];
        for (lineno, line) in read_lines(lp)? {
            let f = fields(&line);
            if f.len() != 2 {
                return Err(Error::data(format!(
                    "{}:{lineno}: expected 2 fields, found {}",
                    lp.display(),
                    f.len()
                )));
            }
            let node = lg.tokens.get(f[0]).ok_or_else(|| {
                Error::data(format!(
                    "{}:{lineno}: unknown node token {:?}",
                    lp.display(),
                    f[0]
                ))
            })?;
            let class = match label_names.iter().position(|c| c == f[1]) {
                Some(i) => i,
                None => {
                    label_names.push(f[1].to_string());
                    label_names.len() - 1
                }
            };
            labels[node] = Some(class);
        }
        lg.label_names = label_names;
        lg.graph.labels = Some(labels);
    }
    Ok(())
}
