//! Model persistence: word2vec-format embedding files and versioned JSON
//! checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

fn write_word2vec<'a>(
    path: &Path,
    tokens: &[String],
    dim: usize,
    mut row: impl FnMut(usize) -> &'a [f64],
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", tokens.len(), dim));
    for (i, token) in tokens.iter().enumerate() {
        let r = row(i);
        debug_assert_eq!(r.len(), dim);
        out.push_str(token);
        for v in r {
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "refusing to save non-finite embedding value for token {token:?}"
                )));
            }
            // f64 Display prints the shortest decimal that round-trips.
            out.push(' ');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out)
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}

/// Save the input vectors of an embedding table in word2vec text format:
/// a "N D" header, then one `token v1 .. vD` line per row.
pub fn save_embeddings(path: &Path, table: &EmbeddingTable, tokens: &[String]) -> Result<()> {
    if tokens.len() != table.len() {
        return Err(Error::usage(format!(
            "{} tokens for {} embedding rows",
            tokens.len(),
            table.len()
        )));
    }
    write_word2vec(path, tokens, table.dim(), |i| table.input_row(i))
}

/// Save a dense matrix row-per-token in the same format.
pub fn save_matrix_embeddings(path: &Path, m: &DenseMatrix, tokens: &[String]) -> Result<()> {
    if tokens.len() != m.rows() {
        return Err(Error::usage(format!(
            "{} tokens for {} matrix rows",
            tokens.len(),
            m.rows()
        )));
    }
    write_word2vec(path, tokens, m.cols(), |i| m.row(i))
}

/// Load a word2vec text file; inverts [`save_embeddings`] exactly.
pub fn load_embeddings(path: &Path) -> Result<(Vec<String>, EmbeddingTable)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::data(format!("{}: empty embedding file", path.display())))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(Error::data(format!(
            "{}: header must be \"N D\", found {header:?}",
            path.display()
        )));
    }
    let n: usize = parts[0]
        .parse()
        .map_err(|_| Error::data(format!("{}: bad row count {:?}", path.display(), parts[0])))?;
    let dim: usize = parts[1]
        .parse()
        .map_err(|_| Error::data(format!("{}: bad dimension {:?}", path.display(), parts[1])))?;
    let mut tokens = Vec::with_capacity(n);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != dim + 1 {
            return Err(Error::data(format!(
                "{}:{}: expected {} fields, found {}",
                path.display(),
                lineno + 2,
                dim + 1,
                fields.len()
            )));
        }
        tokens.push(fields[0].to_string());
        let row: Vec<f64> = fields[1..]
            .iter()
            .map(|v| {
                v.parse::<f64>().map_err(|_| {
                    Error::data(format!(
                        "{}:{}: bad value {v:?}",
                        path.display(),
                        lineno + 2
                    ))
                })
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if tokens.len() != n {
        return Err(Error::data(format!(
            "{}: header claims {n} rows, found {}",
            path.display(),
            tokens.len()
        )));
    }
    Ok((tokens, EmbeddingTable::from_input_rows(rows)?))
}

/// One named tensor inside a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorData {
    pub fn from_slice(shape: Vec<usize>, data: &[f64]) -> TensorData {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        TensorData { shape, data: data.to_vec() }
    }

    pub fn from_matrix(m: &DenseMatrix) -> TensorData {
        TensorData { shape: vec![m.rows(), m.cols()], data: m.data().to_vec() }
    }

    pub fn to_matrix(&self) -> Result<DenseMatrix> {
        if self.shape.len() != 2 {
            return Err(Error::data(format!(
                "tensor shape {:?} is not a matrix",
                self.shape
            )));
        }
        if self.shape[0] * self.shape[1] != self.data.len() {
            return Err(Error::data("tensor shape does not match data length"));
        }
        let mut m = DenseMatrix::zeros(self.shape[0], self.shape[1]);
        m.data_mut().copy_from_slice(&self.data);
        Ok(m)
    }
}

/// Versioned training checkpoint: config snapshot, named tensors, and the
/// rng position needed to resume the exact draw stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: String,
    pub config: serde_json::Value,
    /// Model-specific scalars (entity counts, adam step, ...).
    pub meta: BTreeMap<String, serde_json::Value>,
    pub epochs_done: usize,
    pub rng_seed: u64,
    /// ChaCha word position, serialized as a decimal string.
    pub rng_word_pos: String,
    pub tensors: BTreeMap<String, TensorData>,
}

impl Checkpoint {
    pub fn word_pos(&self) -> Result<u128> {
        self.rng_word_pos
            .parse::<u128>()
            .map_err(|_| Error::data(format!("bad rng position {:?}", self.rng_word_pos)))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .ok_or_else(|| Error::data(format!("checkpoint missing meta field {key:?}")))
    }
}

pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string_pretty(cp)
        .map_err(|e| Error::data(format!("cannot serialize checkpoint: {e}")))?;
    fs::write(path, json + "\n")
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    let cp: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::data(format!("{}: malformed checkpoint: {e}", path.display())))?;
    if cp.format_version > CHECKPOINT_FORMAT_VERSION {
        return Err(Error::data(format!(
            "{}: checkpoint format_version {} is newer than supported {}",
            path.display(),
            cp.format_version,
            CHECKPOINT_FORMAT_VERSION
        )));
    }
    Ok(cp)
}
