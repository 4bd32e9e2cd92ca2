//! Embedding table produced by all shallow trainers.

use crate::error::{Error, Result};

/// Per-token input (and output) vectors of fixed dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    input: Vec<f64>,
    output: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingTable {
            dim,
            input: vec![0.0; rows * dim],
            output: vec![0.0; rows * dim],
        }
    }

    pub fn from_input_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::data("embedding rows have inconsistent dimension"));
        }
        let n = rows.len();
        let mut input = Vec::with_capacity(n * dim);
        for r in rows {
            input.extend_from_slice(&r);
        }
        Ok(EmbeddingTable { dim, input, output: vec![0.0; n * dim] })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.input.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    #[inline]
    pub fn input_row(&self, i: usize) -> &[f64] {
        &self.input[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn input_row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.input[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn output_row(&self, i: usize) -> &[f64] {
        &self.output[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn output_row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.output[i * self.dim..(i + 1) * self.dim]
    }

    pub fn input_data(&self) -> &[f64] {
        &self.input
    }

    pub fn output_data(&self) -> &[f64] {
        &self.output
    }

    pub(crate) fn set_matrices(dim: usize, input: Vec<f64>, output: Vec<f64>) -> Self {
        assert_eq!(input.len(), output.len());
        assert!(dim > 0 && input.len().is_multiple_of(dim));
        EmbeddingTable { dim, input, output }
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().chain(self.output.iter()).all(|v| v.is_finite())
    }

    /// Copy without the trailing row (used to drop a virtual node on save).
    pub fn without_last_row(&self) -> EmbeddingTable {
        let n = self.len();
        assert!(n > 0);
        EmbeddingTable {
            dim: self.dim,
            input: self.input[..(n - 1) * self.dim].to_vec(),
            output: self.output[..(n - 1) * self.dim].to_vec(),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}
