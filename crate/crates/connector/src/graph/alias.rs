//! Vose alias table: O(n) build, O(1) weighted draws.

use rand::Rng;

use crate::error::{Error, Result};

/// Alias table over a non-negative weight vector. Drawing returns index `i`
/// with probability `weights[i] / sum(weights)`.
///
/// ```
/// use connector::graph::AliasTable;
/// use rand::SeedableRng;
///
/// let table = AliasTable::build(&[1.0, 0.0, 3.0])?;
/// let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
/// assert_ne!(table.draw(&mut rng), 1); // zero weight is never drawn
/// # Ok::<(), connector::Error>(())
/// ```
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    pub fn build(weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::data("alias table needs at least one weight"));
        }
        let mut total = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if w < 0.0 || !w.is_finite() {
                return Err(Error::data(format!("weight {w} at index {i} is invalid")));
            }
            total += w;
        }
        if total <= 0.0 {
            return Err(Error::data("alias table needs at least one positive weight"));
        }

        let mut prob = vec![0.0; n];
        let mut alias = vec![0usize; n];
        let mut scaled: Vec<f64> = weights.iter().map(|&w| w * n as f64 / total).collect();
        let mut small: Vec<usize> = Vec::with_capacity(n);
        let mut large: Vec<usize> = Vec::with_capacity(n);
        for (i, &s) in scaled.iter().enumerate() {
            if s < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            large.pop();
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                small.push(l);
            } else {
                large.push(l);
            }
        }
        // Leftovers are exactly 1 up to rounding.
        for &i in large.iter().chain(small.iter()) {
            prob[i] = 1.0;
            alias[i] = i;
        }
        Ok(AliasTable { prob, alias })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn draw(&self, rng: &mut impl Rng) -> usize {
        let i = rng.gen_range(0..self.prob.len());
        if rng.gen::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i]
        }
    }

    pub fn prob(&self) -> &[f64] {
        &self.prob
    }

    pub fn alias(&self) -> &[usize] {
        &self.alias
    }
}
