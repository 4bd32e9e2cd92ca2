//! Reverse-mode autodiff over dense matrices, with a sparse-dense product
//! for graph aggregation.
//!
//! The tape records primitive ops in execution order; `backward` walks the
//! record once in reverse, accumulating adjoints by summation over
//! fan-out. One tape serves one forward/backward pass; training loops
//! build a fresh tape per step from plain parameter matrices.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::SparseMatrix;
use crate::linalg::DenseMatrix;

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM { mat_t: Arc<SparseMatrix>, input: Var },
    Add(Var, Var),
    Hadamard(Var, Var),
    ScalarMulConst(Var, f64),
    /// Matrix times a learnable 1x1 scalar tensor.
    ScalarMulVar(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Elu(Var, f64),
    RowSoftmax(Var),
    /// Column-wise concatenation.
    Concat(Var, Var),
    DropoutMask { input: Var, mask: Arc<DenseMatrix> },
    GatherRows { input: Var, index: Arc<Vec<usize>> },
    ScatterAddRows { input: Var, index: Arc<Vec<usize>> },
    Transpose(Var),
    Sum(Var),
    CrossEntropy { logits: Var, labels: Arc<Vec<usize>>, mask: Arc<Vec<usize>> },
}

struct Node {
    value: DenseMatrix,
    grad: Option<DenseMatrix>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: DenseMatrix, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&DenseMatrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn leaf(&mut self, value: DenseMatrix, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.needs(a) || self.needs(b);
        self.push(value, rg, Op::MatMul(a, b))
    }

    /// Sparse constant times dense tensor. The transpose is kept for the
    /// backward pass.
    pub fn spmm(&mut self, mat: Arc<SparseMatrix>, mat_t: Arc<SparseMatrix>, x: Var) -> Var {
        let value = mat.matmul_dense(self.value(x));
        let rg = self.needs(x);
        self.push(value, rg, Op::SpMM { mat_t, input: x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        let rg = self.needs(a) || self.needs(b);
        self.push(value, rg, Op::Add(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!((va.rows(), va.cols()), (vb.rows(), vb.cols()));
        let value = DenseMatrix::from_fn(va.rows(), va.cols(), |i, j| va.get(i, j) * vb.get(i, j));
        let rg = self.needs(a) || self.needs(b);
        self.push(value, rg, Op::Hadamard(a, b))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.needs(a);
        self.push(value, rg, Op::ScalarMulConst(a, c))
    }

    /// Multiply every entry of `a` by the single entry of the 1x1 tensor
    /// `s` (used for GIN's learnable epsilon).
    pub fn scalar_mul_var(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s);
        assert_eq!((sv.rows(), sv.cols()), (1, 1), "scalar tensor must be 1x1");
        let c = sv.get(0, 0);
        let value = self.value(a).scale(c);
        let rg = self.needs(a) || self.needs(s);
        self.push(value, rg, Op::ScalarMulVar(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let value = DenseMatrix::from_fn(va.rows(), va.cols(), |i, j| va.get(i, j).max(0.0));
        let rg = self.needs(a);
        self.push(value, rg, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let va = self.value(a);
        let value = DenseMatrix::from_fn(va.rows(), va.cols(), |i, j| {
            let x = va.get(i, j);
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        });
        let rg = self.needs(a);
        self.push(value, rg, Op::LeakyRelu(a, slope))
    }

    pub fn elu(&mut self, a: Var, alpha: f64) -> Var {
        let va = self.value(a);
        let value = DenseMatrix::from_fn(va.rows(), va.cols(), |i, j| {
            let x = va.get(i, j);
            if x > 0.0 {
                x
            } else {
                alpha * (x.exp() - 1.0)
            }
        });
        let rg = self.needs(a);
        self.push(value, rg, Op::Elu(a, alpha))
    }

    /// Numerically stable per-row softmax. Entries of -inf become exact
    /// zeros; a row of only -inf becomes all zeros.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut value = DenseMatrix::zeros(va.rows(), va.cols());
        for i in 0..va.rows() {
            let row = va.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = if x == f64::NEG_INFINITY { 0.0 } else { (x - max).exp() };
                value.set(i, j, e);
                sum += e;
            }
            for j in 0..va.cols() {
                value.set(i, j, value.get(i, j) / sum);
            }
        }
        let rg = self.needs(a);
        self.push(value, rg, Op::RowSoftmax(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.rows(), vb.rows(), "concat needs equal row counts");
        let (ca, cb) = (va.cols(), vb.cols());
        let value = DenseMatrix::from_fn(va.rows(), ca + cb, |i, j| {
            if j < ca {
                va.get(i, j)
            } else {
                vb.get(i, j - ca)
            }
        });
        let rg = self.needs(a) || self.needs(b);
        self.push(value, rg, Op::Concat(a, b))
    }

    /// Elementwise multiply by a precomputed (inverted-scaling) mask.
    pub fn dropout_mask(&mut self, a: Var, mask: Arc<DenseMatrix>) -> Var {
        let va = self.value(a);
        assert_eq!((va.rows(), va.cols()), (mask.rows(), mask.cols()));
        let value = DenseMatrix::from_fn(va.rows(), va.cols(), |i, j| {
            va.get(i, j) * mask.get(i, j)
        });
        let rg = self.needs(a);
        self.push(value, rg, Op::DropoutMask { input: a, mask })
    }

    pub fn gather_rows(&mut self, a: Var, index: Arc<Vec<usize>>) -> Var {
        let va = self.value(a);
        let value = DenseMatrix::from_fn(index.len(), va.cols(), |i, j| va.get(index[i], j));
        let rg = self.needs(a);
        self.push(value, rg, Op::GatherRows { input: a, index })
    }

    /// Scatter-add rows of `a` into `out_rows` buckets: row `k` of the
    /// input is added to output row `index[k]`.
    pub fn scatter_add_rows(&mut self, a: Var, index: Arc<Vec<usize>>, out_rows: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.rows(), index.len());
        let mut value = DenseMatrix::zeros(out_rows, va.cols());
        for (k, &dst) in index.iter().enumerate() {
            let src = va.row(k);
            let out = value.row_mut(dst);
            for (j, &x) in src.iter().enumerate() {
                out[j] += x;
            }
        }
        let rg = self.needs(a);
        self.push(value, rg, Op::ScatterAddRows { input: a, index })
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.needs(a);
        self.push(value, rg, Op::Transpose(a))
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let mut value = DenseMatrix::zeros(1, 1);
        value.set(0, 0, s);
        let rg = self.needs(a);
        self.push(value, rg, Op::Sum(a))
    }

    /// Mean softmax cross-entropy of `logits` rows listed in `mask`
    /// against integer labels, as a 1x1 tensor. Uses log-sum-exp.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        labels: Arc<Vec<usize>>,
        mask: Arc<Vec<usize>>,
    ) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), labels.len(), "one label per logits row");
        assert!(!mask.is_empty(), "cross_entropy needs a non-empty mask");
        let mut total = 0.0;
        for &r in mask.iter() {
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[labels[r]];
        }
        let mut value = DenseMatrix::zeros(1, 1);
        value.set(0, 0, total / mask.len() as f64);
        let rg = self.needs(logits);
        self.push(value, rg, Op::CrossEntropy { logits, labels, mask })
    }

    /// Smallest |x| fed into a kinked activation (ReLU / LeakyReLU) on
    /// this tape. Finite-difference gradient checks skip forwards where
    /// this margin is tiny, since the derivative jumps there.
    pub fn min_kink_distance(&self) -> f64 {
        let mut min = f64::INFINITY;
        for node in &self.nodes {
            if let Op::Relu(a) | Op::LeakyRelu(a, _) = node.op {
                for &x in self.nodes[a.0].value.data() {
                    min = min.min(x.abs());
                }
            }
        }
        min
    }

    fn accumulate(&mut self, v: Var, delta: DenseMatrix) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.nodes[v.0].grad {
            Some(g) => *g = g.add(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    /// Populate gradients of every `requires_grad` tensor reachable from
    /// the scalar `loss`. Visits ops in reverse record order exactly once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::usage("backward called before any forward pass"));
        }
        let lv = &self.nodes[loss.0].value;
        if (lv.rows(), lv.cols()) != (1, 1) {
            return Err(Error::usage(format!(
                "backward target must be a 1x1 scalar, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        let mut seed = DenseMatrix::zeros(1, 1);
        seed.set(0, 0, 1.0);
        self.nodes[loss.0].grad = Some(seed);

        for i in (0..=loss.0).rev() {
            let Some(out_grad) = self.nodes[i].grad.clone() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            // Ops that saved owned data are reconstructed immutably here.
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        let gb_t = self.value(b).transpose();
                        let ga = out_grad.matmul(&gb_t);
                        self.accumulate(a, ga);
                    }
                    if self.needs(b) {
                        let at = self.value(a).transpose();
                        let gb = at.matmul(&out_grad);
                        self.accumulate(b, gb);
                    }
                }
                Op::SpMM { mat_t, input, .. } => {
                    let (mat_t, input) = (Arc::clone(mat_t), *input);
                    let gi = mat_t.matmul_dense(&out_grad);
                    self.accumulate(input, gi);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, out_grad.clone());
                    self.accumulate(b, out_grad);
                }
                Op::Hadamard(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        let vb = self.value(b);
                        let ga = DenseMatrix::from_fn(out_grad.rows(), out_grad.cols(), |i, j| {
                            out_grad.get(i, j) * vb.get(i, j)
                        });
                        self.accumulate(a, ga);
                    }
                    if self.needs(b) {
                        let va = self.value(a);
                        let gb = DenseMatrix::from_fn(out_grad.rows(), out_grad.cols(), |i, j| {
                            out_grad.get(i, j) * va.get(i, j)
                        });
                        self.accumulate(b, gb);
                    }
                }
                Op::ScalarMulConst(a, c) => {
                    let (a, c) = (*a, *c);
                    self.accumulate(a, out_grad.scale(c));
                }
                Op::ScalarMulVar(a, s) => {
                    let (a, s) = (*a, *s);
                    let c = self.value(s).get(0, 0);
                    if self.needs(a) {
                        self.accumulate(a, out_grad.scale(c));
                    }
                    if self.needs(s) {
                        let va = self.value(a);
                        let mut gs = 0.0;
                        for i in 0..va.rows() {
                            for j in 0..va.cols() {
                                gs += out_grad.get(i, j) * va.get(i, j);
                            }
                        }
                        let mut g = DenseMatrix::zeros(1, 1);
                        g.set(0, 0, gs);
                        self.accumulate(s, g);
                    }
                }
                Op::Relu(a) => {
                    let a = *a;
                    let va = self.value(a);
                    let ga = DenseMatrix::from_fn(out_grad.rows(), out_grad.cols(), |i, j| {
                        if va.get(i, j) > 0.0 {
                            out_grad.get(i, j)
                        } else {
                            0.0
                        }
                    });
                    self.accumulate(a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let (a, slope) = (*a, *slope);
                    let va = self.value(a);
                    let ga = DenseMatrix::from_fn(out_grad.rows(), out_grad.cols(), |i, j| {
                        let d = if va.get(i, j) > 0.0 { 1.0 } else { slope };
                        out_grad.get(i, j) * d
                    });
                    self.accumulate(a, ga);
                }
                Op::Elu(a, alpha) => {
                    let (a, alpha) = (*a, *alpha);
                    let va = self.value(a);
                    let vy = &self.nodes[i].value;
                    let ga = DenseMatrix::from_fn(out_grad.rows(), out_grad.cols(), |r, c| {
                        let d = if va.get(r, c) > 0.0 {
                            1.0
                        } else {
                            vy.get(r, c) + alpha
                        };
                        out_grad.get(r, c) * d
                    });
                    self.accumulate(a, ga);
                }
                Op::RowSoftmax(a) => {
                    let a = *a;
                    let y = &self.nodes[i].value;
                    let mut ga = DenseMatrix::zeros(out_grad.rows(), out_grad.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = (0..y.cols())
                            .map(|c| out_grad.get(r, c) * y.get(r, c))
                            .sum();
                        for c in 0..y.cols() {
                            ga.set(r, c, y.get(r, c) * (out_grad.get(r, c) - dot));
                        }
                    }
                    self.accumulate(a, ga);
                }
                Op::Concat(a, b) => {
                    let (a, b) = (*a, *b);
                    let ca = self.value(a).cols();
                    let ga = DenseMatrix::from_fn(out_grad.rows(), ca, |i, j| out_grad.get(i, j));
                    let cb = self.value(b).cols();
                    let gb =
                        DenseMatrix::from_fn(out_grad.rows(), cb, |i, j| out_grad.get(i, ca + j));
                    self.accumulate(a, ga);
                    self.accumulate(b, gb);
                }
                Op::DropoutMask { input, mask } => {
                    let (input, mask) = (*input, Arc::clone(mask));
                    let gi = DenseMatrix::from_fn(out_grad.rows(), out_grad.cols(), |i, j| {
                        out_grad.get(i, j) * mask.get(i, j)
                    });
                    self.accumulate(input, gi);
                }
                Op::GatherRows { input, index } => {
                    let (input, index) = (*input, Arc::clone(index));
                    let src = self.value(input);
                    let mut gi = DenseMatrix::zeros(src.rows(), src.cols());
                    for (k, &r) in index.iter().enumerate() {
                        let row = gi.row_mut(r);
                        for j in 0..out_grad.cols() {
                            row[j] += out_grad.get(k, j);
                        }
                    }
                    self.accumulate(input, gi);
                }
                Op::ScatterAddRows { input, index } => {
                    let (input, index) = (*input, Arc::clone(index));
                    let rows = self.value(input).rows();
                    let gi = DenseMatrix::from_fn(rows, out_grad.cols(), |k, j| {
                        out_grad.get(index[k], j)
                    });
                    self.accumulate(input, gi);
                }
                Op::Transpose(a) => {
                    let a = *a;
                    self.accumulate(a, out_grad.transpose());
                }
                Op::Sum(a) => {
                    let a = *a;
                    let va = self.value(a);
                    let g = out_grad.get(0, 0);
                    let ga = DenseMatrix::from_fn(va.rows(), va.cols(), |_, _| g);
                    self.accumulate(a, ga);
                }
                Op::CrossEntropy { logits, labels, mask } => {
                    let (logits, labels, mask) = (*logits, Arc::clone(labels), Arc::clone(mask));
                    let lv = self.value(logits);
                    let scale = out_grad.get(0, 0) / mask.len() as f64;
                    let mut gi = DenseMatrix::zeros(lv.rows(), lv.cols());
                    for &r in mask.iter() {
                        let row = lv.row(r);
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
                        for c in 0..lv.cols() {
                            let p = (row[c] - max).exp() / sum;
                            let y = if labels[r] == c { 1.0 } else { 0.0 };
                            gi.set(r, c, scale * (p - y));
                        }
                    }
                    self.accumulate(logits, gi);
                }
            }
        }
        Ok(())
    }
}
