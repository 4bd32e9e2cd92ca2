//! Downstream evaluation of node embeddings: stratified splits, an
//! in-repo multinomial logistic regression probe, and classification
//! metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::logging::warn_log;

/// Embedding rows with aligned class labels.
#[derive(Debug, Clone)]
pub struct LabeledEmbeddingSet {
    pub vectors: DenseMatrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledEmbeddingSet {
    pub fn new(vectors: DenseMatrix, labels: Vec<usize>) -> Result<LabeledEmbeddingSet> {
        if vectors.rows() != labels.len() {
            return Err(Error::data(format!(
                "{} embedding rows but {} labels",
                vectors.rows(),
                labels.len()
            )));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(LabeledEmbeddingSet { vectors, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn restrict(&self, idx: &[usize]) -> (DenseMatrix, Vec<usize>) {
        let m = DenseMatrix::from_fn(idx.len(), self.vectors.cols(), |i, j| {
            self.vectors.get(idx[i], j)
        });
        let y = idx.iter().map(|&i| self.labels[i]).collect();
        (m, y)
    }
}

/// Stratified train/test node split.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub ratio: f64,
    pub seed: u64,
}

/// Stratified shuffle split: each class contributes floor(ratio * count)
/// nodes to train (at least 1 when the class has two or more members). A
/// single-member class goes to train with a warning.
pub fn split_nodes(labels: &[usize], train_ratio: f64, seed: u64) -> Result<Split> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::usage("train_ratio must lie strictly between 0 and 1"));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() == 1 {
            warn_log!("class {c} has a single member; assigning it to train");
            train.push(members[0]);
            continue;
        }
        for i in (1..members.len()).rev() {
            let j = rng.gen_range(0..=i);
            members.swap(i, j);
        }
        let take = ((train_ratio * members.len() as f64).floor() as usize).max(1);
        train.extend_from_slice(&members[..take]);
        test.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test, ratio: train_ratio, seed })
}

/// Mean softmax cross-entropy (plus `l2 * ||W||^2`) and its gradient in
/// `W`, for features `x` that already carry the bias column.
pub fn softmax_loss_and_grad(
    x: &DenseMatrix,
    y: &[usize],
    w: &DenseMatrix,
    l2: f64,
) -> (f64, DenseMatrix) {
    let n = x.rows();
    let classes = w.cols();
    let logits = x.matmul(w);
    let mut loss = 0.0;
    let mut grad_logits = DenseMatrix::zeros(n, classes);
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        loss += max + sum.ln() - row[y[i]];
        for c in 0..classes {
            let p = (row[c] - max).exp() / sum;
            grad_logits.set(i, c, (p - f64::from(y[i] == c)) / n as f64);
        }
    }
    loss /= n as f64;
    let mut grad = x.transpose().matmul(&grad_logits);
    if l2 > 0.0 {
        loss += l2 * w.data().iter().map(|v| v * v).sum::<f64>();
        for k in 0..grad.data().len() {
            grad.data_mut()[k] += 2.0 * l2 * w.data()[k];
        }
    }
    (loss, grad)
}

/// Append the constant bias column of ones.
pub fn with_bias_column(x: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(x.rows(), x.cols() + 1, |i, j| {
        if j < x.cols() {
            x.get(i, j)
        } else {
            1.0
        }
    })
}

/// Multinomial logistic regression by full-batch gradient descent with
/// backtracking step halving; the loss never increases. Returns the
/// `(d+1) x classes` weight matrix (bias row last).
pub fn train_logreg(
    set: &LabeledEmbeddingSet,
    train_idx: &[usize],
    l2: f64,
    iters: usize,
    lr: f64,
) -> Result<DenseMatrix> {
    let (x_raw, y) = set.restrict(train_idx);
    let classes_present: std::collections::HashSet<usize> = y.iter().copied().collect();
    if classes_present.len() < 2 {
        return Err(Error::usage(
            "logistic regression needs at least two classes in train",
        ));
    }
    let x = with_bias_column(&x_raw);
    let classes = set.classes;
    let mut w = DenseMatrix::zeros(x.cols(), classes);
    let (mut loss, mut grad) = softmax_loss_and_grad(&x, &y, &w, l2);
    for _ in 0..iters {
        let mut step = lr;
        let mut improved = false;
        while step >= 1e-14 {
            let cand = w.sub(&grad.scale(step));
            let (cand_loss, cand_grad) = softmax_loss_and_grad(&x, &y, &cand, l2);
            if cand_loss <= loss {
                w = cand;
                loss = cand_loss;
                grad = cand_grad;
                improved = true;
                break;
            }
            step /= 2.0;
        }
        if !improved {
            break;
        }
    }
    Ok(w)
}

/// Argmax class predictions for a weight matrix from [`train_logreg`].
pub fn predict(w: &DenseMatrix, vectors: &DenseMatrix) -> Result<Vec<usize>> {
    if w.rows() != vectors.cols() + 1 {
        return Err(Error::usage(format!(
            "weight matrix expects {} features, embeddings have {}",
            w.rows() - 1,
            vectors.cols()
        )));
    }
    let x = with_bias_column(vectors);
    let logits = x.matmul(w);
    Ok((0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            (0..row.len())
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

/// Accuracy, micro-F1 (pooled over classes) and macro-F1 (unweighted mean
/// of per-class F1, classes absent from the truth excluded).
pub fn classification_metrics(truth: &[usize], predicted: &[usize]) -> ClassificationMetrics {
    assert_eq!(truth.len(), predicted.len());
    let n = truth.len();
    let classes = truth
        .iter()
        .chain(predicted.iter())
        .max()
        .map_or(0, |m| m + 1);
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fnv = vec![0usize; classes];
    let mut correct = 0usize;
    for (&t, &p) in truth.iter().zip(predicted) {
        if t == p {
            correct += 1;
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fnv[t] += 1;
        }
    }
    let accuracy = correct as f64 / n as f64;
    // Micro-F1 pools counts over classes.
    let tp_sum: usize = tp.iter().sum();
    let fp_sum: usize = fp.iter().sum();
    let fn_sum: usize = fnv.iter().sum();
    let micro_f1 = if 2 * tp_sum + fp_sum + fn_sum == 0 {
        0.0
    } else {
        2.0 * tp_sum as f64 / (2 * tp_sum + fp_sum + fn_sum) as f64
    };
    // Macro-F1 over classes present in the truth.
    let mut f1_sum = 0.0;
    let mut present = 0usize;
    for c in 0..classes {
        if tp[c] + fnv[c] == 0 {
            continue;
        }
        present += 1;
        let denom = 2 * tp[c] + fp[c] + fnv[c];
        if denom > 0 {
            f1_sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    let macro_f1 = if present > 0 { f1_sum / present as f64 } else { 0.0 };
    ClassificationMetrics { accuracy, micro_f1, macro_f1 }
}

/// Score a trained probe on the test rows of a labeled set.
pub fn classify_and_score(
    w: &DenseMatrix,
    set: &LabeledEmbeddingSet,
    test_idx: &[usize],
) -> Result<ClassificationMetrics> {
    let (x, y) = set.restrict(test_idx);
    let preds = predict(w, &x)?;
    Ok(classification_metrics(&y, &preds))
}
