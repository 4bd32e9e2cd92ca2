//! Skip-gram with negative sampling over walk corpora.
//!
//! One trainer serves DeepWalk, Node2Vec, Struc2Vec and Metapath2Vec; the
//! `hetero_negatives` flag restricts noise draws to the context token's
//! node type (the type-constrained metapath2vec variant).
//!
//! Workers update the embedding matrices without locking (asynchronous SGD
//! with benign races, stored as relaxed atomics); a single worker gives
//! bit-exact reproducibility under a fixed seed.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::AliasTable;
use crate::walks::WalkCorpus;

/// Corpus vocabulary: token -> dense index, occurrence counts, and the
/// noise distribution weights `count^0.75`.
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<usize>,
    token_to_index: HashMap<usize, usize>,
    counts: Vec<u64>,
    noise_weights: Vec<f64>,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: usize) -> Option<usize> {
        self.token_to_index.get(&token).copied()
    }

    pub fn token(&self, index: usize) -> usize {
        self.tokens[index]
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }

    pub fn noise_weights(&self) -> &[f64] {
        &self.noise_weights
    }
}

/// Every token occurring at least once is kept (no min-count pruning);
/// indices follow first appearance in the corpus.
pub fn build_vocab(corpus: &WalkCorpus) -> Result<Vocab> {
    let mut tokens = Vec::new();
    let mut token_to_index = HashMap::new();
    let mut counts: Vec<u64> = Vec::new();
    for walk in &corpus.walks {
        for &t in walk {
            match token_to_index.get(&t) {
                Some(&i) => counts[i] += 1,
                None => {
                    token_to_index.insert(t, tokens.len());
                    tokens.push(t);
                    counts.push(1);
                }
            }
        }
    }
    if tokens.is_empty() {
        return Err(Error::data("cannot build a vocabulary from an empty corpus"));
    }
    let noise_weights = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    Ok(Vocab { tokens, token_to_index, counts, noise_weights })
}

#[derive(Debug, Clone)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub min_lr: f64,
    pub seed: u64,
    /// Restrict noise draws to the context token's type.
    pub hetero_negatives: bool,
    /// Frequent-token subsampling threshold; off by default because graph
    /// corpora are near-uniform.
    pub subsample: Option<f64>,
    pub threads: usize,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 128,
            window: 5,
            negatives: 5,
            epochs: 5,
            initial_lr: 0.025,
            min_lr: 1e-4,
            seed: 42,
            hetero_negatives: false,
            subsample: None,
            threads: 1,
        }
    }
}

impl SgnsConfig {
    fn validate(&self) -> Result<()> {
        if self.dim < 1 || self.window < 1 || self.negatives < 1 {
            return Err(Error::usage("dim, window and negatives must be >= 1"));
        }
        if !(self.initial_lr > self.min_lr && self.min_lr >= 0.0) {
            return Err(Error::usage("need initial_lr > min_lr >= 0"));
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable -ln(sigma(x)) = softplus(-x).
#[inline]
fn neg_log_sigmoid(x: f64) -> f64 {
    let z = -x;
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// One SGNS pair: loss and analytic gradients.
///
/// loss = -ln sigma(u.v) for a positive pair, -ln sigma(-u.v) for a noise
/// pair; grad_u = (sigma(u.v) - label) v and grad_v = (sigma(u.v) - label) u.
pub fn sgns_step(u: &[f64], v: &[f64], positive: bool) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if u.len() != v.len() {
        return Err(Error::usage("sgns_step vectors must share a dimension"));
    }
    if !u.iter().chain(v.iter()).all(|x| x.is_finite()) {
        return Err(Error::numeric("sgns_step received non-finite input"));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let label = if positive { 1.0 } else { 0.0 };
    let loss = if positive {
        neg_log_sigmoid(dot)
    } else {
        neg_log_sigmoid(-dot)
    };
    let coeff = sigmoid(dot) - label;
    let grad_u: Vec<f64> = v.iter().map(|x| coeff * x).collect();
    let grad_v: Vec<f64> = u.iter().map(|x| coeff * x).collect();
    Ok((loss, grad_u, grad_v))
}

/// Vocab indices of one node type plus an alias table over them.
type TypeTable = (Vec<usize>, AliasTable);

/// Noise distribution over vocabulary indices, optionally restricted per
/// node type. Draws are proportional to `count^0.75` within the allowed
/// index set.
pub(crate) struct NoiseSampler {
    global: AliasTable,
    /// For each type: the vocab indices of that type plus an alias table
    /// over them. Present only when type-restricted draws are requested.
    per_type: Option<Vec<Option<TypeTable>>>,
}

impl NoiseSampler {
    pub(crate) fn new(vocab: &Vocab, type_of: Option<&[usize]>) -> Result<NoiseSampler> {
        let global = AliasTable::build(vocab.noise_weights())?;
        let per_type = match type_of {
            None => None,
            Some(types) => {
                let num_types = types.iter().copied().max().map_or(0, |m| m + 1);
                let mut groups: Vec<Vec<usize>> = vec![Vec::new(); num_types];
                for i in 0..vocab.len() {
                    let tok = vocab.token(i);
                    let ty = *types.get(tok).ok_or_else(|| {
                        Error::usage(format!("token {tok} missing from the type map"))
                    })?;
                    groups[ty].push(i);
                }
                let tables = groups
                    .into_iter()
                    .map(|idxs| {
                        if idxs.is_empty() {
                            return None;
                        }
                        let w: Vec<f64> =
                            idxs.iter().map(|&i| vocab.noise_weights()[i]).collect();
                        AliasTable::build(&w).ok().map(|t| (idxs, t))
                    })
                    .collect();
                Some(tables)
            }
        };
        Ok(NoiseSampler { global, per_type })
    }

    /// Draw a vocab index; when `ty` is given and a per-type table exists,
    /// the draw is restricted to that type.
    pub(crate) fn draw(&self, rng: &mut impl Rng, ty: Option<usize>) -> usize {
        if let (Some(tables), Some(ty)) = (self.per_type.as_ref(), ty) {
            if let Some(Some((idxs, table))) = tables.get(ty) {
                return idxs[table.draw(rng)];
            }
        }
        self.global.draw(rng)
    }
}

/// f64 matrix shared across workers as relaxed atomics.
struct SharedMatrix {
    dim: usize,
    data: Vec<AtomicU64>,
}

impl SharedMatrix {
    fn new(rows: usize, dim: usize) -> Self {
        let data = (0..rows * dim)
            .map(|_| AtomicU64::new(0.0f64.to_bits()))
            .collect();
        SharedMatrix { dim, data }
    }

    #[inline]
    fn load(&self, row: usize, j: usize) -> f64 {
        f64::from_bits(self.data[row * self.dim + j].load(Ordering::Relaxed))
    }

    #[inline]
    fn store(&self, row: usize, j: usize, v: f64) {
        self.data[row * self.dim + j].store(v.to_bits(), Ordering::Relaxed);
    }

    fn to_vec(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|a| f64::from_bits(a.load(Ordering::Relaxed)))
            .collect()
    }
}

/// Train SGNS over a walk corpus. Returns the input vectors as the node
/// embedding; output vectors ride along for inspection.
///
/// For each center token, a window size is drawn uniformly in
/// `[1, window]`; every in-window pair gets one positive update and
/// `negatives` noise updates. The learning rate decays linearly from
/// `initial_lr` to `min_lr` over the total token count (the reference
/// word2vec schedule). Noise draws that hit the positive target are
/// skipped rather than resampled.
pub fn train_sgns(
    corpus: &WalkCorpus,
    vocab: &Vocab,
    cfg: &SgnsConfig,
    type_of: Option<&[usize]>,
) -> Result<EmbeddingTable> {
    cfg.validate()?;
    if cfg.hetero_negatives && type_of.is_none() {
        return Err(Error::usage(
            "hetero_negatives requires a token type map",
        ));
    }
    for walk in &corpus.walks {
        for &t in walk {
            if vocab.index_of(t).is_none() {
                return Err(Error::data(format!("corpus token {t} missing from vocab")));
            }
        }
    }

    let n = vocab.len();
    let dim = cfg.dim;
    let input = SharedMatrix::new(n, dim);
    let output = SharedMatrix::new(n, dim);
    // word2vec-style init: inputs uniform in (-0.5/dim, 0.5/dim), outputs
    // zero. Zero outputs put the first positive updates on the output side
    // (inputs see gradient 0 until outputs move), which is the documented
    // reason inputs cannot start at zero as well.
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for row in 0..n {
        for j in 0..dim {
            let v = (init_rng.gen::<f64>() - 0.5) / dim as f64;
            input.store(row, j, v);
        }
    }
    if cfg.epochs == 0 {
        return Ok(EmbeddingTable::set_matrices(dim, input.to_vec(), output.to_vec()));
    }

    let sampler = NoiseSampler::new(vocab, if cfg.hetero_negatives { type_of } else { None })?;
    let total_tokens = (corpus.num_tokens() * cfg.epochs).max(1);
    let tokens_done = AtomicUsize::new(0);
    let lr_span = cfg.initial_lr - cfg.min_lr;

    let total_freq: u64 = vocab.counts.iter().sum();
    let keep_prob = |idx: usize| -> f64 {
        match cfg.subsample {
            None => 1.0,
            Some(t) => {
                let f = vocab.counts[idx] as f64 / total_freq as f64;
                (t / f).sqrt().min(1.0)
            }
        }
    };

    let workers = cfg.threads.max(1).min(corpus.walks.len().max(1));
    let chunk = corpus.walks.len().div_ceil(workers);

    std::thread::scope(|scope| {
        for w in 0..workers {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(corpus.walks.len());
            if lo >= hi {
                break;
            }
            let walks = &corpus.walks[lo..hi];
            let input = &input;
            let output = &output;
            let sampler = &sampler;
            let tokens_done = &tokens_done;
            let keep_prob = &keep_prob;
            let mut rng =
                ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x57A7_5EED ^ (w as u64) << 32);
            scope.spawn(move || {
                let mut in_grad = vec![0.0f64; dim];
                for _ in 0..cfg.epochs {
                    for walk in walks {
                        let indices: Vec<usize> = walk
                            .iter()
                            .map(|&t| vocab.index_of(t).expect("checked above"))
                            .filter(|&i| {
                                let p = keep_prob(i);
                                p >= 1.0 || rng.gen::<f64>() < p
                            })
                            .collect();
                        for (pos, &center) in indices.iter().enumerate() {
                            let done = tokens_done.fetch_add(1, Ordering::Relaxed);
                            let lr = (cfg.initial_lr
                                - lr_span * done as f64 / total_tokens as f64)
                                .max(cfg.min_lr);
                            let b = rng.gen_range(1..=cfg.window);
                            let lo_ctx = pos.saturating_sub(b);
                            let hi_ctx = (pos + b).min(indices.len().saturating_sub(1));
                            for ctx_pos in lo_ctx..=hi_ctx {
                                if ctx_pos == pos {
                                    continue;
                                }
                                let context = indices[ctx_pos];
                                let ctx_type = type_of
                                    .filter(|_| cfg.hetero_negatives)
                                    .map(|tys| tys[vocab.token(context)]);
                                in_grad.iter_mut().for_each(|g| *g = 0.0);
                                for k in 0..=cfg.negatives {
                                    let (target, label) = if k == 0 {
                                        (context, 1.0)
                                    } else {
                                        let neg = sampler.draw(&mut rng, ctx_type);
                                        if neg == context {
                                            continue;
                                        }
                                        (neg, 0.0)
                                    };
                                    let mut dot = 0.0;
                                    for j in 0..dim {
                                        dot += input.load(center, j) * output.load(target, j);
                                    }
                                    let coeff = (sigmoid(dot) - label) * lr;
                                    for j in 0..dim {
                                        let out_j = output.load(target, j);
                                        in_grad[j] += coeff * out_j;
                                        output.store(
                                            target,
                                            j,
                                            out_j - coeff * input.load(center, j),
                                        );
                                    }
                                }
                                for j in 0..dim {
                                    input.store(center, j, input.load(center, j) - in_grad[j]);
                                }
                            }
                        }
                    }
                }
            });
        }
    });

    let table = EmbeddingTable::set_matrices(dim, input.to_vec(), output.to_vec());
    if !table.is_finite() {
        return Err(Error::numeric("sgns training produced non-finite embeddings"));
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::cosine;
    use crate::graph::HomoGraph;
    use crate::walks::{uniform_walks, TokenSpace, WalkConfig};

    fn corpus(walks: Vec<Vec<usize>>) -> WalkCorpus {
        WalkCorpus { walks, token_space: TokenSpace::GraphNodes }
    }

    #[test]
    fn vocab_counts_and_noise_weights() {
        let v = build_vocab(&corpus(vec![vec![7, 9], vec![7]])).unwrap();
        assert_eq!(v.len(), 2);
        let a = v.index_of(7).unwrap();
        let b = v.index_of(9).unwrap();
        assert_eq!(v.count(a), 2);
        assert_eq!(v.count(b), 1);
        assert!((v.noise_weights()[a] - 2f64.powf(0.75)).abs() < 1e-12);
        assert!((v.noise_weights()[b] - 1.0).abs() < 1e-12);
        // Noise probability of the frequent token, by direct evaluation:
        // 2^0.75 / (2^0.75 + 1) = 0.62711...
        let p = v.noise_weights()[a] / (v.noise_weights()[a] + v.noise_weights()[b]);
        assert!((p - 2f64.powf(0.75) / (2f64.powf(0.75) + 1.0)).abs() < 1e-12);
        assert!((p - 0.6270).abs() < 2e-4);
    }

    #[test]
    fn vocab_single_token() {
        let v = build_vocab(&corpus(vec![vec![3]])).unwrap();
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn vocab_empty_corpus_is_data_error() {
        assert!(matches!(
            build_vocab(&corpus(vec![])),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn step_loss_at_zero_dot_is_ln2() {
        let (loss, _, _) = sgns_step(&[1.0, 0.0], &[0.0, 1.0], true).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn step_zero_output_vector_gives_zero_input_grad() {
        let (_, grad_u, _) = sgns_step(&[0.3, -0.7, 0.2], &[0.0, 0.0, 0.0], true).unwrap();
        assert!(grad_u.iter().all(|&g| g == 0.0));
        let (_, grad_u, _) = sgns_step(&[0.3, -0.7, 0.2], &[0.0, 0.0, 0.0], false).unwrap();
        assert!(grad_u.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn step_rejects_non_finite() {
        assert!(sgns_step(&[f64::NAN], &[1.0], true).is_err());
    }

    #[test]
    fn step_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let eps = 1e-6;
        for case in 0..100 {
            let dim = 4;
            let u: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let positive = case % 2 == 0;
            let (_, grad_u, grad_v) = sgns_step(&u, &v, positive).unwrap();
            for j in 0..dim {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[j] += eps;
                dn[j] -= eps;
                let fd = (sgns_step(&up, &v, positive).unwrap().0
                    - sgns_step(&dn, &v, positive).unwrap().0)
                    / (2.0 * eps);
                let rel = (fd - grad_u[j]).abs() / grad_u[j].abs().max(1e-2);
                assert!(rel <= 1e-7, "case {case} grad_u[{j}]: fd {fd} vs {}", grad_u[j]);

                let mut vp = v.clone();
                let mut vn = v.clone();
                vp[j] += eps;
                vn[j] -= eps;
                let fd = (sgns_step(&u, &vp, positive).unwrap().0
                    - sgns_step(&u, &vn, positive).unwrap().0)
                    / (2.0 * eps);
                let rel = (fd - grad_v[j]).abs() / grad_v[j].abs().max(1e-2);
                assert!(rel <= 1e-7, "case {case} grad_v[{j}]");
            }
        }
    }

    #[test]
    fn step_loss_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let u: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let (l1, _, _) = sgns_step(&u, &v, true).unwrap();
            let (l0, _, _) = sgns_step(&u, &v, false).unwrap();
            assert!(l1 >= 0.0 && l0 >= 0.0);
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let c = corpus(vec![vec![0, 1, 2], vec![2, 1]]);
        let v = build_vocab(&c).unwrap();
        let cfg = SgnsConfig { dim: 8, epochs: 0, ..Default::default() };
        let a = train_sgns(&c, &v, &cfg, None).unwrap();
        let b = train_sgns(&c, &v, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert!(a.output_data().iter().all(|&x| x == 0.0));
        assert!(a
            .input_data()
            .iter()
            .all(|&x| x.abs() < 0.5 / 8.0 + 1e-12 && x != 0.0));
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let c = corpus(vec![vec![0, 1, 2, 0, 1], vec![2, 0, 1, 2]]);
        let v = build_vocab(&c).unwrap();
        let cfg = SgnsConfig { dim: 6, epochs: 3, window: 2, negatives: 2, ..Default::default() };
        let a = train_sgns(&c, &v, &cfg, None).unwrap();
        let b = train_sgns(&c, &v, &cfg, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hetero_negatives_without_types_is_usage_error() {
        let c = corpus(vec![vec![0, 1]]);
        let v = build_vocab(&c).unwrap();
        let cfg = SgnsConfig { hetero_negatives: true, ..Default::default() };
        assert!(matches!(
            train_sgns(&c, &v, &cfg, None),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn type_restricted_noise_draws_stay_in_type() {
        // Tokens 0,1 are type 0; tokens 2,3 are type 1.
        let c = corpus(vec![vec![0, 2, 1, 3, 0, 2, 3, 1]]);
        let v = build_vocab(&c).unwrap();
        let types = vec![0usize, 0, 1, 1];
        let sampler = NoiseSampler::new(&v, Some(&types)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let idx = sampler.draw(&mut rng, Some(1));
            assert_eq!(types[v.token(idx)], 1);
            let idx = sampler.draw(&mut rng, Some(0));
            assert_eq!(types[v.token(idx)], 0);
        }
    }

    #[test]
    fn subsampling_changes_the_update_stream() {
        // A heavily skewed corpus: token 0 dominates. With an aggressive
        // threshold it is mostly dropped, so training diverges from the
        // unsubsampled run but stays finite and deterministic.
        let walks: Vec<Vec<usize>> = (0..20)
            .map(|i| vec![0, i % 3, 0, (i + 1) % 3, 0])
            .collect();
        let c = corpus(walks);
        let v = build_vocab(&c).unwrap();
        let base = SgnsConfig { dim: 8, epochs: 2, window: 2, ..Default::default() };
        let plain = train_sgns(&c, &v, &base, None).unwrap();
        let sub_cfg = SgnsConfig { subsample: Some(1e-3), ..base.clone() };
        let sub_a = train_sgns(&c, &v, &sub_cfg, None).unwrap();
        let sub_b = train_sgns(&c, &v, &sub_cfg, None).unwrap();
        assert_eq!(sub_a, sub_b);
        assert!(sub_a.is_finite());
        assert_ne!(plain.input_data(), sub_a.input_data());
    }

    #[test]
    fn cliques_separate_in_embedding_space() {
        // Two disconnected K6 cliques; intra-clique cosine similarity must
        // exceed inter-clique similarity after training.
        let mut edges = Vec::new();
        for a in 0..6usize {
            for b in a + 1..6 {
                edges.push((a, b));
                edges.push((a + 6, b + 6));
            }
        }
        let g = HomoGraph::build(&edges, 12, false).unwrap();
        let wcfg = WalkConfig { walks_per_node: 8, walk_length: 20, ..Default::default() };
        let corpus = uniform_walks(&g, &wcfg).unwrap();
        let vocab = build_vocab(&corpus).unwrap();
        let cfg = SgnsConfig { dim: 16, epochs: 4, window: 4, ..Default::default() };
        let table = train_sgns(&corpus, &vocab, &cfg, None).unwrap();

        let row = |node: usize| table.input_row(vocab.index_of(node).unwrap());
        let mut intra = Vec::new();
        let mut inter = Vec::new();
        for a in 0..12usize {
            for b in a + 1..12 {
                let c = cosine(row(a), row(b));
                if (a < 6) == (b < 6) {
                    intra.push(c);
                } else {
                    inter.push(c);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&intra) > mean(&inter),
            "intra {} <= inter {}",
            mean(&intra),
            mean(&inter)
        );
    }
}
