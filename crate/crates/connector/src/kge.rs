//! Translation-based knowledge-graph embeddings: TransE (L1/L2), TransH,
//! TransR, trained with margin ranking against corrupted triples and
//! evaluated with raw/filtered link-prediction ranking.
//!
//! Scores are distances: lower means more plausible.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgeVariant {
    TransEL1,
    TransEL2,
    TransH,
    TransR,
}

impl KgeVariant {
    pub fn name(&self) -> &'static str {
        match self {
            KgeVariant::TransEL1 => "transe-l1",
            KgeVariant::TransEL2 => "transe-l2",
            KgeVariant::TransH => "transh",
            KgeVariant::TransR => "transr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionMode {
    Uniform,
    Bernoulli,
}

#[derive(Debug, Clone)]
pub struct KgeConfig {
    pub variant: KgeVariant,
    pub d_e: usize,
    pub d_r: usize,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub corruption: CorruptionMode,
    pub seed: u64,
}

impl Default for KgeConfig {
    fn default() -> Self {
        KgeConfig {
            variant: KgeVariant::TransEL2,
            d_e: 50,
            d_r: 50,
            margin: 1.0,
            lr: 0.01,
            epochs: 500,
            batch_size: 128,
            corruption: CorruptionMode::Uniform,
            seed: 42,
        }
    }
}

impl KgeConfig {
    fn validate(&self) -> Result<()> {
        if self.d_e < 1 || self.d_r < 1 {
            return Err(Error::usage("embedding dimensions must be >= 1"));
        }
        if !self.margin.is_finite() || self.margin <= 0.0 {
            return Err(Error::usage("margin must be positive"));
        }
        if matches!(
            self.variant,
            KgeVariant::TransEL1 | KgeVariant::TransEL2 | KgeVariant::TransH
        ) && self.d_e != self.d_r
        {
            return Err(Error::usage(
                "TransE and TransH require equal entity and relation dimensions",
            ));
        }
        if self.batch_size < 1 {
            return Err(Error::usage("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Model parameters. TransH adds one unit normal per relation; TransR adds
/// one `d_e x d_r` projection matrix per relation.
#[derive(Debug, Clone, PartialEq)]
pub struct KgeModel {
    pub variant: KgeVariant,
    pub d_e: usize,
    pub d_r: usize,
    num_entities: usize,
    num_relations: usize,
    entity: Vec<f64>,
    relation: Vec<f64>,
    normals: Vec<f64>,
    maps: Vec<f64>,
}

impl KgeModel {
    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn entity_vec(&self, e: usize) -> &[f64] {
        &self.entity[e * self.d_e..(e + 1) * self.d_e]
    }

    fn entity_vec_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.entity[e * self.d_e..(e + 1) * self.d_e]
    }

    pub fn relation_vec(&self, r: usize) -> &[f64] {
        &self.relation[r * self.d_r..(r + 1) * self.d_r]
    }

    pub fn normal_vec(&self, r: usize) -> Option<&[f64]> {
        if self.variant == KgeVariant::TransH {
            Some(&self.normals[r * self.d_e..(r + 1) * self.d_e])
        } else {
            None
        }
    }

    pub fn map_matrix(&self, r: usize) -> Option<&[f64]> {
        if self.variant == KgeVariant::TransR {
            let sz = self.d_e * self.d_r;
            Some(&self.maps[r * sz..(r + 1) * sz])
        } else {
            None
        }
    }

    /// Plausibility score of a triple; lower is more plausible.
    pub fn score(&self, head: usize, rel: usize, tail: usize) -> Result<f64> {
        if head >= self.num_entities || tail >= self.num_entities {
            return Err(Error::usage(format!(
                "entity id out of range ({head} or {tail} >= {})",
                self.num_entities
            )));
        }
        if rel >= self.num_relations {
            return Err(Error::usage(format!(
                "relation id {rel} out of range (>= {})",
                self.num_relations
            )));
        }
        Ok(score_vectors(
            self.variant,
            self.entity_vec(head),
            self.relation_vec(rel),
            self.entity_vec(tail),
            self.normal_vec(rel),
            self.map_matrix(rel),
        ))
    }

    /// Named tensors with shapes, for persistence.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let mut out = vec![
            (
                "entity",
                vec![self.num_entities, self.d_e],
                self.entity.as_slice(),
            ),
            (
                "relation",
                vec![self.num_relations, self.d_r],
                self.relation.as_slice(),
            ),
        ];
        if self.variant == KgeVariant::TransH {
            out.push((
                "normals",
                vec![self.num_relations, self.d_e],
                self.normals.as_slice(),
            ));
        }
        if self.variant == KgeVariant::TransR {
            out.push((
                "maps",
                vec![self.num_relations, self.d_e * self.d_r],
                self.maps.as_slice(),
            ));
        }
        out
    }

    /// Rebuild a model from persisted tensors.
    pub fn from_tensors(
        variant: KgeVariant,
        d_e: usize,
        d_r: usize,
        num_entities: usize,
        num_relations: usize,
        mut tensors: HashMap<String, Vec<f64>>,
    ) -> Result<KgeModel> {
        let mut take = |name: &str, expect: usize| -> Result<Vec<f64>> {
            let t = tensors
                .remove(name)
                .ok_or_else(|| Error::data(format!("checkpoint missing tensor {name:?}")))?;
            if t.len() != expect {
                return Err(Error::data(format!(
                    "tensor {name:?} has {} values, expected {expect}",
                    t.len()
                )));
            }
            Ok(t)
        };
        let entity = take("entity", num_entities * d_e)?;
        let relation = take("relation", num_relations * d_r)?;
        let normals = if variant == KgeVariant::TransH {
            take("normals", num_relations * d_e)?
        } else {
            Vec::new()
        };
        let maps = if variant == KgeVariant::TransR {
            take("maps", num_relations * d_e * d_r)?
        } else {
            Vec::new()
        };
        Ok(KgeModel {
            variant,
            d_e,
            d_r,
            num_entities,
            num_relations,
            entity,
            relation,
            normals,
            maps,
        })
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Project `e` onto the hyperplane with unit normal `w`.
fn project(e: &[f64], w: &[f64]) -> Vec<f64> {
    let we: f64 = w.iter().zip(e).map(|(a, b)| a * b).sum();
    e.iter().zip(w).map(|(x, wi)| x - we * wi).collect()
}

/// Score from raw vectors. `normal` is required for TransH, `map`
/// (row-major `d_e x d_r`) for TransR.
pub fn score_vectors(
    variant: KgeVariant,
    h: &[f64],
    r: &[f64],
    t: &[f64],
    normal: Option<&[f64]>,
    map: Option<&[f64]>,
) -> f64 {
    match variant {
        KgeVariant::TransEL1 => h
            .iter()
            .zip(r)
            .zip(t)
            .map(|((hi, ri), ti)| (hi + ri - ti).abs())
            .sum(),
        KgeVariant::TransEL2 => {
            let ss: f64 = h
                .iter()
                .zip(r)
                .zip(t)
                .map(|((hi, ri), ti)| (hi + ri - ti).powi(2))
                .sum();
            ss.sqrt()
        }
        KgeVariant::TransH => {
            let w = normal.expect("TransH needs a relation normal");
            let hp = project(h, w);
            let tp = project(t, w);
            let ss: f64 = hp
                .iter()
                .zip(r)
                .zip(&tp)
                .map(|((hi, ri), ti)| (hi + ri - ti).powi(2))
                .sum();
            ss.sqrt()
        }
        KgeVariant::TransR => {
            let m = map.expect("TransR needs a relation map");
            let d_e = h.len();
            let d_r = r.len();
            let mut ss = 0.0;
            for j in 0..d_r {
                let mut dj = r[j];
                for i in 0..d_e {
                    dj += (h[i] - t[i]) * m[i * d_r + j];
                }
                ss += dj * dj;
            }
            ss.sqrt()
        }
    }
}

/// Score and its analytic gradients with respect to every input.
#[derive(Debug, Clone)]
pub struct ScoreGrads {
    pub score: f64,
    pub grad_head: Vec<f64>,
    pub grad_rel: Vec<f64>,
    pub grad_tail: Vec<f64>,
    pub grad_normal: Option<Vec<f64>>,
    pub grad_map: Option<Vec<f64>>,
}

pub fn score_vector_grads(
    variant: KgeVariant,
    h: &[f64],
    r: &[f64],
    t: &[f64],
    normal: Option<&[f64]>,
    map: Option<&[f64]>,
) -> ScoreGrads {
    match variant {
        KgeVariant::TransEL1 => {
            let d: Vec<f64> = h
                .iter()
                .zip(r)
                .zip(t)
                .map(|((hi, ri), ti)| hi + ri - ti)
                .collect();
            let score = d.iter().map(|x| x.abs()).sum();
            let sign: Vec<f64> = d
                .iter()
                .map(|&x| if x == 0.0 { 0.0 } else { x.signum() })
                .collect();
            ScoreGrads {
                score,
                grad_head: sign.clone(),
                grad_rel: sign.clone(),
                grad_tail: sign.iter().map(|x| -x).collect(),
                grad_normal: None,
                grad_map: None,
            }
        }
        KgeVariant::TransEL2 => {
            let d: Vec<f64> = h
                .iter()
                .zip(r)
                .zip(t)
                .map(|((hi, ri), ti)| hi + ri - ti)
                .collect();
            let score = norm2(&d);
            let u: Vec<f64> = if score > 0.0 {
                d.iter().map(|x| x / score).collect()
            } else {
                vec![0.0; d.len()]
            };
            ScoreGrads {
                score,
                grad_head: u.clone(),
                grad_rel: u.clone(),
                grad_tail: u.iter().map(|x| -x).collect(),
                grad_normal: None,
                grad_map: None,
            }
        }
        KgeVariant::TransH => {
            let w = normal.expect("TransH needs a relation normal");
            let hp = project(h, w);
            let tp = project(t, w);
            let d: Vec<f64> = hp
                .iter()
                .zip(r)
                .zip(&tp)
                .map(|((hi, ri), ti)| hi + ri - ti)
                .collect();
            let score = norm2(&d);
            let u: Vec<f64> = if score > 0.0 {
                d.iter().map(|x| x / score).collect()
            } else {
                vec![0.0; d.len()]
            };
            // d/dh ||P h + r - P t|| = P u with P = I - w w^T (symmetric).
            let pu = project(&u, w);
            let z: Vec<f64> = h.iter().zip(t).map(|(a, b)| a - b).collect();
            let uw: f64 = u.iter().zip(w).map(|(a, b)| a * b).sum();
            let wz: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum();
            let grad_normal: Vec<f64> = z
                .iter()
                .zip(&u)
                .map(|(zi, ui)| -(uw * zi + wz * ui))
                .collect();
            ScoreGrads {
                score,
                grad_head: pu.clone(),
                grad_rel: u,
                grad_tail: pu.iter().map(|x| -x).collect(),
                grad_normal: Some(grad_normal),
                grad_map: None,
            }
        }
        KgeVariant::TransR => {
            let m = map.expect("TransR needs a relation map");
            let d_e = h.len();
            let d_r = r.len();
            let z: Vec<f64> = h.iter().zip(t).map(|(a, b)| a - b).collect();
            let mut d = r.to_vec();
            for (i, &zi) in z.iter().enumerate() {
                for j in 0..d_r {
                    d[j] += zi * m[i * d_r + j];
                }
            }
            let score = norm2(&d);
            let u: Vec<f64> = if score > 0.0 {
                d.iter().map(|x| x / score).collect()
            } else {
                vec![0.0; d.len()]
            };
            let mut grad_head = vec![0.0; d_e];
            for i in 0..d_e {
                for j in 0..d_r {
                    grad_head[i] += m[i * d_r + j] * u[j];
                }
            }
            let grad_map: Vec<f64> = (0..d_e * d_r)
                .map(|k| z[k / d_r] * u[k % d_r])
                .collect();
            ScoreGrads {
                score,
                grad_head: grad_head.clone(),
                grad_rel: u,
                grad_tail: grad_head.iter().map(|x| -x).collect(),
                grad_normal: None,
                grad_map: Some(grad_map),
            }
        }
    }
}

/// Entity count plus per-relation head-replacement probabilities for
/// triple corruption. Bernoulli mode replaces the head with probability
/// `tph / (tph + hpt)`, both statistics taken from the train split.
#[derive(Debug, Clone)]
pub struct Corruptor {
    num_entities: usize,
    head_prob: Vec<f64>,
}

impl Corruptor {
    pub fn new(kg: &KnowledgeGraph, mode: CorruptionMode) -> Corruptor {
        let nr = kg.num_relations();
        let head_prob = match mode {
            CorruptionMode::Uniform => vec![0.5; nr],
            CorruptionMode::Bernoulli => {
                let mut count = vec![0usize; nr];
                let mut heads: Vec<HashSet<usize>> = vec![HashSet::new(); nr];
                let mut tails: Vec<HashSet<usize>> = vec![HashSet::new(); nr];
                for t in &kg.train {
                    count[t.rel] += 1;
                    heads[t.rel].insert(t.head);
                    tails[t.rel].insert(t.tail);
                }
                (0..nr)
                    .map(|r| {
                        if count[r] == 0 {
                            return 0.5;
                        }
                        let tph = count[r] as f64 / heads[r].len() as f64;
                        let hpt = count[r] as f64 / tails[r].len() as f64;
                        tph / (tph + hpt)
                    })
                    .collect()
            }
        };
        Corruptor {
            num_entities: kg.num_entities(),
            head_prob,
        }
    }

    pub fn head_replacement_prob(&self, rel: usize) -> f64 {
        self.head_prob[rel]
    }

    /// Replace the head or tail with a random entity and report which side
    /// was chosen. The result may collide with a known triple (raw
    /// corruption).
    pub fn corrupt_with_side(&self, triple: &Triple, rng: &mut impl Rng) -> (Triple, bool) {
        let replace_head = rng.gen::<f64>() < self.head_prob[triple.rel];
        let replacement = rng.gen_range(0..self.num_entities);
        let corrupted = if replace_head {
            Triple { head: replacement, ..*triple }
        } else {
            Triple { tail: replacement, ..*triple }
        };
        (corrupted, replace_head)
    }

    pub fn corrupt(&self, triple: &Triple, rng: &mut impl Rng) -> Triple {
        self.corrupt_with_side(triple, rng).0
    }
}

/// One-shot corruption helper matching the module contract; training uses
/// a prebuilt [`Corruptor`].
pub fn corrupt(
    triple: &Triple,
    kg: &KnowledgeGraph,
    mode: CorruptionMode,
    rng: &mut impl Rng,
) -> Triple {
    Corruptor::new(kg, mode).corrupt(triple, rng)
}

/// Margin ranking term: max(0, margin + pos - neg).
pub fn margin_loss(margin: f64, pos_score: f64, neg_score: f64) -> f64 {
    (margin + pos_score - neg_score).max(0.0)
}

fn init_unit_rows(rng: &mut impl Rng, rows: usize, dim: usize) -> Vec<f64> {
    let bound = 6.0 / (dim as f64).sqrt();
    let mut data = vec![0.0; rows * dim];
    for row in 0..rows {
        let slice = &mut data[row * dim..(row + 1) * dim];
        for v in slice.iter_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        let n = norm2(slice);
        if n > 0.0 {
            for v in slice.iter_mut() {
                *v /= n;
            }
        }
    }
    data
}

/// Incremental trainer; exists so checkpoints can resume mid-run with an
/// identical rng stream.
pub struct KgeTrainer {
    pub model: KgeModel,
    pub cfg: KgeConfig,
    pub epochs_done: usize,
    pub loss_trajectory: Vec<f64>,
    rng: ChaCha8Rng,
    corruptor: Corruptor,
}

impl KgeTrainer {
    pub fn new(kg: &KnowledgeGraph, cfg: &KgeConfig) -> Result<KgeTrainer> {
        cfg.validate()?;
        if kg.train.is_empty() {
            return Err(Error::data("train split is empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let ne = kg.num_entities();
        let nr = kg.num_relations();
        let entity = init_unit_rows(&mut rng, ne, cfg.d_e);
        let relation = init_unit_rows(&mut rng, nr, cfg.d_r);
        let normals = if cfg.variant == KgeVariant::TransH {
            init_unit_rows(&mut rng, nr, cfg.d_e)
        } else {
            Vec::new()
        };
        let maps = if cfg.variant == KgeVariant::TransR {
            // Identity padded or truncated to d_e x d_r.
            let mut m = vec![0.0; nr * cfg.d_e * cfg.d_r];
            for r in 0..nr {
                for i in 0..cfg.d_e.min(cfg.d_r) {
                    m[r * cfg.d_e * cfg.d_r + i * cfg.d_r + i] = 1.0;
                }
            }
            m
        } else {
            Vec::new()
        };
        let model = KgeModel {
            variant: cfg.variant,
            d_e: cfg.d_e,
            d_r: cfg.d_r,
            num_entities: ne,
            num_relations: nr,
            entity,
            relation,
            normals,
            maps,
        };
        Ok(KgeTrainer {
            model,
            cfg: cfg.clone(),
            epochs_done: 0,
            loss_trajectory: Vec::new(),
            rng,
            corruptor: Corruptor::new(kg, cfg.corruption),
        })
    }

    /// Resume from persisted state.
    pub fn resume(
        kg: &KnowledgeGraph,
        cfg: &KgeConfig,
        model: KgeModel,
        epochs_done: usize,
        rng_word_pos: u128,
    ) -> Result<KgeTrainer> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_word_pos(rng_word_pos);
        Ok(KgeTrainer {
            model,
            cfg: cfg.clone(),
            epochs_done,
            loss_trajectory: Vec::new(),
            rng,
            corruptor: Corruptor::new(kg, cfg.corruption),
        })
    }

    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Run `epochs` additional epochs of mini-batch SGD on the margin
    /// ranking loss. After each batch, entity vectors outside the unit
    /// ball are rescaled onto it and TransH normals are renormalized.
    pub fn run_epochs(&mut self, kg: &KnowledgeGraph, epochs: usize) -> Result<()> {
        let cfg = self.cfg.clone();
        let n_train = kg.train.len();
        for _ in 0..epochs {
            let mut order: Vec<usize> = (0..n_train).collect();
            for i in (1..order.len()).rev() {
                let j = self.rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let mut epoch_loss = 0.0;
            for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
                // Accumulated batch gradients, keyed by row id.
                let mut g_ent: HashMap<usize, Vec<f64>> = HashMap::new();
                let mut g_rel: HashMap<usize, Vec<f64>> = HashMap::new();
                let mut g_norm: HashMap<usize, Vec<f64>> = HashMap::new();
                let mut g_map: HashMap<usize, Vec<f64>> = HashMap::new();
                for &ti in batch {
                    let pos = kg.train[ti];
                    let neg = self.corruptor.corrupt(&pos, &mut self.rng);
                    let m = &self.model;
                    let sp = score_vector_grads(
                        m.variant,
                        m.entity_vec(pos.head),
                        m.relation_vec(pos.rel),
                        m.entity_vec(pos.tail),
                        m.normal_vec(pos.rel),
                        m.map_matrix(pos.rel),
                    );
                    let sn = score_vector_grads(
                        m.variant,
                        m.entity_vec(neg.head),
                        m.relation_vec(neg.rel),
                        m.entity_vec(neg.tail),
                        m.normal_vec(neg.rel),
                        m.map_matrix(neg.rel),
                    );
                    if margin_loss(cfg.margin, sp.score, sn.score) <= 0.0 {
                        continue;
                    }
                    epoch_loss += cfg.margin + sp.score - sn.score;
                    let add = |acc: &mut HashMap<usize, Vec<f64>>,
                                   key: usize,
                                   grad: &[f64],
                                   sign: f64| {
                        let slot = acc.entry(key).or_insert_with(|| vec![0.0; grad.len()]);
                        for (s, g) in slot.iter_mut().zip(grad) {
                            *s += sign * g;
                        }
                    };
                    add(&mut g_ent, pos.head, &sp.grad_head, 1.0);
                    add(&mut g_ent, pos.tail, &sp.grad_tail, 1.0);
                    add(&mut g_rel, pos.rel, &sp.grad_rel, 1.0);
                    add(&mut g_ent, neg.head, &sn.grad_head, -1.0);
                    add(&mut g_ent, neg.tail, &sn.grad_tail, -1.0);
                    add(&mut g_rel, neg.rel, &sn.grad_rel, -1.0);
                    if let Some(gw) = &sp.grad_normal {
                        add(&mut g_norm, pos.rel, gw, 1.0);
                    }
                    if let Some(gw) = &sn.grad_normal {
                        add(&mut g_norm, neg.rel, gw, -1.0);
                    }
                    if let Some(gm) = &sp.grad_map {
                        add(&mut g_map, pos.rel, gm, 1.0);
                    }
                    if let Some(gm) = &sn.grad_map {
                        add(&mut g_map, neg.rel, gm, -1.0);
                    }
                }
                let lr = cfg.lr;
                for (&e, g) in g_ent.iter() {
                    let row = self.model.entity_vec_mut(e);
                    for (x, gi) in row.iter_mut().zip(g) {
                        *x -= lr * gi;
                    }
                }
                for (&r, g) in g_rel.iter() {
                    let d_r = self.model.d_r;
                    let row = &mut self.model.relation[r * d_r..(r + 1) * d_r];
                    for (x, gi) in row.iter_mut().zip(g) {
                        *x -= lr * gi;
                    }
                }
                for (&r, g) in g_norm.iter() {
                    let d_e = self.model.d_e;
                    let row = &mut self.model.normals[r * d_e..(r + 1) * d_e];
                    for (x, gi) in row.iter_mut().zip(g) {
                        *x -= lr * gi;
                    }
                }
                for (&r, g) in g_map.iter() {
                    let sz = self.model.d_e * self.model.d_r;
                    let row = &mut self.model.maps[r * sz..(r + 1) * sz];
                    for (x, gi) in row.iter_mut().zip(g) {
                        *x -= lr * gi;
                    }
                }
                // Constraints: entities inside the unit ball, unit normals.
                for &e in g_ent.keys() {
                    let row = self.model.entity_vec_mut(e);
                    let n = norm2(row);
                    if n > 1.0 {
                        for x in row.iter_mut() {
                            *x /= n;
                        }
                    }
                }
                if self.model.variant == KgeVariant::TransH {
                    let d_e = self.model.d_e;
                    for &r in g_norm.keys() {
                        let row = &mut self.model.normals[r * d_e..(r + 1) * d_e];
                        let n = norm2(row);
                        if n > 0.0 {
                            for x in row.iter_mut() {
                                *x /= n;
                            }
                        }
                    }
                }
                if !epoch_loss.is_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite loss at epoch {}, batch {batch_idx}",
                        self.epochs_done
                    )));
                }
            }
            self.loss_trajectory.push(epoch_loss / n_train as f64);
            self.epochs_done += 1;
        }
        Ok(())
    }
}

/// Train from scratch; returns the model and the per-epoch mean margin loss.
pub fn train_kge(kg: &KnowledgeGraph, cfg: &KgeConfig) -> Result<(KgeModel, Vec<f64>)> {
    let mut trainer = KgeTrainer::new(kg, cfg)?;
    trainer.run_epochs(kg, cfg.epochs)?;
    Ok((trainer.model, trainer.loss_trajectory))
}

/// Link-prediction ranking metrics, averaged over both replacement sides
/// of every test triple.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingMetrics {
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

fn triple_ranks(
    m: &KgeModel,
    kg: &KnowledgeGraph,
    filtered: bool,
    t: &Triple,
) -> Result<(f64, f64)> {
    let ne = m.num_entities();
    let true_score = m.score(t.head, t.rel, t.tail)?;
    let mut out = [0.0; 2];
    for side in 0..2 {
        let mut less = 0usize;
        let mut equal = 0usize;
        for e in 0..ne {
            let cand = if side == 0 {
                Triple { head: e, ..*t }
            } else {
                Triple { tail: e, ..*t }
            };
            let is_true = (side == 0 && e == t.head) || (side == 1 && e == t.tail);
            if filtered && !is_true && kg.is_known(&cand) {
                continue;
            }
            let s = m.score(cand.head, cand.rel, cand.tail)?;
            if s < true_score {
                less += 1;
            } else if s == true_score {
                equal += 1;
            }
        }
        // `equal` includes the true entity itself.
        out[side] = less as f64 + (equal as f64 + 1.0) / 2.0;
    }
    Ok((out[0], out[1]))
}

/// Ranks (possibly fractional under ties) for each test triple: the
/// head-side rank then the tail-side rank. Filtered mode skips candidates
/// forming a known triple other than the test triple itself. Tied scores
/// receive the mean rank of their tied block.
pub fn ranking_ranks(m: &KgeModel, kg: &KnowledgeGraph, filtered: bool) -> Result<Vec<f64>> {
    ranking_ranks_threaded(m, kg, filtered, 1)
}

/// As [`ranking_ranks`], splitting test triples across worker threads.
/// The model is immutable during evaluation, so the output is identical
/// for any thread count.
pub fn ranking_ranks_threaded(
    m: &KgeModel,
    kg: &KnowledgeGraph,
    filtered: bool,
    threads: usize,
) -> Result<Vec<f64>> {
    if kg.test.is_empty() {
        return Err(Error::data("test split is empty"));
    }
    let workers = threads.max(1).min(kg.test.len());
    if workers == 1 {
        let mut ranks = Vec::with_capacity(kg.test.len() * 2);
        for t in &kg.test {
            let (h, tl) = triple_ranks(m, kg, filtered, t)?;
            ranks.push(h);
            ranks.push(tl);
        }
        return Ok(ranks);
    }
    let chunk = kg.test.len().div_ceil(workers);
    let mut ranks = Vec::with_capacity(kg.test.len() * 2);
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for part in kg.test.chunks(chunk) {
            handles.push(scope.spawn(move || -> Result<Vec<f64>> {
                let mut out = Vec::with_capacity(part.len() * 2);
                for t in part {
                    let (h, tl) = triple_ranks(m, kg, filtered, t)?;
                    out.push(h);
                    out.push(tl);
                }
                Ok(out)
            }));
        }
        for h in handles {
            ranks.extend(h.join().expect("ranking worker panicked")?);
        }
        Ok(())
    })?;
    Ok(ranks)
}

pub fn metrics_from_ranks(ranks: &[f64]) -> RankingMetrics {
    let n = ranks.len() as f64;
    RankingMetrics {
        mr: ranks.iter().sum::<f64>() / n,
        mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
        hits1: ranks.iter().filter(|&&r| r <= 1.0).count() as f64 / n,
        hits3: ranks.iter().filter(|&&r| r <= 3.0).count() as f64 / n,
        hits10: ranks.iter().filter(|&&r| r <= 10.0).count() as f64 / n,
    }
}

/// Rank every test triple against all entity candidates on both sides.
pub fn evaluate_ranking(
    m: &KgeModel,
    kg: &KnowledgeGraph,
    filtered: bool,
) -> Result<RankingMetrics> {
    Ok(metrics_from_ranks(&ranking_ranks(m, kg, filtered)?))
}

/// As [`evaluate_ranking`], with test triples split across threads.
pub fn evaluate_ranking_threaded(
    m: &KgeModel,
    kg: &KnowledgeGraph,
    filtered: bool,
    threads: usize,
) -> Result<RankingMetrics> {
    Ok(metrics_from_ranks(&ranking_ranks_threaded(
        m, kg, filtered, threads,
    )?))
}
