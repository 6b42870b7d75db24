//! Contrastive training of the dual encoder.
//!
//! The loss for one instance is softmax cross-entropy over the positive and
//! its negatives; with in-batch negatives each query also contrasts against
//! every other instance's positive and explicit negatives in the batch.
//! Gradients flow through the bilinear similarity onto both projections:
//!
//!   dL/dsim_pos = p_pos - 1,   dL/dsim_neg_i = p_neg_i
//!   dL/dW_q = x_q (Σ_c coeff_c · emb_c)ᵀ
//!   dL/dW_c = Σ_i coeff_{i,c} · x_c · q_iᵀ   (per candidate c)
//!
//! where p are the softmax probabilities. Everything is accumulated in f64
//! over a fixed iteration order, so training is bit-reproducible per seed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::encoder::DualEncoder;
use crate::error::{Error, Result};
use crate::features::{featurize, FeatureVector, DEFAULT_HASH_BITS};
use crate::pairgen::TrainingInstance;

/// A training instance featurized once up front.
#[derive(Debug, Clone)]
pub struct PreparedInstance {
    pub query: FeatureVector,
    pub positive: FeatureVector,
    pub negatives: Vec<FeatureVector>,
}

/// Featurize instances under the given hash width.
pub fn prepare(instances: &[TrainingInstance], hash_bits: u32) -> Result<Vec<PreparedInstance>> {
    instances
        .iter()
        .map(|inst| {
            Ok(PreparedInstance {
                query: featurize(&inst.query, hash_bits)?,
                positive: featurize(&inst.positive, hash_bits)?,
                negatives: inst
                    .negatives
                    .iter()
                    .map(|n| featurize(&n.session, hash_bits))
                    .collect::<Result<Vec<_>>>()?,
            })
        })
        .collect()
}

/// Sparse gradient: bucket -> d_out row, in sorted bucket order.
#[derive(Debug, Clone)]
pub struct SparseGrad {
    d_out: usize,
    rows: BTreeMap<u32, Vec<f64>>,
}

impl SparseGrad {
    fn new(d_out: usize) -> Self {
        SparseGrad { d_out, rows: BTreeMap::new() }
    }

    /// rows[bucket] += count * scale * coeffs, for every feature entry.
    fn add_outer(&mut self, features: &FeatureVector, coeffs: &[f64], scale: f64) {
        for &(bucket, count) in features.entries() {
            let row = self.rows.entry(bucket).or_insert_with(|| vec![0.0; self.d_out]);
            let factor = count as f64 * scale;
            for (r, &c) in row.iter_mut().zip(coeffs) {
                *r += factor * c;
            }
        }
    }

    pub fn get(&self, bucket: u32, col: usize) -> f64 {
        self.rows.get(&bucket).map_or(0.0, |row| row[col])
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.rows.iter().map(|(&b, row)| (b, row.as_slice()))
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }
}

/// Gradients of the mean batch loss for both projections.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub wq: SparseGrad,
    pub wc: SparseGrad,
}

fn encode_f64(weights: &[f32], d_out: usize, features: &FeatureVector) -> Vec<f64> {
    let mut acc = vec![0.0f64; d_out];
    for &(bucket, count) in features.entries() {
        let row = &weights[bucket as usize * d_out..(bucket as usize + 1) * d_out];
        let count = count as f64;
        for (a, &w) in acc.iter_mut().zip(row) {
            *a += count * w as f64;
        }
    }
    acc
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Candidate layout of one batch: every instance's positive followed by its
/// explicit negatives, in batch order. `positive_of[i]` indexes instance
/// i's positive; `owned[i]` is the candidate range belonging to instance i.
struct BatchLayout<'a> {
    candidates: Vec<&'a FeatureVector>,
    positive_of: Vec<usize>,
    owned: Vec<std::ops::Range<usize>>,
}

fn layout<'a>(batch: &'a [PreparedInstance]) -> BatchLayout<'a> {
    let mut candidates = Vec::new();
    let mut positive_of = Vec::with_capacity(batch.len());
    let mut owned = Vec::with_capacity(batch.len());
    for inst in batch {
        let start = candidates.len();
        positive_of.push(start);
        candidates.push(&inst.positive);
        candidates.extend(inst.negatives.iter());
        owned.push(start..candidates.len());
    }
    BatchLayout { candidates, positive_of, owned }
}

/// Mean contrastive loss over a batch under the current parameters.
pub fn batch_loss(
    encoder: &DualEncoder,
    batch: &[PreparedInstance],
    use_in_batch: bool,
) -> Result<f64> {
    let (loss, _) = forward_backward(encoder, batch, use_in_batch, false)?;
    Ok(loss)
}

/// Mean batch loss and its gradients for (W_q, W_c).
pub fn loss_gradients(
    encoder: &DualEncoder,
    batch: &[PreparedInstance],
    use_in_batch: bool,
) -> Result<(f64, Gradients)> {
    let (loss, grads) = forward_backward(encoder, batch, use_in_batch, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

fn forward_backward(
    encoder: &DualEncoder,
    batch: &[PreparedInstance],
    use_in_batch: bool,
    want_grads: bool,
) -> Result<(f64, Option<Gradients>)> {
    if batch.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let d_out = encoder.d_out();
    let lay = layout(batch);

    let queries: Vec<Vec<f64>> = batch
        .iter()
        .map(|inst| encode_f64(encoder.weights_query(), d_out, &inst.query))
        .collect();
    let cand_embs: Vec<Vec<f64>> = lay
        .candidates
        .iter()
        .map(|fv| encode_f64(encoder.weights_candidate(), d_out, fv))
        .collect();

    let inv_batch = 1.0 / batch.len() as f64;
    let mut total_loss = 0.0;
    let mut grads = want_grads
        .then(|| Gradients { wq: SparseGrad::new(d_out), wc: SparseGrad::new(d_out) });
    // Per-candidate softmax coefficients summed over queries, for dW_c.
    let mut cand_coeff: Vec<Vec<f64>> = if want_grads {
        vec![vec![0.0; batch.len()]; lay.candidates.len()]
    } else {
        Vec::new()
    };

    for (i, q) in queries.iter().enumerate() {
        let cand_range: Vec<usize> = if use_in_batch {
            (0..lay.candidates.len()).collect()
        } else {
            lay.owned[i].clone().collect()
        };
        let pos_idx = lay.positive_of[i];

        let sims: Vec<f64> = cand_range.iter().map(|&c| dot(q, &cand_embs[c])).collect();
        if sims.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite { what: "similarity during training" });
        }
        let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = sims.iter().map(|s| (s - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let local_pos = cand_range.iter().position(|&c| c == pos_idx).expect("positive in range");
        total_loss += denom.ln() + max - sims[local_pos];

        if let Some(grads) = grads.as_mut() {
            // coeff_c = p_c, except coeff_pos = p_pos - 1
            let mut q_coeffs = vec![0.0f64; d_out];
            for (local, &c) in cand_range.iter().enumerate() {
                let mut coeff = exps[local] / denom;
                if local == local_pos {
                    coeff -= 1.0;
                }
                cand_coeff[c][i] += coeff;
                for (acc, &e) in q_coeffs.iter_mut().zip(&cand_embs[c]) {
                    *acc += coeff * e;
                }
            }
            grads.wq.add_outer(&batch[i].query, &q_coeffs, inv_batch);
        }
    }

    if let Some(grads) = grads.as_mut() {
        for (c, fv) in lay.candidates.iter().enumerate() {
            let coeffs = &cand_coeff[c];
            if coeffs.iter().all(|&x| x == 0.0) {
                continue;
            }
            let mut acc = vec![0.0f64; d_out];
            for (i, &coeff) in coeffs.iter().enumerate() {
                if coeff != 0.0 {
                    for (a, &qv) in acc.iter_mut().zip(&queries[i]) {
                        *a += coeff * qv;
                    }
                }
            }
            grads.wc.add_outer(fv, &acc, inv_batch);
        }
    }

    Ok((total_loss * inv_batch, grads))
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

/// Optimizer choice. SGD with momentum is the default; Adam is available
/// behind config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Sgd { momentum: 0.9 }
    }
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

enum OptState {
    Sgd { momentum: f64, velocity: Vec<f32> },
    Adam { beta1: f64, beta2: f64, eps: f64, m: Vec<f32>, v: Vec<f32>, t: u64 },
}

impl OptState {
    fn new(kind: OptimizerKind, len: usize) -> Self {
        match kind {
            OptimizerKind::Sgd { momentum } => {
                OptState::Sgd { momentum, velocity: vec![0.0; len] }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                OptState::Adam { beta1, beta2, eps, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
            }
        }
    }

    fn step(&mut self, weights: &mut [f32], grad: &SparseGrad, d_out: usize, lr: f64) {
        match self {
            OptState::Sgd { momentum, velocity } => {
                let mu = *momentum as f32;
                if mu != 0.0 {
                    for v in velocity.iter_mut() {
                        *v *= mu;
                    }
                }
                for (bucket, row) in grad.iter_rows() {
                    let base = bucket as usize * d_out;
                    for (j, &g) in row.iter().enumerate() {
                        velocity[base + j] += g as f32;
                    }
                }
                let lr = lr as f32;
                for (w, &v) in weights.iter_mut().zip(velocity.iter()) {
                    *w -= lr * v;
                }
            }
            OptState::Adam { beta1, beta2, eps, m, v, t } => {
                *t += 1;
                let (b1, b2) = (*beta1 as f32, *beta2 as f32);
                for x in m.iter_mut() {
                    *x *= b1;
                }
                for x in v.iter_mut() {
                    *x *= b2;
                }
                for (bucket, row) in grad.iter_rows() {
                    let base = bucket as usize * d_out;
                    for (j, &g) in row.iter().enumerate() {
                        let g = g as f32;
                        m[base + j] += (1.0 - b1) * g;
                        v[base + j] += (1.0 - b2) * g * g;
                    }
                }
                let bc1 = 1.0 - (*beta1).powi(*t as i32) as f32;
                let bc2 = 1.0 - (*beta2).powi(*t as i32) as f32;
                let lr = lr as f32;
                let eps = *eps as f32;
                for ((w, &mi), &vi) in weights.iter_mut().zip(m.iter()).zip(v.iter()) {
                    let m_hat = mi / bc1;
                    let v_hat = vi / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub use_in_batch: bool,
    /// Fraction of instances held out to select the best checkpoint by
    /// top-1 recall. 0 disables validation (final epoch wins).
    pub val_fraction: f64,
    pub hash_bits: u32,
    pub d_out: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 64,
            lr: 0.05,
            optimizer: OptimizerKind::default(),
            seed: 0,
            use_in_batch: true,
            val_fraction: 0.1,
            hash_bits: DEFAULT_HASH_BITS,
            d_out: 128,
        }
    }
}

/// Per-epoch trace of one training run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainReport {
    pub train_instances: usize,
    pub val_instances: usize,
    pub epoch_loss: Vec<f64>,
    pub val_recall_at_1: Vec<f64>,
    /// Epoch (1-based) whose checkpoint was returned; 0 when no validation.
    pub best_epoch: usize,
}

/// Train a fresh dual encoder.
pub fn train(instances: &[TrainingInstance], cfg: &TrainConfig) -> Result<(DualEncoder, TrainReport)> {
    let init = DualEncoder::init(cfg.hash_bits, cfg.d_out, cfg.seed)?;
    train_from(init, instances, cfg)
}

/// Continue training from an existing checkpoint. The checkpoint's shape
/// overrides `cfg.hash_bits` / `cfg.d_out`.
pub fn train_from(
    mut encoder: DualEncoder,
    instances: &[TrainingInstance],
    cfg: &TrainConfig,
) -> Result<(DualEncoder, TrainReport)> {
    if instances.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config { reason: "batch_size must be >= 1".into() });
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::Config { reason: "val_fraction must be in [0, 1)".into() });
    }
    let prepared = prepare(instances, encoder.hash_bits())?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((prepared.len() as f64 * cfg.val_fraction) as usize).min(prepared.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();

    let mut report = TrainReport {
        train_instances: train_idx.len(),
        val_instances: val_idx.len(),
        ..TrainReport::default()
    };

    let d_out = encoder.d_out();
    let param_len = encoder.d_in() * d_out;
    let mut opt_q = OptState::new(cfg.optimizer, param_len);
    let mut opt_c = OptState::new(cfg.optimizer, param_len);

    let mut best: Option<(f64, DualEncoder)> = None;
    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let batch: Vec<PreparedInstance> =
                chunk.iter().map(|&i| prepared[i].clone()).collect();
            let (loss, grads) = loss_gradients(&encoder, &batch, cfg.use_in_batch)?;
            {
                let (wq, wc) = encoder.weights_mut();
                opt_q.step(wq, &grads.wq, d_out, cfg.lr);
                opt_c.step(wc, &grads.wc, d_out, cfg.lr);
            }
            epoch_loss += loss;
            batches += 1;
        }
        report.epoch_loss.push(epoch_loss / batches.max(1) as f64);

        if !val_idx.is_empty() {
            let recall = validation_recall_at_1(&encoder, &prepared, &val_idx);
            report.val_recall_at_1.push(recall);
            let improved = best.as_ref().map_or(true, |(b, _)| recall > *b);
            if improved {
                best = Some((recall, encoder.clone()));
                report.best_epoch = epoch;
            }
        }
    }

    let chosen = match best {
        Some((_, enc)) => enc,
        None => encoder,
    };
    Ok((chosen, report))
}

/// Top-1 recall over the validation split: each held-out query must rank
/// its own positive first among all held-out positives.
fn validation_recall_at_1(
    encoder: &DualEncoder,
    prepared: &[PreparedInstance],
    val_idx: &[usize],
) -> f64 {
    let d_out = encoder.d_out();
    let queries: Vec<Vec<f64>> = val_idx
        .iter()
        .map(|&i| encode_f64(encoder.weights_query(), d_out, &prepared[i].query))
        .collect();
    let positives: Vec<Vec<f64>> = val_idx
        .iter()
        .map(|&i| encode_f64(encoder.weights_candidate(), d_out, &prepared[i].positive))
        .collect();
    let mut hits = 0usize;
    for (qi, q) in queries.iter().enumerate() {
        let mut best_j = 0usize;
        let mut best_sim = f64::NEG_INFINITY;
        for (j, p) in positives.iter().enumerate() {
            let sim = dot(q, p);
            if sim > best_sim {
                best_sim = sim;
                best_j = j;
            }
        }
        if best_j == qi {
            hits += 1;
        }
    }
    hits as f64 / val_idx.len() as f64
}
