//! Trainable dual-encoder: a token-embedding table with mean pooling and
//! unit normalization, role prefixes, the improved contrastive loss with
//! exact analytic gradients, and a plain gradient-descent training loop
//! with linear warmup and decay.
//!
//! The partition function of the loss sums query-passage, query-query,
//! passage-query, and passage-passage terms plus the hard negatives; the
//! passage-to-query direction re-counts the positive pair, which pins the
//! single-item no-negative loss at exactly ln 2.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::batching::{dedup_within_batch, task_homogeneous_batches};
use crate::corpus::{snippet, TrainTriplet};
use crate::lexical::tokenize_lexical;
use crate::math;

/// Role marker prepended to queries before encoding.
pub const QUERY_PREFIX: &str = "クエリ: ";
/// Role marker prepended to passages before encoding.
pub const PASSAGE_PREFIX: &str = "文章: ";

/// Which side of the retrieval pair a text plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Query,
    Passage,
}

impl Role {
    pub fn prefix(self) -> &'static str {
        match self {
            Role::Query => QUERY_PREFIX,
            Role::Passage => PASSAGE_PREFIX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedderError {
    #[error("cannot encode empty text")]
    EmptyText,
    #[error("no in-vocabulary tokens in {text:?}")]
    NoKnownTokens { text: String },
    #[error("embedding of {text:?} has zero norm")]
    ZeroNorm { text: String },
    #[error("cosine similarity needs nonzero vectors")]
    ZeroVector,
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("duplicate text within batch: {text:?}")]
    DuplicateText { text: String },
    #[error("invalid embedder parameters: {reason}")]
    InvalidParams { reason: &'static str },
    #[error("invalid training config: {reason}")]
    InvalidConfig { reason: &'static str },
    #[error("loss over an empty batch is undefined")]
    EmptyBatch,
    #[error("training data is empty")]
    EmptyTrainingData,
}

/// Dual-encoder state: vocabulary plus a dense embedding table.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EmbedderParams {
    vocab: BTreeMap<String, usize>,
    /// Row-major vocab_size x dim matrix.
    table: Vec<f64>,
    dim: usize,
    tau: f64,
}

impl EmbedderParams {
    /// Assembles parameters from parts, checking shape and finiteness.
    pub fn new(
        vocab: BTreeMap<String, usize>,
        table: Vec<f64>,
        dim: usize,
        tau: f64,
    ) -> Result<Self, EmbedderError> {
        if dim < 1 {
            return Err(EmbedderError::InvalidParams { reason: "dim must be at least 1" });
        }
        if !(tau > 0.0) {
            return Err(EmbedderError::InvalidParams { reason: "tau must be positive" });
        }
        if table.len() != vocab.len() * dim {
            return Err(EmbedderError::InvalidParams {
                reason: "table length must equal vocab size times dim",
            });
        }
        if !table.iter().all(|v| v.is_finite()) {
            return Err(EmbedderError::InvalidParams { reason: "table entries must be finite" });
        }
        let mut rows: Vec<usize> = vocab.values().copied().collect();
        rows.sort_unstable();
        if rows.iter().enumerate().any(|(want, &got)| want != got) {
            return Err(EmbedderError::InvalidParams {
                reason: "vocab rows must be a permutation of 0..vocab_size",
            });
        }
        Ok(Self { vocab, table, dim, tau })
    }

    /// Builds a vocabulary from the given texts (both role prefixes are
    /// always included) and fills the table with small seeded random
    /// values.
    pub fn init<'a, I>(texts: I, dim: usize, tau: f64, seed: u64) -> Result<Self, EmbedderError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut tokens: BTreeSet<String> = BTreeSet::new();
        for text in texts.into_iter().chain([QUERY_PREFIX, PASSAGE_PREFIX]) {
            tokens.extend(tokenize_lexical(text));
        }
        let vocab: BTreeMap<String, usize> = tokens
            .into_iter()
            .enumerate()
            .map(|(row, token)| (token, row))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / math::sqrt(dim as f64);
        let table = (0..vocab.len() * dim)
            .map(|_| (rng.random::<f64>() - 0.5) * scale)
            .collect();
        Self::new(vocab, table, dim, tau)
    }

    pub fn vocab(&self) -> &BTreeMap<String, usize> {
        &self.vocab
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// One plain gradient-descent step: table -= lr * grad.
    pub fn apply_gradient(&mut self, grad: &[f64], lr: f64) {
        debug_assert_eq!(grad.len(), self.table.len());
        for (w, g) in self.table.iter_mut().zip(grad) {
            *w -= lr * g;
        }
    }

    pub(crate) fn encode_ctx(&self, text: &str, role: Role) -> Result<Encoded, EmbedderError> {
        if text.is_empty() {
            return Err(EmbedderError::EmptyText);
        }
        let prefixed = format!("{}{}", role.prefix(), text);
        let rows: Vec<usize> = tokenize_lexical(&prefixed)
            .iter()
            .filter_map(|token| self.vocab.get(token).copied())
            .collect();
        if rows.is_empty() {
            return Err(EmbedderError::NoKnownTokens { text: snippet(text) });
        }
        let m = rows.len() as f64;
        let mut mean = vec![0.0; self.dim];
        for &row in &rows {
            let base = row * self.dim;
            for (d, slot) in mean.iter_mut().enumerate() {
                *slot += self.table[base + d];
            }
        }
        for slot in &mut mean {
            *slot /= m;
        }
        let norm = math::sqrt(math::dot(&mean, &mean));
        if norm <= 0.0 {
            return Err(EmbedderError::ZeroNorm { text: snippet(text) });
        }
        let unit = mean.iter().map(|v| v / norm).collect();
        Ok(Encoded { rows, unit, norm })
    }

    /// Encodes one text: prefix, tokenize, mean-pool the in-vocabulary
    /// rows (unknown tokens are skipped), scale to unit norm.
    pub fn encode(&self, text: &str, role: Role) -> Result<Vec<f64>, EmbedderError> {
        Ok(self.encode_ctx(text, role)?.unit)
    }
}

/// Encoding with enough context to backpropagate through pooling and
/// normalization.
#[derive(Debug, Clone)]
pub(crate) struct Encoded {
    /// Embedding-table row per in-vocabulary token occurrence.
    pub(crate) rows: Vec<usize>,
    /// Unit-norm embedding.
    pub(crate) unit: Vec<f64>,
    /// Norm of the pooled (pre-normalization) vector.
    pub(crate) norm: f64,
}

/// Cosine similarity, clamped into [-1, 1] against rounding drift.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, EmbedderError> {
    if u.len() != v.len() {
        return Err(EmbedderError::LengthMismatch(u.len(), v.len()));
    }
    let nu = math::sqrt(math::dot(u, u));
    let nv = math::sqrt(math::dot(v, v));
    if nu == 0.0 || nv == 0.0 {
        return Err(EmbedderError::ZeroVector);
    }
    let cos = math::dot(u, v) / (nu * nv);
    Ok(cos.clamp(-1.0, 1.0))
}

/// Loss value plus the gradient with respect to the embedding table
/// (same layout as [`EmbedderParams::table`]).
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Per-item loss given the positive logit and every other partition
/// logit. The positive is counted twice in the partition (query-to-passage
/// and passage-to-query), so with an empty `rest` this is exactly ln 2.
pub(crate) fn partition_loss(s_pos: f64, rest: &[f64]) -> f64 {
    let m = rest.iter().fold(s_pos, |acc, &s| if s > acc { s } else { acc });
    let z = 2.0 * math::exp(s_pos - m) + rest.iter().map(|&s| math::exp(s - m)).sum::<f64>();
    -s_pos + m + math::ln(z)
}

/// Adds c * d s(a,b) / d table to `grad`, where s is the cosine of the two
/// unit embeddings divided by `tau`.
pub(crate) fn accumulate_pair_gradient(
    c: f64,
    a: &Encoded,
    b: &Encoded,
    tau: f64,
    dim: usize,
    grad: &mut [f64],
) {
    accumulate_side(c, a, b, tau, dim, grad);
    accumulate_side(c, b, a, tau, dim, grad);
}

fn accumulate_side(c: f64, from: &Encoded, to: &Encoded, tau: f64, dim: usize, grad: &mut [f64]) {
    // d s / d pooled_from = (u_to - (u_from . u_to) u_from) / (tau |pooled_from|),
    // then each contributing row receives a 1/m share.
    let cos = math::dot(&from.unit, &to.unit);
    let scale = c / (tau * from.norm * from.rows.len() as f64);
    for &row in &from.rows {
        let base = row * dim;
        for d in 0..dim {
            grad[base + d] += scale * (to.unit[d] - cos * from.unit[d]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TextRole {
    Anchor,
    Positive,
    Negative,
}

/// Rejects any text appearing twice in the batch, except an item paired
/// with itself (anchor == positive), which is a legitimate self-pair row.
/// Any other collision silently turns a supervised pair into a false
/// negative inside the partition function.
fn check_duplicates(batch: &[TrainTriplet]) -> Result<(), EmbedderError> {
    let mut seen: BTreeMap<&str, (usize, TextRole)> = BTreeMap::new();
    for (i, item) in batch.iter().enumerate() {
        let roles = [
            (item.anchor.as_str(), TextRole::Anchor),
            (item.positive.as_str(), TextRole::Positive),
        ]
        .into_iter()
        .chain(item.negatives.iter().map(|n| (n.as_str(), TextRole::Negative)));
        for (text, role) in roles {
            match seen.get(text) {
                None => {
                    seen.insert(text, (i, role));
                }
                Some(&(j, prev)) => {
                    let self_pair = j == i
                        && matches!(
                            (prev, role),
                            (TextRole::Anchor, TextRole::Positive)
                                | (TextRole::Positive, TextRole::Anchor)
                        );
                    if !self_pair {
                        return Err(EmbedderError::DuplicateText { text: snippet(text) });
                    }
                }
            }
        }
    }
    Ok(())
}

struct ItemCtx {
    q: usize,
    p: usize,
    negs: Vec<usize>,
}

/// The improved contrastive loss over one task-homogeneous batch, with
/// exact analytic gradients for the embedding table.
///
/// With s(a,b) = cosine(a,b)/tau, each item i contributes
/// -log(e^{s(q_i,p_i)} / Z_i) where Z_i sums e^s over: q_i against every
/// positive, q_i against other queries, every query against p_i, p_i
/// against other positives, and q_i against the item's hard negatives.
/// The batch loss is the mean over items.
pub fn improved_contrastive_loss(
    params: &EmbedderParams,
    batch: &[TrainTriplet],
) -> Result<LossGrad, EmbedderError> {
    if batch.is_empty() {
        return Err(EmbedderError::EmptyBatch);
    }
    check_duplicates(batch)?;
    let dim = params.dim;
    let tau = params.tau;
    let mut enc: Vec<Encoded> = Vec::new();
    let push = |e: Encoded, enc: &mut Vec<Encoded>| {
        enc.push(e);
        enc.len() - 1
    };
    let mut ctxs: Vec<ItemCtx> = Vec::with_capacity(batch.len());
    for item in batch {
        let q = push(params.encode_ctx(&item.anchor, Role::Query)?, &mut enc);
        let p = push(params.encode_ctx(&item.positive, Role::Passage)?, &mut enc);
        let negs = item
            .negatives
            .iter()
            .map(|n| Ok(push(params.encode_ctx(n, Role::Passage)?, &mut enc)))
            .collect::<Result<Vec<_>, EmbedderError>>()?;
        ctxs.push(ItemCtx { q, p, negs });
    }
    let sim = |a: usize, b: usize| math::dot(&enc[a].unit, &enc[b].unit) / tau;

    let b_count = batch.len() as f64;
    let mut grad = vec![0.0; params.table.len()];
    let mut loss = 0.0;
    for (i, ci) in ctxs.iter().enumerate() {
        let s_pos = sim(ci.q, ci.p);
        // (logit, endpoint a, endpoint b); the positive appears twice.
        let mut occ: Vec<(f64, usize, usize)> = Vec::new();
        occ.push((s_pos, ci.q, ci.p));
        occ.push((s_pos, ci.q, ci.p));
        for (j, cj) in ctxs.iter().enumerate() {
            if j == i {
                continue;
            }
            occ.push((sim(ci.q, cj.p), ci.q, cj.p));
            occ.push((sim(ci.q, cj.q), ci.q, cj.q));
            occ.push((sim(cj.q, ci.p), cj.q, ci.p));
            occ.push((sim(ci.p, cj.p), ci.p, cj.p));
        }
        for &n in &ci.negs {
            occ.push((sim(ci.q, n), ci.q, n));
        }
        let rest: Vec<f64> = occ[2..].iter().map(|o| o.0).collect();
        loss += partition_loss(s_pos, &rest) / b_count;

        let m = occ.iter().fold(f64::NEG_INFINITY, |acc, o| if o.0 > acc { o.0 } else { acc });
        let z: f64 = occ.iter().map(|o| math::exp(o.0 - m)).sum();
        for &(s, a, b) in &occ {
            let c = math::exp(s - m) / z / b_count;
            accumulate_pair_gradient(c, &enc[a], &enc[b], tau, dim, &mut grad);
        }
        accumulate_pair_gradient(-1.0 / b_count, &enc[ci.q], &enc[ci.p], tau, dim, &mut grad);
    }
    Ok(LossGrad { loss, grad })
}

/// Gradient-descent hyperparameters shared by the embedding training
/// loops.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainingConfig {
    pub learning_rate: f64,
    /// Fraction of total steps spent in linear warmup.
    pub warmup_ratio: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Hard negatives kept per item (1 for pre-training, 15 for
    /// fine-tuning).
    pub hard_negatives: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            warmup_ratio: 0.10,
            batch_size: 32,
            epochs: 1,
            hard_negatives: 15,
            seed: 42,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), EmbedderError> {
        if !(self.learning_rate > 0.0) {
            return Err(EmbedderError::InvalidConfig { reason: "learning_rate must be positive" });
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(EmbedderError::InvalidConfig { reason: "warmup_ratio must be in [0, 1]" });
        }
        if self.batch_size < 1 {
            return Err(EmbedderError::InvalidConfig { reason: "batch_size must be at least 1" });
        }
        Ok(())
    }

    /// Learning rate at 0-based step `t` of `total`: linear ramp over the
    /// warmup steps, then linear decay to (almost) zero.
    pub fn learning_rate_at(&self, t: usize, total: usize, warmup: usize) -> f64 {
        if t < warmup {
            self.learning_rate * (t + 1) as f64 / warmup as f64
        } else if total > warmup {
            self.learning_rate * (total - t) as f64 / (total - warmup) as f64
        } else {
            self.learning_rate
        }
    }

    pub fn warmup_steps(&self, total: usize) -> usize {
        (self.warmup_ratio * total as f64) as usize
    }
}

/// Final parameters plus the per-step loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: EmbedderParams,
    pub step_losses: Vec<f64>,
}

fn batches_per_epoch(triplets: &[TrainTriplet], batch_size: usize) -> usize {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in triplets {
        *counts.entry(t.source.as_str()).or_insert(0) += 1;
    }
    counts.values().map(|n| n.div_ceil(batch_size)).sum()
}

/// Trains the dual-encoder on contrastive triplets: task-homogeneous
/// deduped batches, per-epoch reshuffles, linear warmup then decay, serial
/// gradient application. Deterministic for a fixed config.
pub fn train_embedder(
    params: EmbedderParams,
    triplets: &[TrainTriplet],
    cfg: &TrainingConfig,
) -> Result<TrainOutcome, EmbedderError> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(EmbedderError::EmptyTrainingData);
    }
    let mut params = params;
    let total = cfg.epochs * batches_per_epoch(triplets, cfg.batch_size);
    let warmup = cfg.warmup_steps(total);
    let mut step_losses = Vec::with_capacity(total);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let batches =
            task_homogeneous_batches(triplets, cfg.batch_size, cfg.seed.wrapping_add(epoch as u64));
        for batch in batches {
            let batch = dedup_within_batch(batch);
            let mut items = batch.items;
            for item in &mut items {
                item.negatives.truncate(cfg.hard_negatives);
            }
            let out = improved_contrastive_loss(&params, &items)?;
            params.apply_gradient(&out.grad, cfg.learning_rate_at(step, total, warmup));
            step_losses.push(out.loss);
            step += 1;
        }
    }
    Ok(TrainOutcome { params, step_losses })
}
