//! Cross-encoder reranker: a logistic model over query-document
//! interaction features, trained with a listwise cross-entropy loss over
//! one positive plus hard negatives, in two stages with different
//! truncation lengths and augmentation policies.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{shuffle_augment, TrainTriplet};
use crate::embedder::{cosine_similarity, EmbedderParams, Role};
use crate::lexical::{tokenize_lexical, InvertedIndex};
use crate::math;

/// Width of the feature vector produced by [`rerank_features`].
pub const FEATURE_COUNT: usize = 4;

/// Logistic model over interaction features.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RerankerParams {
    pub feature_weights: Vec<f64>,
    pub bias: f64,
}

impl RerankerParams {
    pub fn zeros() -> Self {
        Self {
            feature_weights: vec![0.0; FEATURE_COUNT],
            bias: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), RerankError> {
        if self.feature_weights.iter().all(|w| w.is_finite()) && self.bias.is_finite() {
            Ok(())
        } else {
            Err(RerankError::InvalidParams)
        }
    }
}

/// Per-stage training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageConfig {
    /// 1 or 2, for reporting only; behavior is fully determined by the
    /// other fields.
    pub stage: u8,
    /// Token-level truncation applied to both texts before features.
    pub max_length: usize,
    /// Shuffle the positive's sentence order (data augmentation).
    pub shuffle_positive: bool,
    pub hard_negatives: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl StageConfig {
    /// Stage-1 defaults: short truncation, augmentation on.
    pub fn stage1() -> Self {
        Self {
            stage: 1,
            max_length: 256,
            shuffle_positive: true,
            hard_negatives: 63,
            learning_rate: 0.5,
            batch_size: 16,
            epochs: 2,
            seed: 42,
        }
    }

    /// Stage-2 defaults: long truncation, no augmentation.
    pub fn stage2() -> Self {
        Self {
            stage: 2,
            max_length: 512,
            shuffle_positive: false,
            ..Self::stage1()
        }
    }

    pub fn validate(&self) -> Result<(), RerankError> {
        let ok = (self.stage == 1 || self.stage == 2)
            && self.max_length >= 1
            && self.hard_negatives >= 1
            && self.learning_rate > 0.0
            && self.batch_size >= 1;
        if ok {
            Ok(())
        } else {
            Err(RerankError::InvalidConfig)
        }
    }
}

/// Optional scoring context: collection statistics for the BM25 feature
/// and an embedder for the cosine feature. Either may be absent, zeroing
/// that feature.
#[derive(Clone, Copy, Default)]
pub struct FeatureContext<'a> {
    pub index: Option<&'a InvertedIndex>,
    pub embedder: Option<&'a EmbedderParams>,
    pub max_length: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RerankError {
    #[error("rerank features need nonempty query and doc")]
    EmptyText,
    #[error("feature length {got} does not match weight length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("listwise loss needs at least one negative")]
    EmptyNegatives,
    #[error("reranker parameters must be finite")]
    InvalidParams,
    #[error("stage config violates stage in {{1,2}}, max_length >= 1, hard_negatives >= 1, learning_rate > 0, batch_size >= 1")]
    InvalidConfig,
    #[error("training data is empty")]
    EmptyTrainingData,
}

fn truncated_tokens(text: &str, max_length: usize) -> Vec<String> {
    let mut tokens = tokenize_lexical(text);
    tokens.truncate(max_length);
    tokens
}

fn jaccard(a: &[String], b: &[String]) -> f64 {
    let sa: BTreeSet<&str> = a.iter().map(String::as_str).collect();
    let sb: BTreeSet<&str> = b.iter().map(String::as_str).collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        // Two empty token sets are indistinguishable, hence identical.
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Interaction features for one (query, doc) pair, all computed after
/// truncating both token sequences to `max_length`:
/// [token Jaccard, BM25, embedder cosine, ln(1 + doc token count)].
///
/// A missing index or embedder zeroes its feature, as does a doc the
/// embedder cannot encode.
pub fn rerank_features(
    query: &str,
    doc: &str,
    ctx: &FeatureContext,
) -> Result<Vec<f64>, RerankError> {
    if query.is_empty() || doc.is_empty() {
        return Err(RerankError::EmptyText);
    }
    let q_tokens = truncated_tokens(query, ctx.max_length);
    let d_tokens = truncated_tokens(doc, ctx.max_length);
    let overlap = jaccard(&q_tokens, &d_tokens);
    let bm25 = ctx
        .index
        .map_or(0.0, |index| index.bm25_score_tokens(&q_tokens, &d_tokens));
    // Rejoining tokens with spaces preserves the token sequence exactly
    // (every token retokenizes to itself), so the embedder sees the same
    // truncation as the lexical features.
    let cosine = ctx.embedder.map_or(0.0, |embedder| {
        let enc_q = embedder.encode(&q_tokens.join(" "), Role::Query);
        let enc_d = embedder.encode(&d_tokens.join(" "), Role::Passage);
        match (enc_q, enc_d) {
            (Ok(u), Ok(v)) => cosine_similarity(&u, &v).unwrap_or(0.0),
            _ => 0.0,
        }
    });
    let doc_length = math::ln(1.0 + d_tokens.len() as f64);
    Ok(vec![overlap, bm25, cosine, doc_length])
}

fn linear_score(params: &RerankerParams, features: &[f64]) -> Result<f64, RerankError> {
    if features.len() != params.feature_weights.len() {
        return Err(RerankError::LengthMismatch {
            expected: params.feature_weights.len(),
            got: features.len(),
        });
    }
    Ok(math::dot(&params.feature_weights, features) + params.bias)
}

/// Relevance score in (0, 1): logistic of the linear feature score.
pub fn rerank_score(params: &RerankerParams, features: &[f64]) -> Result<f64, RerankError> {
    let z = linear_score(params, features)?;
    Ok(1.0 / (1.0 + math::exp(-z)))
}

/// Loss and analytic gradients of the listwise objective.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankLossGrad {
    pub loss: f64,
    pub weight_grad: Vec<f64>,
    /// Analytically this sums softmax(p) - onehot over candidates, which
    /// is zero; kept literal so gradient checks see the computed value.
    pub bias_grad: f64,
}

/// Listwise cross-entropy over `[positive] + negatives`: softmax the
/// pre-logistic linear scores, take -log of the positive's probability.
pub fn listwise_ce_loss(
    params: &RerankerParams,
    query: &str,
    positive: &str,
    negatives: &[String],
    ctx: &FeatureContext,
) -> Result<RerankLossGrad, RerankError> {
    if negatives.is_empty() {
        return Err(RerankError::EmptyNegatives);
    }
    let mut features = Vec::with_capacity(1 + negatives.len());
    features.push(rerank_features(query, positive, ctx)?);
    for negative in negatives {
        features.push(rerank_features(query, negative, ctx)?);
    }
    let logits = features
        .iter()
        .map(|f| linear_score(params, f))
        .collect::<Result<Vec<_>, _>>()?;
    let peak = logits.iter().fold(f64::NEG_INFINITY, |a, &z| if z > a { z } else { a });
    let shifted: Vec<f64> = logits.iter().map(|&z| math::exp(z - peak)).collect();
    let total: f64 = shifted.iter().sum();
    let loss = -(logits[0] - peak - math::ln(total));
    let mut weight_grad = vec![0.0; params.feature_weights.len()];
    let mut bias_grad = 0.0;
    for (k, feats) in features.iter().enumerate() {
        let coeff = shifted[k] / total - if k == 0 { 1.0 } else { 0.0 };
        for (slot, f) in weight_grad.iter_mut().zip(feats) {
            *slot += coeff * f;
        }
        bias_grad += coeff;
    }
    Ok(RerankLossGrad { loss, weight_grad, bias_grad })
}

/// Final parameters plus the per-batch loss trace of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankTrainOutcome {
    pub params: RerankerParams,
    pub step_losses: Vec<f64>,
}

/// Trains one reranker stage: optional positive shuffling, negatives
/// capped at `hard_negatives`, seeded epoch shuffles, mean loss per batch,
/// plain gradient descent. Deterministic for a fixed config.
pub fn train_reranker_stage(
    params: RerankerParams,
    data: &[TrainTriplet],
    cfg: &StageConfig,
    index: Option<&InvertedIndex>,
    embedder: Option<&EmbedderParams>,
) -> Result<RerankTrainOutcome, RerankError> {
    cfg.validate()?;
    params.validate()?;
    if data.is_empty() {
        return Err(RerankError::EmptyTrainingData);
    }
    let ctx = FeatureContext { index, embedder, max_length: cfg.max_length };
    let rows: Vec<TrainTriplet> = data
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut row = row.clone();
            if cfg.shuffle_positive {
                row.positive = shuffle_augment(&row.positive, cfg.seed.wrapping_add(i as u64));
            }
            row.negatives.truncate(cfg.hard_negatives);
            row
        })
        .collect();
    let mut params = params;
    let mut step_losses = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let scale = 1.0 / chunk.len() as f64;
            let mut weight_grad = vec![0.0; params.feature_weights.len()];
            let mut bias_grad = 0.0;
            let mut loss = 0.0;
            for &row_idx in chunk {
                let row = &rows[row_idx];
                let out =
                    listwise_ce_loss(&params, &row.anchor, &row.positive, &row.negatives, &ctx)?;
                for (slot, g) in weight_grad.iter_mut().zip(&out.weight_grad) {
                    *slot += scale * g;
                }
                bias_grad += scale * out.bias_grad;
                loss += scale * out.loss;
            }
            for (w, g) in params.feature_weights.iter_mut().zip(&weight_grad) {
                *w -= cfg.learning_rate * g;
            }
            params.bias -= cfg.learning_rate * bias_grad;
            step_losses.push(loss);
        }
    }
    Ok(RerankTrainOutcome { params, step_losses })
}

/// Stage 1 then stage 2 on the stage-1 result.
pub fn train_reranker_two_stage(
    init: RerankerParams,
    stage1_data: &[TrainTriplet],
    stage2_data: &[TrainTriplet],
    cfg1: &StageConfig,
    cfg2: &StageConfig,
    index: Option<&InvertedIndex>,
    embedder: Option<&EmbedderParams>,
) -> Result<RerankerParams, RerankError> {
    let first = train_reranker_stage(init, stage1_data, cfg1, index, embedder)?;
    let second = train_reranker_stage(first.params, stage2_data, cfg2, index, embedder)?;
    Ok(second.params)
}
