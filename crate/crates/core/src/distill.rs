//! Reranker-to-embedder knowledge distillation: both score lists are
//! min-max normalized, softmaxed at temperature 1, and compared with
//! KL(teacher || student). A decoupled dispatcher routes retrieval-tagged
//! batches to distillation and NLI-tagged batches to the contrastive
//! loss.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::batching::{dedup_within_batch, task_homogeneous_batches, Batch};
use crate::corpus::TrainTriplet;
use crate::embedder::{
    accumulate_pair_gradient, improved_contrastive_loss, EmbedderError, EmbedderParams, LossGrad,
    Role, TrainOutcome, TrainingConfig,
};
use crate::math;

/// Which loss family a source dataset trains under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum LossFamily {
    /// Retrieval and QA data: distill against stored teacher scores.
    Retrieval,
    /// NLI-style pair data: improved contrastive loss.
    Nli,
}

/// source tag -> loss family.
pub type DatasetRegistry = BTreeMap<String, LossFamily>;

/// One distillation row: a query, its candidates ([positive] + negatives),
/// and teacher scores aligned to the candidates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistillBatchRow {
    pub query: String,
    pub candidates: Vec<String>,
    pub teacher_scores: Vec<f64>,
}

impl DistillBatchRow {
    pub fn validate(&self) -> Result<(), DistillError> {
        if self.candidates.len() < 2 {
            return Err(DistillError::TooFewCandidates { got: self.candidates.len() });
        }
        if self.teacher_scores.len() != self.candidates.len() {
            return Err(DistillError::ScoreLengthMismatch {
                expected: self.candidates.len(),
                got: self.teacher_scores.len(),
            });
        }
        Ok(())
    }

    /// Reads a triplet as a distillation row; the positive is candidate 0.
    pub fn from_triplet(triplet: &TrainTriplet) -> Result<Self, DistillError> {
        let teacher_scores = triplet
            .teacher_scores
            .clone()
            .ok_or(DistillError::MissingTeacherScores)?;
        let mut candidates = Vec::with_capacity(1 + triplet.negatives.len());
        candidates.push(triplet.positive.clone());
        candidates.extend(triplet.negatives.iter().cloned());
        let row = Self { query: triplet.anchor.clone(), candidates, teacher_scores };
        row.validate()?;
        Ok(row)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DistillError {
    #[error("distillation needs at least 2 candidates, got {got}")]
    TooFewCandidates { got: usize },
    #[error("teacher scores length {got} does not match candidate count {expected}")]
    ScoreLengthMismatch { expected: usize, got: usize },
    #[error("row has no teacher scores")]
    MissingTeacherScores,
    #[error("source tag {tag:?} is not in the dataset registry")]
    UnknownSource { tag: String },
    #[error("batch tagged {expected:?} contains an item from {got:?}")]
    MixedBatch { expected: String, got: String },
    #[error("batch has no items")]
    EmptyBatch,
    #[error("training data is empty")]
    EmptyTrainingData,
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
}

/// Affine rescale to [0, 1]: (x - min) / (max - min). A constant list maps
/// every element to 0.5, keeping the output centered without dividing by
/// zero.
pub fn minmax_normalize(scores: &[f64]) -> Vec<f64> {
    let Some(&first) = scores.first() else {
        return Vec::new();
    };
    let (lo, hi) = scores.iter().fold((first, first), |(lo, hi), &s| {
        (if s < lo { s } else { lo }, if s > hi { s } else { hi })
    });
    if hi == lo {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|&s| (s - lo) / (hi - lo)).collect()
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let peak = values.iter().fold(f64::NEG_INFINITY, |a, &v| if v > a { v } else { a });
    let exps: Vec<f64> = values.iter().map(|&v| math::exp(v - peak)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the first minimum and first maximum (the subgradient choice
/// for tied extremes, and the one finite differences will agree with away
/// from ties).
fn extreme_indices(values: &[f64]) -> (usize, usize) {
    let mut imin = 0;
    let mut imax = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[imin] {
            imin = i;
        }
        if v > values[imax] {
            imax = i;
        }
    }
    (imin, imax)
}

/// KL(teacher || student) between softmaxed min-max-normalized score
/// lists, with analytic gradients for the embedding table.
///
/// Student scores are raw cosines between the query and each candidate.
/// When the student scores are exactly constant the min-max convention
/// pins them at 0.5 and the gradient is zero.
pub fn distillation_loss(
    params: &EmbedderParams,
    row: &DistillBatchRow,
) -> Result<LossGrad, DistillError> {
    row.validate()?;
    let query = params.encode_ctx(&row.query, Role::Query)?;
    let candidates = row
        .candidates
        .iter()
        .map(|c| params.encode_ctx(c, Role::Passage))
        .collect::<Result<Vec<_>, _>>()?;
    let student_raw: Vec<f64> =
        candidates.iter().map(|c| math::dot(&query.unit, &c.unit)).collect();
    let student_norm = minmax_normalize(&student_raw);
    let teacher_norm = minmax_normalize(&row.teacher_scores);
    let p = softmax(&teacher_norm);
    let q = softmax(&student_norm);
    let loss: f64 = p
        .iter()
        .zip(&q)
        .map(|(&pi, &qi)| pi * math::ln(pi / qi))
        .sum();

    let mut grad = vec![0.0; params.table().len()];
    let (imin, imax) = extreme_indices(&student_raw);
    let range = student_raw[imax] - student_raw[imin];
    if range > 0.0 {
        // dL/d normalized_k = q_k - p_k; pull it back through the min-max
        // map y_k = (s_k - s_min) / range.
        let a: Vec<f64> = q.iter().zip(&p).map(|(&qi, &pi)| qi - pi).collect();
        let a_total: f64 = a.iter().sum();
        let weighted: f64 = a.iter().zip(&student_norm).map(|(&ai, &yi)| ai * yi).sum();
        let mut raw_grad: Vec<f64> = a.iter().map(|&ai| ai / range).collect();
        raw_grad[imin] += (weighted - a_total) / range;
        raw_grad[imax] -= weighted / range;
        for (coeff, candidate) in raw_grad.into_iter().zip(&candidates) {
            if coeff != 0.0 {
                accumulate_pair_gradient(coeff, &query, candidate, 1.0, params.dim(), &mut grad);
            }
        }
    }
    Ok(LossGrad { loss, grad })
}

/// Loss for one single-source batch, dispatched by the registry: mean
/// distillation loss for retrieval-tagged sources, improved contrastive
/// loss for NLI-tagged ones.
pub fn decoupled_step(
    params: &EmbedderParams,
    batch: &Batch,
    registry: &DatasetRegistry,
) -> Result<LossGrad, DistillError> {
    if batch.items.is_empty() {
        return Err(DistillError::EmptyBatch);
    }
    if let Some(stray) = batch.items.iter().find(|item| item.source != batch.source) {
        return Err(DistillError::MixedBatch {
            expected: batch.source.clone(),
            got: stray.source.clone(),
        });
    }
    let family = registry
        .get(&batch.source)
        .ok_or_else(|| DistillError::UnknownSource { tag: batch.source.clone() })?;
    match family {
        LossFamily::Nli => Ok(improved_contrastive_loss(params, &batch.items)?),
        LossFamily::Retrieval => {
            let scale = 1.0 / batch.items.len() as f64;
            let mut grad = vec![0.0; params.table().len()];
            let mut loss = 0.0;
            for item in &batch.items {
                let row = DistillBatchRow::from_triplet(item)?;
                let out = distillation_loss(params, &row)?;
                loss += scale * out.loss;
                for (slot, g) in grad.iter_mut().zip(&out.grad) {
                    *slot += scale * g;
                }
            }
            Ok(LossGrad { loss, grad })
        }
    }
}

/// Distillation training loop: same batching, schedule, and descent as
/// the contrastive loop, with per-batch losses dispatched through the
/// registry.
pub fn train_distill(
    params: EmbedderParams,
    triplets: &[TrainTriplet],
    cfg: &TrainingConfig,
    registry: &DatasetRegistry,
) -> Result<TrainOutcome, DistillError> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(DistillError::EmptyTrainingData);
    }
    let mut params = params;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in triplets {
        *counts.entry(t.source.as_str()).or_insert(0) += 1;
    }
    let per_epoch: usize = counts.values().map(|n| n.div_ceil(cfg.batch_size)).sum();
    let total = cfg.epochs * per_epoch;
    let warmup = cfg.warmup_steps(total);
    let mut step_losses = Vec::with_capacity(total);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let batches =
            task_homogeneous_batches(triplets, cfg.batch_size, cfg.seed.wrapping_add(epoch as u64));
        for batch in batches {
            let mut batch = dedup_within_batch(batch);
            for item in &mut batch.items {
                if item.negatives.len() > cfg.hard_negatives {
                    item.negatives.truncate(cfg.hard_negatives);
                    if let Some(scores) = &mut item.teacher_scores {
                        scores.truncate(1 + cfg.hard_negatives);
                    }
                }
            }
            let out = decoupled_step(&params, &batch, registry)?;
            params.apply_gradient(&out.grad, cfg.learning_rate_at(step, total, warmup));
            step_losses.push(out.loss);
            step += 1;
        }
    }
    Ok(TrainOutcome { params, step_losses })
}
