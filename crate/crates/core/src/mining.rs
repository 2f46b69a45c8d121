//! Hard-negative mining: reciprocal rank fusion of lexical and dense
//! rankings, a mid-rank selection window, and pseudo-positive removal.
//!
//! The window keeps candidates ranked between `window_lo` and `window_hi`
//! (1-based, both ends inclusive). Documents containing the answer string
//! are stripped from the negatives only after windowing.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::{extract_pseudo_positives, CorpusError, TextRecord};

/// One scored ranking for a single query, best first.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankedList {
    pub query_id: String,
    /// (doc_id, score) pairs with non-increasing scores and unique ids.
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    pub fn new(query_id: impl Into<String>, entries: Vec<(String, f64)>) -> Self {
        Self {
            query_id: query_id.into(),
            entries,
        }
    }

    /// Checks the ranking invariants: non-increasing scores, unique ids.
    pub fn validate(&self) -> Result<(), MiningError> {
        for pair in self.entries.windows(2) {
            if pair[0].1 < pair[1].1 {
                return Err(MiningError::UnsortedList {
                    query_id: self.query_id.clone(),
                });
            }
        }
        let mut seen = BTreeSet::new();
        for (doc_id, _) in &self.entries {
            if !seen.insert(doc_id.as_str()) {
                return Err(MiningError::DuplicateDoc {
                    query_id: self.query_id.clone(),
                    doc_id: doc_id.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Knobs for the mining pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MiningConfig {
    pub rrf_k: f64,
    pub window_lo: usize,
    pub window_hi: usize,
    pub negatives_per_query: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            rrf_k: 60.0,
            window_lo: 30,
            window_hi: 100,
            negatives_per_query: 63,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<(), MiningError> {
        let ok = self.rrf_k > 0.0
            && self.window_lo >= 1
            && self.window_lo <= self.window_hi
            && self.negatives_per_query >= 1;
        if ok {
            Ok(())
        } else {
            Err(MiningError::InvalidConfig)
        }
    }
}

/// What mining produced for one query.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MiningOutcome {
    /// Hard negatives, best-ranked first, at most `negatives_per_query`.
    pub negatives: Vec<String>,
    /// Window members removed because they contain the answer.
    pub mined_positives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MiningError {
    #[error("rrf_fuse needs at least one input list")]
    EmptyInput,
    #[error("rrf_k must be positive, got {0}")]
    InvalidRrfK(f64),
    #[error("mining config violates 1 <= window_lo <= window_hi, rrf_k > 0, negatives_per_query >= 1")]
    InvalidConfig,
    #[error("ranked lists disagree on query: {expected:?} vs {got:?}")]
    QueryMismatch { expected: String, got: String },
    #[error("ranked list for {query_id:?} has increasing scores")]
    UnsortedList { query_id: String },
    #[error("ranked list for {query_id:?} repeats doc {doc_id:?}")]
    DuplicateDoc { query_id: String, doc_id: String },
    #[error("no text available for windowed doc {doc_id:?}")]
    MissingDocText { doc_id: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Fuses rankings for one query by reciprocal rank: each document scores
/// the sum over lists containing it of 1 / (rrf_k + rank), rank being its
/// 1-based position. Output is sorted by fused score descending, ties by
/// ascending doc id.
pub fn rrf_fuse(lists: &[&RankedList], rrf_k: f64) -> Result<RankedList, MiningError> {
    let Some(first) = lists.first() else {
        return Err(MiningError::EmptyInput);
    };
    if !(rrf_k > 0.0) {
        return Err(MiningError::InvalidRrfK(rrf_k));
    }
    for list in lists {
        list.validate()?;
        if list.query_id != first.query_id {
            return Err(MiningError::QueryMismatch {
                expected: first.query_id.clone(),
                got: list.query_id.clone(),
            });
        }
    }
    let mut fused: BTreeMap<&str, f64> = BTreeMap::new();
    for list in lists {
        for (rank0, (doc_id, _)) in list.entries.iter().enumerate() {
            *fused.entry(doc_id).or_insert(0.0) += 1.0 / (rrf_k + (rank0 + 1) as f64);
        }
    }
    let mut entries: Vec<(String, f64)> = fused
        .into_iter()
        .map(|(doc_id, score)| (doc_id.into(), score))
        .collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(RankedList {
        query_id: first.query_id.clone(),
        entries,
    })
}

/// Doc ids at 1-based positions `[window_lo, window_hi]` of a sorted
/// ranking. Positions past the end are simply absent; a ranking shorter
/// than `window_lo` yields nothing. Expects a validated config.
pub fn select_window(fused: &RankedList, cfg: &MiningConfig) -> Vec<String> {
    let n = fused.entries.len();
    let lo = cfg.window_lo.saturating_sub(1);
    let hi = cfg.window_hi.min(n);
    if lo >= hi {
        return Vec::new();
    }
    fused.entries[lo..hi]
        .iter()
        .map(|(doc_id, _)| doc_id.clone())
        .collect()
}

/// Full mining for one query: fuse the two rankings, take the window,
/// strip answer-containing documents into mined positives, truncate to
/// `negatives_per_query`.
///
/// `doc_texts` must cover every windowed doc id when an answer is given.
pub fn mine_hard_negatives(
    query: &TextRecord,
    answer: Option<&str>,
    bm25_list: &RankedList,
    dense_list: &RankedList,
    cfg: &MiningConfig,
    doc_texts: &BTreeMap<String, String>,
) -> Result<MiningOutcome, MiningError> {
    cfg.validate()?;
    for list in [bm25_list, dense_list] {
        if list.query_id != query.id {
            return Err(MiningError::QueryMismatch {
                expected: query.id.clone(),
                got: list.query_id.clone(),
            });
        }
    }
    let fused = rrf_fuse(&[bm25_list, dense_list], cfg.rrf_k)?;
    let window = select_window(&fused, cfg);
    let (mut negatives, mined_positives) = match answer {
        None => (window, Vec::new()),
        Some(answer) => {
            let candidates: Vec<TextRecord> = window
                .into_iter()
                .map(|doc_id| {
                    doc_texts
                        .get(&doc_id)
                        .map(|text| TextRecord::new(doc_id.clone(), text.clone(), query.source.clone()))
                        .ok_or(MiningError::MissingDocText { doc_id })
                })
                .collect::<Result<_, _>>()?;
            let (positives, negatives) = extract_pseudo_positives(answer, candidates)?;
            (
                negatives.into_iter().map(|r| r.id).collect(),
                positives.into_iter().map(|r| r.id).collect(),
            )
        }
    };
    negatives.truncate(cfg.negatives_per_query);
    Ok(MiningOutcome {
        negatives,
        mined_positives,
    })
}
