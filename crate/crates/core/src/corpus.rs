//! Corpus preprocessing: text normalization, sentence handling, shuffle
//! augmentation, pseudo-positive extraction, and dataset filters.
//!
//! This module also defines the interchange schema for all training rows:
//! [`TextRecord`] for documents and queries, [`TrainTriplet`] for
//! anchor/positive/negatives rows.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unicode_normalization::UnicodeNormalization;

/// Characters stripped before NFKC normalization: zero-width space, joiner
/// and non-joiner, directional marks (U+200B..U+200F), embedding/override
/// controls (U+202A..U+202E), soft hyphen, and the byte order mark.
pub const INVISIBLE_CHARS: &[char] = &[
    '\u{200B}', '\u{200C}', '\u{200D}', '\u{200E}', '\u{200F}', '\u{202A}', '\u{202B}',
    '\u{202C}', '\u{202D}', '\u{202E}', '\u{00AD}', '\u{FEFF}',
];

/// Sentence-terminal punctuation for [`split_sentences`]: ideographic full
/// stop, fullwidth and ASCII exclamation/question marks.
pub const SENTENCE_TERMINALS: &[char] = &['。', '！', '？', '!', '?'];

/// One identified text unit (document or query) after normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TextRecord {
    pub id: String,
    pub text: String,
    pub source: String,
}

impl TextRecord {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        source: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            source: source.into(),
        }
    }

    /// Returns a copy with `text` passed through [`normalize_text`].
    pub fn normalized(&self) -> Self {
        Self {
            id: self.id.clone(),
            text: normalize_text(&self.text),
            source: self.source.clone(),
        }
    }
}

/// The universal training row: anchor + positive + hard negatives, tagged
/// with its source dataset and optionally carrying teacher scores aligned
/// to `[positive] + negatives`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainTriplet {
    pub anchor: String,
    pub positive: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub negatives: Vec<String>,
    pub source: String,
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub teacher_scores: Option<Vec<f64>>,
}

impl TrainTriplet {
    pub fn new(
        anchor: impl Into<String>,
        positive: impl Into<String>,
        negatives: Vec<String>,
        source: impl Into<String>,
    ) -> Self {
        Self {
            anchor: anchor.into(),
            positive: positive.into(),
            negatives,
            source: source.into(),
            teacher_scores: None,
        }
    }

    /// Checks the schema invariants: nonempty anchor/positive and, when
    /// teacher scores are present, one score per candidate.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.anchor.is_empty() || self.positive.is_empty() {
            return Err(CorpusError::EmptyTripletField {
                anchor: snippet(&self.anchor),
            });
        }
        if let Some(scores) = &self.teacher_scores {
            if scores.len() != 1 + self.negatives.len() {
                return Err(CorpusError::TeacherScoreLength {
                    anchor: snippet(&self.anchor),
                    expected: 1 + self.negatives.len(),
                    got: scores.len(),
                });
            }
        }
        Ok(())
    }
}

/// Thresholds for dataset filtering.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FilterConfig {
    /// Rows whose positive teacher score falls below this are dropped.
    pub score_threshold: f64,
    /// Percentage of lowest-scoring items removed by the percentile filter.
    pub bottom_percentile: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.8,
            bottom_percentile: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("triplet {anchor:?} has empty anchor or positive")]
    EmptyTripletField { anchor: String },
    #[error("triplet {anchor:?}: teacher_scores length {got} != 1 + negatives ({expected})")]
    TeacherScoreLength {
        anchor: String,
        expected: usize,
        got: usize,
    },
    #[error("triplet #{index} ({anchor:?}) has no teacher_scores")]
    MissingTeacherScores { index: usize, anchor: String },
    #[error("answer string is empty; containment would match every candidate")]
    EmptyAnswer,
    #[error("percentile {0} outside [0, 100]")]
    PercentileRange(f64),
}

pub(crate) fn snippet(text: &str) -> String {
    let mut out: String = text.chars().take(24).collect();
    if out.len() < text.len() {
        out.push('…');
    }
    out
}

/// Strips the invisible-character set, then applies NFKC.
///
/// Stripping happens first so the result is stable: removing a format
/// character from already-normalized text can expose a newly composable
/// pair, which would break `normalize(normalize(x)) == normalize(x)`.
/// NFKC itself never emits characters from [`INVISIBLE_CHARS`], so the
/// output is a fixed point.
pub fn normalize_text(raw: &str) -> String {
    raw.chars()
        .filter(|c| !INVISIBLE_CHARS.contains(c))
        .nfkc()
        .collect()
}

/// Splits on terminal punctuation, keeping the delimiter attached to the
/// preceding sentence. Concatenating the parts reproduces the input.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        current.push(ch);
        if SENTENCE_TERMINALS.contains(&ch) {
            sentences.push(core::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    sentences
}

/// Rearranges the sentences of `text` with a seeded permutation.
///
/// Deterministic for a fixed `(text, seed)` pair; the sentence multiset is
/// preserved exactly.
pub fn shuffle_augment(text: &str, seed: u64) -> String {
    let mut sentences = split_sentences(text);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sentences.shuffle(&mut rng);
    sentences.concat()
}

/// Moves every candidate whose text contains `answer` into the mined
/// positives, leaving the rest as negatives. The two outputs partition the
/// input exactly.
pub fn extract_pseudo_positives(
    answer: &str,
    candidates: Vec<TextRecord>,
) -> Result<(Vec<TextRecord>, Vec<TextRecord>), CorpusError> {
    if answer.is_empty() {
        return Err(CorpusError::EmptyAnswer);
    }
    let mut mined_positives = Vec::new();
    let mut remaining_negatives = Vec::new();
    for candidate in candidates {
        if candidate.text.contains(answer) {
            mined_positives.push(candidate);
        } else {
            remaining_negatives.push(candidate);
        }
    }
    Ok((mined_positives, remaining_negatives))
}

/// Retains triplets whose positive teacher score is at least
/// `cfg.score_threshold` (strictly lower scores are removed).
///
/// Every input row must carry teacher scores with the positive's score at
/// index 0.
pub fn filter_by_score_threshold(
    triplets: Vec<TrainTriplet>,
    cfg: &FilterConfig,
) -> Result<Vec<TrainTriplet>, CorpusError> {
    for (index, triplet) in triplets.iter().enumerate() {
        if triplet.teacher_scores.is_none() {
            return Err(CorpusError::MissingTeacherScores {
                index,
                anchor: snippet(&triplet.anchor),
            });
        }
    }
    Ok(triplets
        .into_iter()
        .filter(|t| {
            let positive_score = t.teacher_scores.as_ref().and_then(|s| s.first().copied());
            matches!(positive_score, Some(s) if s >= cfg.score_threshold)
        })
        .collect())
}

/// Removes the `floor(n * percentile / 100)` lowest-scoring items.
///
/// Ties break by input position: among equal scores, earlier items are
/// removed first. Retained items keep their input order.
pub fn filter_bottom_percentile(
    items: Vec<(String, f64)>,
    percentile: f64,
) -> Result<Vec<(String, f64)>, CorpusError> {
    if !(0.0..=100.0).contains(&percentile) {
        return Err(CorpusError::PercentileRange(percentile));
    }
    let remove = (items.len() as f64 * percentile / 100.0) as usize;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[a]
            .1
            .total_cmp(&items[b].1)
            .then_with(|| a.cmp(&b))
    });
    let mut removed = alloc::vec![false; items.len()];
    for &idx in order.iter().take(remove) {
        removed[idx] = true;
    }
    Ok(items
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !removed[*i])
        .map(|(_, item)| item)
        .collect())
}
