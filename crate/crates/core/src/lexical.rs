//! Lexical retrieval: a small tokenizer, an inverted index, BM25 scoring,
//! and exhaustive top-k search over the index.
//!
//! The BM25 variant is the Lucene-style one: Robertson idf with +1
//! smoothing, so idf stays strictly positive even for terms present in
//! every document.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::TextRecord;
use crate::math;
use crate::mining::RankedList;

/// BM25 free parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), LexicalError> {
        if !(self.k1 >= 0.0) || !(0.0..=1.0).contains(&self.b) {
            return Err(LexicalError::InvalidParams {
                k1: self.k1,
                b: self.b,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LexicalError {
    #[error("duplicate doc id {id:?} in corpus")]
    DuplicateDocId { id: String },
    #[error("doc id {id:?} not present in index")]
    UnknownDocId { id: String },
    #[error("invalid BM25 parameters: k1={k1}, b={b} (need k1 >= 0, 0 <= b <= 1)")]
    InvalidParams { k1: f64, b: f64 },
}

/// Unicode ranges treated as CJK for bigram tokenization: Hiragana,
/// Katakana (including phonetic extensions), and Han (unified, extension
/// A, extension B, compatibility).
fn is_cjk(c: char) -> bool {
    matches!(
        u32::from(c),
        0x3040..=0x309F
            | 0x30A0..=0x30FF
            | 0x31F0..=0x31FF
            | 0x3400..=0x4DBF
            | 0x4E00..=0x9FFF
            | 0xF900..=0xFAFF
            | 0x20000..=0x2A6DF
    )
}

fn flush_word(word: &mut String, tokens: &mut Vec<String>) {
    if !word.is_empty() {
        tokens.push(core::mem::take(word));
    }
}

fn flush_cjk(run: &mut Vec<char>, tokens: &mut Vec<String>) {
    match run.len() {
        0 => {}
        1 => tokens.push(run[0].into()),
        _ => {
            for pair in run.windows(2) {
                tokens.push(pair.iter().collect());
            }
        }
    }
    run.clear();
}

/// Tokenizes normalized text: maximal alphanumeric non-CJK runs become
/// single lowercased tokens, maximal CJK runs become overlapping character
/// bigrams (a lone CJK character is its own token), everything else
/// separates.
pub fn tokenize_lexical(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut cjk_run: Vec<char> = Vec::new();
    for c in text.chars() {
        if is_cjk(c) {
            flush_word(&mut word, &mut tokens);
            cjk_run.push(c);
        } else if c.is_alphanumeric() {
            flush_cjk(&mut cjk_run, &mut tokens);
            word.extend(c.to_lowercase());
        } else {
            flush_word(&mut word, &mut tokens);
            flush_cjk(&mut cjk_run, &mut tokens);
        }
    }
    flush_word(&mut word, &mut tokens);
    flush_cjk(&mut cjk_run, &mut tokens);
    tokens
}

/// Immutable BM25 index over one document collection.
///
/// Postings lists are sorted by doc id; iteration order everywhere is
/// deterministic.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InvertedIndex {
    params: Bm25Params,
    /// term -> sorted list of (doc_id, term frequency)
    postings: BTreeMap<String, Vec<(String, u32)>>,
    /// doc_id -> token count
    doc_lengths: BTreeMap<String, u32>,
    doc_count: usize,
    avg_doc_length: f64,
}

impl InvertedIndex {
    /// Builds the index from already-normalized documents.
    pub fn build(docs: &[TextRecord], params: Bm25Params) -> Result<Self, LexicalError> {
        params.validate()?;
        let mut doc_lengths = BTreeMap::new();
        let mut postings: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
        for doc in docs {
            let tokens = tokenize_lexical(&doc.text);
            if doc_lengths
                .insert(doc.id.clone(), tokens.len() as u32)
                .is_some()
            {
                return Err(LexicalError::DuplicateDocId { id: doc.id.clone() });
            }
            for token in tokens {
                *postings
                    .entry(token)
                    .or_default()
                    .entry(doc.id.clone())
                    .or_insert(0) += 1;
            }
        }
        let total: u64 = doc_lengths.values().map(|&l| u64::from(l)).sum();
        let doc_count = doc_lengths.len();
        let avg_doc_length = if doc_count == 0 {
            0.0
        } else {
            total as f64 / doc_count as f64
        };
        Ok(Self {
            params,
            postings: postings
                .into_iter()
                .map(|(term, by_doc)| (term, by_doc.into_iter().collect()))
                .collect(),
            doc_lengths,
            doc_count,
            avg_doc_length,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_lengths(&self) -> &BTreeMap<String, u32> {
        &self.doc_lengths
    }

    pub fn postings(&self) -> &BTreeMap<String, Vec<(String, u32)>> {
        &self.postings
    }

    pub fn contains_doc(&self, doc_id: &str) -> bool {
        self.doc_lengths.contains_key(doc_id)
    }

    /// Document frequency of a term (0 for unseen terms).
    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Smoothed inverse document frequency, ln(1 + (N - df + 0.5) / (df + 0.5)).
    /// Strictly positive for df in [0, N].
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count as f64;
        let df = self.doc_frequency(term) as f64;
        math::ln(1.0 + (n - df + 0.5) / (df + 0.5))
    }

    fn term_frequency(&self, term: &str, doc_id: &str) -> u32 {
        self.postings.get(term).map_or(0, |list| {
            list.binary_search_by(|(id, _)| id.as_str().cmp(doc_id))
                .map(|pos| list[pos].1)
                .unwrap_or(0)
        })
    }

    fn weigh(&self, tf: u32, doc_length: u32) -> f64 {
        if tf == 0 {
            return 0.0;
        }
        let Bm25Params { k1, b } = self.params;
        let dl_ratio = if self.avg_doc_length > 0.0 {
            f64::from(doc_length) / self.avg_doc_length
        } else {
            0.0
        };
        let tf = f64::from(tf);
        tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl_ratio))
    }

    /// BM25 score of an indexed document against query tokens. Query
    /// tokens are taken with multiplicity: a duplicated term contributes
    /// twice.
    pub fn bm25_score(&self, query_tokens: &[String], doc_id: &str) -> Result<f64, LexicalError> {
        let Some(&doc_length) = self.doc_lengths.get(doc_id) else {
            return Err(LexicalError::UnknownDocId {
                id: doc_id.into(),
            });
        };
        Ok(query_tokens
            .iter()
            .map(|t| self.idf(t) * self.weigh(self.term_frequency(t, doc_id), doc_length))
            .sum())
    }

    /// BM25 score of an out-of-collection document given as a token list,
    /// using this index's collection statistics (idf, average length) but
    /// the document's own term frequencies. Lets arbitrary candidates be
    /// scored on the same scale as indexed ones.
    pub fn bm25_score_tokens(&self, query_tokens: &[String], doc_tokens: &[String]) -> f64 {
        let doc_length = doc_tokens.len() as u32;
        let mut tf_map: BTreeMap<&str, u32> = BTreeMap::new();
        for token in doc_tokens {
            *tf_map.entry(token).or_insert(0) += 1;
        }
        query_tokens
            .iter()
            .map(|t| {
                let tf = tf_map.get(t.as_str()).copied().unwrap_or(0);
                self.idf(t) * self.weigh(tf, doc_length)
            })
            .sum()
    }

    /// [`Self::bm25_score_tokens`] over raw text.
    pub fn bm25_score_text(&self, query_tokens: &[String], text: &str) -> f64 {
        self.bm25_score_tokens(query_tokens, &tokenize_lexical(text))
    }

    /// Scores every document sharing a term with the query and returns the
    /// top k by score, ties broken by ascending doc id. Documents sharing
    /// no term are omitted (their score is zero).
    pub fn search_topk(&self, query: &TextRecord, k: usize) -> RankedList {
        let query_tokens = tokenize_lexical(&query.text);
        let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
        for token in &query_tokens {
            let Some(list) = self.postings.get(token) else {
                continue;
            };
            let idf = self.idf(token);
            for &(ref doc_id, tf) in list {
                let weight = idf * self.weigh(tf, self.doc_lengths[doc_id]);
                *scores.entry(doc_id).or_insert(0.0) += weight;
            }
        }
        let mut entries: Vec<(String, f64)> = scores
            .into_iter()
            .map(|(id, score)| (id.into(), score))
            .collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(k);
        RankedList {
            query_id: query.id.clone(),
            entries,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn tokenizer_bigrams_and_words() {
        assert_eq!(tokenize_lexical("東京タワー"), toks(&["東京", "京タ", "タワ", "ワー"]));
        assert_eq!(tokenize_lexical("Hello world"), toks(&["hello", "world"]));
        assert_eq!(tokenize_lexical("山"), toks(&["山"]));
        assert_eq!(tokenize_lexical(""), Vec::<String>::new());
        assert_eq!(tokenize_lexical("abc123"), toks(&["abc123"]));
    }

    #[test]
    fn tokenizer_merges_adjacent_cjk_scripts() {
        // Hiragana and Han are one run: bigrams cross the script boundary.
        assert_eq!(
            tokenize_lexical("GPT-4は人気"),
            toks(&["gpt", "4", "は人", "人気"])
        );
        // Ideographic comma U+3001 is a separator, not part of a run.
        assert_eq!(
            tokenize_lexical("こんにちは、世界。"),
            toks(&["こん", "んに", "にち", "ちは", "世界"])
        );
    }

    fn bm25_fixture() -> InvertedIndex {
        // apple: df=1, tf=2 in a, dl(a)=4, avgdl=(4+6+5)/3=5
        let docs = vec![
            TextRecord::new("a", "apple apple pear plum", "t"),
            TextRecord::new("b", "kiwi mango banana grape melon lemon", "t"),
            TextRecord::new("c", "peach cherry fig date lime", "t"),
        ];
        InvertedIndex::build(&docs, Bm25Params::default()).unwrap()
    }

    #[test]
    fn bm25_hand_example() {
        let index = bm25_fixture();
        assert_eq!(index.doc_count(), 3);
        assert!((index.avg_doc_length() - 5.0).abs() < 1e-12);
        let score = index.bm25_score(&toks(&["apple"]), "a").unwrap();
        assert!((score - 1.4290227527323165).abs() < 1e-12);
        assert!((score - 1.4290).abs() < 1e-4);
    }

    #[test]
    fn idf_only_hand_example() {
        // zed in all 3 docs (df=N), tf=1 in a, dl(a)=avgdl=5: the tf part
        // collapses to 1 and the score is the idf alone.
        let docs = vec![
            TextRecord::new("a", "zed alpha beta gamma delta", "t"),
            TextRecord::new("b", "zed one two", "t"),
            TextRecord::new("c", "zed p q r s t6 t7", "t"),
        ];
        let index = InvertedIndex::build(&docs, Bm25Params::default()).unwrap();
        let score = index.bm25_score(&toks(&["zed"]), "a").unwrap();
        assert!((score - 0.13353139262452257).abs() < 1e-12);
        assert!(score > 0.0);
    }

    #[test]
    fn absent_terms_contribute_zero() {
        let index = bm25_fixture();
        assert_eq!(index.bm25_score(&toks(&["absent", "missing"]), "a").unwrap(), 0.0);
        let mixed = index.bm25_score(&toks(&["apple", "absent"]), "a").unwrap();
        let alone = index.bm25_score(&toks(&["apple"]), "a").unwrap();
        assert!((mixed - alone).abs() < 1e-15);
    }

    #[test]
    fn duplicate_query_term_doubles_contribution() {
        let index = bm25_fixture();
        let single = index.bm25_score(&toks(&["apple"]), "a").unwrap();
        let double = index.bm25_score(&toks(&["apple", "apple"]), "a").unwrap();
        assert!((double - 2.0 * single).abs() < 1e-12);
    }

    #[test]
    fn unknown_doc_is_an_error() {
        let index = bm25_fixture();
        assert_eq!(
            index.bm25_score(&toks(&["apple"]), "nope"),
            Err(LexicalError::UnknownDocId { id: "nope".into() })
        );
    }

    #[test]
    fn duplicate_doc_id_is_an_error() {
        let docs = vec![
            TextRecord::new("dup", "one", "t"),
            TextRecord::new("dup", "two", "t"),
        ];
        assert_eq!(
            InvertedIndex::build(&docs, Bm25Params::default()).unwrap_err(),
            LexicalError::DuplicateDocId { id: "dup".into() }
        );
    }

    #[test]
    fn invalid_params_rejected() {
        let docs = [TextRecord::new("a", "x", "t")];
        assert!(InvertedIndex::build(&docs, Bm25Params { k1: -0.1, b: 0.5 }).is_err());
        assert!(InvertedIndex::build(&docs, Bm25Params { k1: 1.2, b: 1.5 }).is_err());
    }

    #[test]
    fn empty_corpus_builds_empty_index() {
        let index = InvertedIndex::build(&[], Bm25Params::default()).unwrap();
        assert_eq!(index.doc_count(), 0);
        assert!(index.postings().is_empty());
        assert_eq!(index.avg_doc_length(), 0.0);
    }

    #[test]
    fn rebuild_is_identical() {
        let a = bm25_fixture();
        let b = bm25_fixture();
        assert_eq!(a, b);
    }

    #[test]
    fn index_invariants_hold() {
        let index = bm25_fixture();
        for (term, list) in index.postings() {
            assert_eq!(list.len(), index.doc_frequency(term));
            for pair in list.windows(2) {
                assert!(pair[0].0 < pair[1].0, "postings sorted by doc id");
            }
            for (doc_id, tf) in list {
                assert!(index.doc_lengths().contains_key(doc_id));
                assert!(*tf >= 1);
            }
        }
        let mean = index.doc_lengths().values().map(|&l| f64::from(l)).sum::<f64>()
            / index.doc_count() as f64;
        assert!((index.avg_doc_length() - mean).abs() < 1e-12);
    }

    #[test]
    fn idf_positive_for_all_df() {
        let docs = vec![
            TextRecord::new("a", "common rare", "t"),
            TextRecord::new("b", "common", "t"),
            TextRecord::new("c", "common", "t"),
        ];
        let index = InvertedIndex::build(&docs, Bm25Params::default()).unwrap();
        assert!(index.idf("common") > 0.0);
        assert!(index.idf("rare") > 0.0);
        assert!(index.idf("rare") > index.idf("common"));
    }

    #[test]
    fn search_returns_only_matching_docs() {
        let index = bm25_fixture();
        let query = TextRecord::new("q", "apple", "t");
        let hits = index.search_topk(&query, 10);
        assert_eq!(hits.query_id, "q");
        assert_eq!(hits.entries.len(), 1);
        assert_eq!(hits.entries[0].0, "a");
        let top1 = index.search_topk(&TextRecord::new("q", "apple kiwi peach", "t"), 1);
        assert_eq!(top1.entries.len(), 1);
    }

    #[test]
    fn search_ties_break_by_doc_id() {
        let docs = vec![
            TextRecord::new("m", "same text", "t"),
            TextRecord::new("k", "same text", "t"),
            TextRecord::new("z", "same text", "t"),
        ];
        let index = InvertedIndex::build(&docs, Bm25Params::default()).unwrap();
        let hits = index.search_topk(&TextRecord::new("q", "same", "t"), 3);
        let ids: Vec<_> = hits.entries.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, ["k", "m", "z"]);
    }

    #[test]
    fn score_text_matches_indexed_scoring() {
        let index = bm25_fixture();
        let query = toks(&["apple"]);
        let indexed = index.bm25_score(&query, "a").unwrap();
        let external = index.bm25_score_text(&query, "apple apple pear plum");
        assert!((indexed - external).abs() < 1e-12);
        assert_eq!(index.bm25_score_text(&query, ""), 0.0);
    }
}
