//! Stage logic shared by the standalone subcommands and the pipeline
//! driver. Everything here is deterministic: seeded RNG only, sorted map
//! iteration, stable tie-breaking.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use embkit_core::corpus::TextRecord;
use embkit_core::distill::DatasetRegistry;
use embkit_core::embedder::{EmbedderParams, Role};
use embkit_core::lexical::InvertedIndex;
use embkit_core::mining::{mine_hard_negatives, MiningConfig, RankedList};
use embkit_core::reranker::{rerank_features, rerank_score, FeatureContext, RerankerParams};
use embkit_core::TrainTriplet;

use crate::error::CliError;

/// A mining query: a text record plus the supervision that may ride along.
/// `positive` is a known positive passage; `answer` enables pseudo-positive
/// extraction inside the mining window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

impl QueryRecord {
    pub fn as_text_record(&self) -> TextRecord {
        TextRecord::new(self.id.clone(), self.text.clone(), self.source.clone())
    }
}

/// One query-document pair for reranker scoring; `score` is filled on
/// output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRow {
    pub query: String,
    pub doc: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Scores each pair with the reranker model.
pub fn score_pairs(
    params: &RerankerParams,
    rows: Vec<PairRow>,
    ctx: &FeatureContext,
) -> Result<Vec<PairRow>, CliError> {
    let mut out = Vec::with_capacity(rows.len());
    for mut row in rows {
        let features = rerank_features(&row.query, &row.doc, ctx)
            .map_err(|e| CliError::data(format!("query {:?}: {e}", row.query)))?;
        row.score = Some(
            rerank_score(params, &features)
                .map_err(|e| CliError::data(format!("query {:?}: {e}", row.query)))?,
        );
        out.push(row);
    }
    Ok(out)
}

/// Splitmix64 over the global seed xored with an FNV-1a hash of the stage
/// name: stages draw unrelated streams from one seed and can be re-run
/// standalone with the same derived value.
pub fn derived_seed(global: u64, stage: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in stage.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = global ^ hash;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Ranks the collection for one query by embedder cosine, descending,
/// ties by ascending doc id. Documents the embedder cannot encode are
/// skipped rather than scored.
pub fn dense_rank(
    embedder: &EmbedderParams,
    query: &TextRecord,
    docs: &[TextRecord],
    k: usize,
) -> Result<RankedList, CliError> {
    let query_vec = embedder
        .encode(&query.text, Role::Query)
        .map_err(|e| CliError::data(format!("query {:?}: {e}", query.id)))?;
    let mut entries: Vec<(String, f64)> = Vec::new();
    for doc in docs {
        let Ok(doc_vec) = embedder.encode(&doc.text, Role::Passage) else {
            continue;
        };
        let score: f64 = query_vec.iter().zip(&doc_vec).map(|(a, b)| a * b).sum();
        entries.push((doc.id.clone(), score));
    }
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(k);
    Ok(RankedList::new(query.id.clone(), entries))
}

/// Mines one triplet per query: BM25 top list and dense top list fused,
/// windowed, answer-bearing docs pulled out, remainder capped. The
/// positive is the query's own, or the best mined pseudo positive when
/// none was given.
pub fn mine_triplets(
    index: &InvertedIndex,
    docs: &[TextRecord],
    embedder: &EmbedderParams,
    queries: &[QueryRecord],
    cfg: &MiningConfig,
) -> Result<Vec<TrainTriplet>, CliError> {
    let doc_texts: BTreeMap<String, String> =
        docs.iter().map(|d| (d.id.clone(), d.text.clone())).collect();
    let mut out = Vec::with_capacity(queries.len());
    for query in queries {
        let record = query.as_text_record();
        // Full-depth lists: truncating them would change the fused order,
        // since two mid-rank appearances can outscore one high rank.
        let bm25_list = index.search_topk(&record, docs.len());
        let dense_list = dense_rank(embedder, &record, docs, docs.len())?;
        let outcome = mine_hard_negatives(
            &record,
            query.answer.as_deref(),
            &bm25_list,
            &dense_list,
            cfg,
            &doc_texts,
        )
        .map_err(|e| CliError::data(format!("query {:?}: {e}", query.id)))?;
        let positive = match (&query.positive, outcome.mined_positives.first()) {
            (Some(text), _) => text.clone(),
            (None, Some(doc_id)) => doc_texts[doc_id].clone(),
            (None, None) => {
                return Err(CliError::data(format!(
                    "query {:?} has no positive and mining found no pseudo positive",
                    query.id
                )));
            }
        };
        // The window can capture the positive itself (or a text twin of
        // it) when no answer string marks it; a triplet must not contain
        // the same text twice.
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        seen.insert(query.text.as_str());
        seen.insert(positive.as_str());
        let mut negatives: Vec<String> = Vec::with_capacity(outcome.negatives.len());
        for doc_id in &outcome.negatives {
            let text = doc_texts[doc_id].as_str();
            if seen.insert(text) {
                negatives.push(text.to_string());
            }
        }
        out.push(TrainTriplet::new(query.text.clone(), positive, negatives, query.source.clone()));
    }
    Ok(out)
}

/// Scores each triplet's candidates with the reranker and stores them as
/// teacher scores aligned to [positive] + negatives.
pub fn score_triplets(
    params: &RerankerParams,
    rows: Vec<TrainTriplet>,
    ctx: &FeatureContext,
) -> Result<Vec<TrainTriplet>, CliError> {
    let mut out = Vec::with_capacity(rows.len());
    for mut row in rows {
        let mut scores = Vec::with_capacity(1 + row.negatives.len());
        for doc in std::iter::once(&row.positive).chain(row.negatives.iter()) {
            let features = rerank_features(&row.anchor, doc, ctx)
                .map_err(|e| CliError::data(format!("anchor {:?}: {e}", row.anchor)))?;
            scores.push(
                rerank_score(params, &features)
                    .map_err(|e| CliError::data(format!("anchor {:?}: {e}", row.anchor)))?,
            );
        }
        row.teacher_scores = Some(scores);
        out.push(row);
    }
    Ok(out)
}

/// Retrieval run over the collection: every query ranked by embedder
/// cosine to depth `k`.
pub fn retrieval_run(
    embedder: &EmbedderParams,
    queries: &[QueryRecord],
    docs: &[TextRecord],
    k: usize,
) -> Result<BTreeMap<String, RankedList>, CliError> {
    let mut run = BTreeMap::new();
    for query in queries {
        let list = dense_rank(embedder, &query.as_text_record(), docs, k)?;
        if run.insert(query.id.clone(), list).is_some() {
            return Err(CliError::data(format!("query id {:?} appears twice", query.id)));
        }
    }
    Ok(run)
}

/// Every source tag in `sources` must be registered; the first missing tag
/// is reported. An empty registry is the single-corpus case and accepts
/// every tag, mirroring how it maps everything to the retrieval loss.
pub fn check_registry<'a>(
    registry: &DatasetRegistry,
    sources: impl IntoIterator<Item = &'a str>,
    stage: &str,
) -> Result<(), CliError> {
    if registry.is_empty() {
        return Ok(());
    }
    for source in sources {
        if !registry.contains_key(source) {
            return Err(CliError::stage(
                stage,
                format!("source tag {source:?} is not in the dataset registry"),
            ));
        }
    }
    Ok(())
}
