//! Retrieval evaluation: graded nDCG, MAP, and Recall at a cutoff, run
//! evaluation against relevance judgments, and Spearman rank correlation
//! for score-list comparison.
//!
//! nDCG uses exponential gain (2^grade - 1) with a log2(rank + 1)
//! discount. MAP and Recall binarize grades (grade > 0 is relevant); AP
//! normalizes by min(R, k).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::math;
use crate::mining::RankedList;

/// Graded relevance judgments: query_id -> doc_id -> grade.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QRels {
    pub judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QRels {
    pub fn new(judgments: BTreeMap<String, BTreeMap<String, u32>>) -> Self {
        Self { judgments }
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }
}

/// A metric request: kind plus cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    NdcgAt(usize),
    MapAt(usize),
    RecallAt(usize),
}

impl Metric {
    pub fn compute(
        &self,
        ranking: &[String],
        rels: &BTreeMap<String, u32>,
    ) -> Result<f64, MetricsError> {
        match *self {
            Metric::NdcgAt(k) => ndcg_at_k(ranking, rels, k),
            Metric::MapAt(k) => map_at_k(ranking, rels, k),
            Metric::RecallAt(k) => recall_at_k(ranking, rels, k),
        }
    }
}

impl core::fmt::Display for Metric {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Metric::NdcgAt(k) => write!(f, "ndcg@{k}"),
            Metric::MapAt(k) => write!(f, "map@{k}"),
            Metric::RecallAt(k) => write!(f, "recall@{k}"),
        }
    }
}

impl core::str::FromStr for Metric {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, MetricsError> {
        let bad = || MetricsError::UnknownMetric { name: s.to_string() };
        let (name, k) = s.split_once('@').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(MetricsError::InvalidK);
        }
        match name {
            "ndcg" => Ok(Metric::NdcgAt(k)),
            "map" => Ok(Metric::MapAt(k)),
            "recall" => Ok(Metric::RecallAt(k)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("query has no relevant documents; metric undefined")]
    NoRelevantDocs,
    #[error("cutoff k must be at least 1")]
    InvalidK,
    #[error("run query {query_id:?} is absent from the qrels")]
    QueryNotInQrels { query_id: String },
    #[error("qrels give query {query_id:?} no relevant documents")]
    NoRelevantForQuery { query_id: String },
    #[error("unknown metric {name:?} (expected ndcg@k, map@k, or recall@k)")]
    UnknownMetric { name: String },
    #[error("spearman needs two equal-length lists of at least 2 values")]
    SpearmanShape,
    #[error("spearman undefined for a constant list")]
    SpearmanConstant,
}

fn gain(grade: u32) -> f64 {
    math::exp2(f64::from(grade)) - 1.0
}

fn discount(rank: usize) -> f64 {
    math::log2(rank as f64 + 1.0)
}

fn check_rels(rels: &BTreeMap<String, u32>, k: usize) -> Result<(), MetricsError> {
    if k < 1 {
        return Err(MetricsError::InvalidK);
    }
    if rels.values().all(|&g| g == 0) {
        return Err(MetricsError::NoRelevantDocs);
    }
    Ok(())
}

/// Normalized discounted cumulative gain at cutoff `k`. Docs missing from
/// `rels` count as grade 0; the ideal ranking sorts all judged grades
/// descending.
pub fn ndcg_at_k(
    ranking: &[String],
    rels: &BTreeMap<String, u32>,
    k: usize,
) -> Result<f64, MetricsError> {
    check_rels(rels, k)?;
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, doc_id)| gain(rels.get(doc_id).copied().unwrap_or(0)) / discount(i + 1))
        .sum();
    let mut grades: Vec<u32> = rels.values().copied().collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i + 1))
        .sum();
    Ok(dcg / idcg)
}

/// Average precision at cutoff `k` with binary relevance, normalized by
/// min(total relevant, k).
pub fn map_at_k(
    ranking: &[String],
    rels: &BTreeMap<String, u32>,
    k: usize,
) -> Result<f64, MetricsError> {
    check_rels(rels, k)?;
    let relevant: BTreeSet<&str> = rels
        .iter()
        .filter(|(_, &g)| g > 0)
        .map(|(doc_id, _)| doc_id.as_str())
        .collect();
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    for (i, doc_id) in ranking.iter().take(k).enumerate() {
        if relevant.contains(doc_id.as_str()) {
            hits += 1;
            precision_sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(precision_sum / relevant.len().min(k) as f64)
}

/// Fraction of relevant documents appearing in the top `k`.
pub fn recall_at_k(
    ranking: &[String],
    rels: &BTreeMap<String, u32>,
    k: usize,
) -> Result<f64, MetricsError> {
    check_rels(rels, k)?;
    let relevant: BTreeSet<&str> = rels
        .iter()
        .filter(|(_, &g)| g > 0)
        .map(|(doc_id, _)| doc_id.as_str())
        .collect();
    let found = ranking
        .iter()
        .take(k)
        .filter(|doc_id| relevant.contains(doc_id.as_str()))
        .count();
    Ok(found as f64 / relevant.len() as f64)
}

/// Per-query metric values and their macro averages, keyed by the metric's
/// display name.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
    pub averages: BTreeMap<String, f64>,
}

/// Evaluates a run against qrels. Every run query must be judged; judged
/// queries missing from the run score 0 on all metrics and still enter
/// the averages.
pub fn evaluate_run(
    run: &BTreeMap<String, RankedList>,
    qrels: &QRels,
    metrics: &[Metric],
) -> Result<EvalReport, MetricsError> {
    for query_id in run.keys() {
        if qrels.for_query(query_id).is_none() {
            return Err(MetricsError::QueryNotInQrels { query_id: query_id.clone() });
        }
    }
    let mut report = EvalReport::default();
    for (query_id, rels) in &qrels.judgments {
        let mut values = BTreeMap::new();
        match run.get(query_id) {
            None => {
                for metric in metrics {
                    values.insert(metric.to_string(), 0.0);
                }
            }
            Some(list) => {
                let ranking: Vec<String> =
                    list.entries.iter().map(|(doc_id, _)| doc_id.clone()).collect();
                for metric in metrics {
                    let value = metric.compute(&ranking, rels).map_err(|e| match e {
                        MetricsError::NoRelevantDocs => {
                            MetricsError::NoRelevantForQuery { query_id: query_id.clone() }
                        }
                        other => other,
                    })?;
                    values.insert(metric.to_string(), value);
                }
            }
        }
        report.per_query.insert(query_id.clone(), values);
    }
    let query_count = qrels.judgments.len();
    if query_count > 0 {
        for metric in metrics {
            let name = metric.to_string();
            let total: f64 =
                report.per_query.values().map(|v| v.get(&name).copied().unwrap_or(0.0)).sum();
            report.averages.insert(name, total / query_count as f64);
        }
    }
    Ok(report)
}

/// Ranks with ties averaged, 1-based.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average-rank tie handling: the Pearson
/// correlation of the two rank vectors, in [-1, 1].
pub fn spearman_rank_correlation(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(MetricsError::SpearmanShape);
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let mean_a = ra.iter().sum::<f64>() / n;
    let mean_b = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean_a) * (y - mean_b);
        var_a += (x - mean_a) * (x - mean_a);
        var_b += (y - mean_b) * (y - mean_b);
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(MetricsError::SpearmanConstant);
    }
    Ok((cov / math::sqrt(var_a * var_b)).clamp(-1.0, 1.0))
}
