//! Shared fixtures for the integration suites: a generated separable
//! corpus, CLI process helpers, and artifact hashing.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use embkit::core::corpus::TextRecord;
use embkit::core::metrics::QRels;
use embkit::core::TrainTriplet;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_embkit")
}

pub fn run_cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary should spawn")
}

pub fn assert_exit(output: &Output, code: i32, what: &str) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "{what}: expected exit {code}, got {:?}\nstdout: {}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr),
    );
}

pub fn sha256_file(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    format!("{:x}", hasher.finalize())
}

pub fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).unwrap());
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

/// One query of the separable corpus with its single relevant document.
pub struct ToyQuery {
    pub id: String,
    pub text: String,
    pub doc_id: String,
}

/// Separable corpus for end-to-end checks: topics use disjoint
/// vocabularies, every query names exactly one document through a marker
/// token that never occurs elsewhere.
pub struct ToyWorld {
    pub docs: Vec<TextRecord>,
    pub queries: Vec<ToyQuery>,
    pub triplets: Vec<TrainTriplet>,
    pub qrels: QRels,
}

impl ToyWorld {
    pub fn doc_text(&self, doc_id: &str) -> &str {
        &self.docs.iter().find(|d| d.id == *doc_id).expect("doc id exists").text
    }

    pub fn doc_texts(&self) -> BTreeMap<String, String> {
        self.docs.iter().map(|d| (d.id.clone(), d.text.clone())).collect()
    }
}

/// 200 documents in 10 vocabulary-disjoint topics, 50 queries. Query
/// vocabulary is disjoint from document vocabulary, so an untrained
/// encoder has no token overlap signal at all and retrieval starts at
/// chance. Each query contributes eight triplet rows whose negatives
/// rotate through the never-queried tail of its topic, so one epoch at a
/// small batch size yields several well-spread updates per query token.
pub fn disjoint_world() -> ToyWorld {
    let mut docs = Vec::new();
    let mut queries = Vec::new();
    let mut triplets = Vec::new();
    let mut qrels = QRels::default();
    let doc_text = |t: usize, k: usize| {
        format!("docmark{t}x{k} docmark{t}x{k} topic{t}word0 topic{t}word1 topic{t}word2")
    };
    for t in 0..10 {
        for k in 0..20 {
            let id = format!("d{t:02}{k:02}");
            docs.push(TextRecord { id, text: doc_text(t, k), source: "toy".to_string() });
        }
        for k in 0..5 {
            let id = format!("q{t:02}{k:02}");
            let text = format!("askmark{t}x{k} askmark{t}x{k} askmark{t}x{k}");
            let doc_id = format!("d{t:02}{k:02}");
            qrels.insert(&id, &doc_id, 1);
            for r in 0..8 {
                let negatives: Vec<String> = (0..3)
                    .map(|j| doc_text(t, 5 + (3 * k + 5 * r + j) % 15))
                    .collect();
                triplets.push(TrainTriplet::new(
                    text.clone(),
                    doc_text(t, k),
                    negatives,
                    "toy",
                ));
            }
            queries.push(ToyQuery { id, text, doc_id });
        }
    }
    ToyWorld { docs, queries, triplets, qrels }
}

/// Reranker benchmark corpus. Topics share tokens with their queries, and
/// every queried document has a lexical twin: a distractor with identical
/// token overlap, term frequencies, and length, whose id sorts first.
/// Only the embedding cosine can break that tie. Queries with k < 5 per
/// topic are the training split, k in 5..10 the held-out split.
pub struct RerankWorld {
    pub docs: Vec<TextRecord>,
    pub train_queries: Vec<ToyQuery>,
    pub heldout_queries: Vec<ToyQuery>,
    pub qrels: QRels,
}

impl RerankWorld {
    pub fn doc_text(&self, doc_id: &str) -> &str {
        &self.docs.iter().find(|d| d.id == *doc_id).expect("doc id exists").text
    }

    /// Judgments restricted to the held-out split; judged queries absent
    /// from a run would otherwise score zero and drag the averages.
    pub fn heldout_qrels(&self) -> QRels {
        let mut qrels = QRels::default();
        for q in &self.heldout_queries {
            qrels.insert(&q.id, &q.doc_id, 1);
        }
        qrels
    }

    pub fn distractor_id(doc_id: &str) -> String {
        format!("da{}", &doc_id[2..])
    }

    /// Candidate ids for ranking one query: the relevant document, its
    /// distractor twin, four same-topic documents, four off-topic ones.
    pub fn candidates(&self, q: &ToyQuery) -> Vec<String> {
        let t: usize = q.doc_id[2..4].parse().unwrap();
        let k: usize = q.doc_id[4..6].parse().unwrap();
        let mut ids = vec![q.doc_id.clone(), Self::distractor_id(&q.doc_id)];
        for j in 1..=4 {
            ids.push(format!("dt{t:02}{:02}", (k + j) % 10));
        }
        for j in 1..=4 {
            ids.push(format!("dt{:02}{k:02}", (t + j) % 10));
        }
        ids
    }
}

pub fn rerank_world() -> RerankWorld {
    let mut docs = Vec::new();
    let mut train_queries = Vec::new();
    let mut heldout_queries = Vec::new();
    let mut qrels = QRels::default();
    for t in 0..10 {
        for k in 0..10 {
            // True document and its lexical twin: both contain the marker
            // twice plus top{t}a and top{t}b, and one token of their own,
            // so Jaccard, BM25, and length agree exactly for the query.
            docs.push(TextRecord {
                id: format!("dt{t:02}{k:02}"),
                text: format!("mark{t}x{k} mark{t}x{k} top{t}a top{t}b top{t}c"),
                source: "toy".to_string(),
            });
            docs.push(TextRecord {
                id: format!("da{t:02}{k:02}"),
                text: format!("mark{t}x{k} mark{t}x{k} top{t}a top{t}b off{t}z"),
                source: "toy".to_string(),
            });
            let query = ToyQuery {
                id: format!("q{t:02}{k:02}"),
                text: format!("mark{t}x{k} top{t}a top{t}b"),
                doc_id: format!("dt{t:02}{k:02}"),
            };
            qrels.insert(&query.id, &query.doc_id, 1);
            if k < 5 {
                train_queries.push(query);
            } else {
                heldout_queries.push(query);
            }
        }
    }
    RerankWorld { docs, train_queries, heldout_queries, qrels }
}
