//! File formats: JSONL rows, versioned JSON model/index files, TREC-style
//! qrels TSV, and run files.
//!
//! Writers emit compact JSON with struct fields in declaration order and
//! maps as BTreeMaps, so a fixed input always produces identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use embkit_core::corpus::TextRecord;
use embkit_core::embedder::EmbedderParams;
use embkit_core::lexical::{Bm25Params, InvertedIndex};
use embkit_core::metrics::QRels;
use embkit_core::mining::RankedList;
use embkit_core::reranker::{RerankerParams, FEATURE_COUNT};

use crate::error::CliError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_string(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// One deserialized row per nonempty line; parse failures carry the
/// 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(line).map_err(|e| CliError::Line {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).map_err(|e| CliError::data(e.to_string()))?);
        out.push('\n');
    }
    write_string(path, &out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Line {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    write_string(path, &text)
}

/// `query_id<TAB>doc_id<TAB>grade`, one judgment per line.
pub fn read_qrels(path: &Path) -> Result<QRels, CliError> {
    let text = read_to_string(path)?;
    let mut qrels = QRels::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (query_id, doc_id, grade) = parse_qrels_line(line).map_err(|message| {
            CliError::Line { path: path.to_path_buf(), line: idx + 1, message }
        })?;
        qrels.insert(query_id, doc_id, grade);
    }
    Ok(qrels)
}

pub(crate) fn parse_qrels_line(line: &str) -> Result<(&str, &str, u32), String> {
    let mut parts = line.split('\t');
    let (Some(query_id), Some(doc_id), Some(grade), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err("expected query_id<TAB>doc_id<TAB>grade".to_string());
    };
    if query_id.is_empty() || doc_id.is_empty() {
        return Err("empty query_id or doc_id".to_string());
    }
    let grade: u32 = grade
        .parse()
        .map_err(|_| format!("grade {grade:?} is not a non-negative integer"))?;
    Ok((query_id, doc_id, grade))
}

pub fn write_qrels(path: &Path, qrels: &QRels) -> Result<(), CliError> {
    let mut out = String::new();
    for (query_id, docs) in &qrels.judgments {
        for (doc_id, grade) in docs {
            out.push_str(&format!("{query_id}\t{doc_id}\t{grade}\n"));
        }
    }
    write_string(path, &out)
}

/// One run-file line: a query and its scored ranking, best first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRow {
    pub query_id: String,
    pub ranking: Vec<RunEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunEntry {
    pub doc_id: String,
    pub score: f64,
}

pub fn run_row_to_list(row: &RunRow) -> RankedList {
    RankedList::new(
        row.query_id.clone(),
        row.ranking.iter().map(|e| (e.doc_id.clone(), e.score)).collect(),
    )
}

/// Reads and validates a run file into per-query ranked lists. Duplicate
/// query ids, unsorted scores, or repeated docs are data errors.
pub fn read_run(path: &Path) -> Result<BTreeMap<String, RankedList>, CliError> {
    let rows: Vec<RunRow> = read_jsonl(path)?;
    let mut run = BTreeMap::new();
    for row in &rows {
        let list = run_row_to_list(row);
        list.validate().map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        if run.insert(row.query_id.clone(), list).is_some() {
            return Err(CliError::data(format!(
                "{}: query {:?} appears twice",
                path.display(),
                row.query_id
            )));
        }
    }
    Ok(run)
}

pub fn write_run(path: &Path, run: &BTreeMap<String, RankedList>) -> Result<(), CliError> {
    let rows: Vec<RunRow> = run
        .values()
        .map(|list| RunRow {
            query_id: list.query_id.clone(),
            ranking: list
                .entries
                .iter()
                .map(|(doc_id, score)| RunEntry { doc_id: doc_id.clone(), score: *score })
                .collect(),
        })
        .collect();
    write_jsonl(path, &rows)
}

const INDEX_FORMAT: &str = "embkit/index";
const EMBEDDER_FORMAT: &str = "embkit/embedder";
const RERANKER_FORMAT: &str = "embkit/reranker";
const FILE_VERSION: u32 = 1;

fn check_header(path: &Path, format: &str, version: u32, want: &str) -> Result<(), CliError> {
    if format != want || version != FILE_VERSION {
        return Err(CliError::data(format!(
            "{}: expected {want} v{FILE_VERSION}, found {format} v{version}",
            path.display()
        )));
    }
    Ok(())
}

/// The index file stores the normalized documents plus scoring parameters;
/// loading rebuilds the postings, which is cheap at this scale and keeps
/// one construction path. Keeping the texts also lets later stages
/// (mining, dense scoring) work from the index file alone.
#[derive(Debug, Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    k1: f64,
    b: f64,
    docs: Vec<TextRecord>,
}

pub struct LoadedIndex {
    pub index: InvertedIndex,
    pub docs: Vec<TextRecord>,
}

impl LoadedIndex {
    pub fn doc_texts(&self) -> BTreeMap<String, String> {
        self.docs.iter().map(|d| (d.id.clone(), d.text.clone())).collect()
    }
}

pub fn save_index(path: &Path, docs: &[TextRecord], params: Bm25Params) -> Result<(), CliError> {
    // Building first surfaces duplicate-id errors before anything is
    // written.
    InvertedIndex::build(docs, params).map_err(|e| CliError::data(e.to_string()))?;
    write_json(
        path,
        &IndexFile {
            format: INDEX_FORMAT.to_string(),
            version: FILE_VERSION,
            k1: params.k1,
            b: params.b,
            docs: docs.to_vec(),
        },
    )
}

pub fn load_index(path: &Path) -> Result<LoadedIndex, CliError> {
    let file: IndexFile = read_json(path)?;
    check_header(path, &file.format, file.version, INDEX_FORMAT)?;
    let params = Bm25Params { k1: file.k1, b: file.b };
    let index = InvertedIndex::build(&file.docs, params)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(LoadedIndex { index, docs: file.docs })
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbedderFile {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    teacher_tag: Option<String>,
    params: EmbedderParams,
}

pub fn save_embedder(
    path: &Path,
    params: &EmbedderParams,
    teacher_tag: Option<&str>,
) -> Result<(), CliError> {
    write_json(
        path,
        &EmbedderFile {
            format: EMBEDDER_FORMAT.to_string(),
            version: FILE_VERSION,
            teacher_tag: teacher_tag.map(str::to_string),
            params: params.clone(),
        },
    )
}

pub fn load_embedder(path: &Path) -> Result<EmbedderParams, CliError> {
    let file: EmbedderFile = read_json(path)?;
    check_header(path, &file.format, file.version, EMBEDDER_FORMAT)?;
    // Reassembling through the checked constructor rejects corrupt tables.
    EmbedderParams::new(
        file.params.vocab().clone(),
        file.params.table().to_vec(),
        file.params.dim(),
        file.params.tau(),
    )
    .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize, Deserialize)]
struct RerankerFile {
    format: String,
    version: u32,
    feature_count: usize,
    params: RerankerParams,
}

pub fn save_reranker(path: &Path, params: &RerankerParams) -> Result<(), CliError> {
    write_json(
        path,
        &RerankerFile {
            format: RERANKER_FORMAT.to_string(),
            version: FILE_VERSION,
            feature_count: FEATURE_COUNT,
            params: params.clone(),
        },
    )
}

pub fn load_reranker(path: &Path) -> Result<RerankerParams, CliError> {
    let file: RerankerFile = read_json(path)?;
    check_header(path, &file.format, file.version, RERANKER_FORMAT)?;
    if file.feature_count != FEATURE_COUNT {
        return Err(CliError::data(format!(
            "{}: model has {} features, this build expects {FEATURE_COUNT}",
            path.display(),
            file.feature_count
        )));
    }
    file.params
        .validate()
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(file.params)
}

