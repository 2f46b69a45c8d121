//! Per-line schema validation for the four interchange formats.

use std::fmt;
use std::path::Path;

use embkit_core::corpus::{normalize_text, TextRecord};
use embkit_core::TrainTriplet;

use crate::error::CliError;
use crate::io::{self, run_row_to_list, RunRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Schema {
    /// {"id","text","source"} rows with normalized text.
    Textrecord,
    /// {"anchor","positive","negatives",...} training rows.
    Triplet,
    /// {"query_id","ranking":[{"doc_id","score"}]} rows.
    Run,
    /// query_id<TAB>doc_id<TAB>grade lines.
    Qrels,
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Schema::Textrecord => "textrecord",
            Schema::Triplet => "triplet",
            Schema::Run => "run",
            Schema::Qrels => "qrels",
        };
        f.write_str(name)
    }
}

/// Line-numbered failures plus the total row count (empty lines are not
/// rows).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub rows: usize,
    pub failures: Vec<(usize, String)>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

fn check_line(schema: Schema, line: &str) -> Result<(), String> {
    match schema {
        Schema::Textrecord => {
            let record: TextRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
            if record.id.is_empty() {
                return Err("empty id".to_string());
            }
            if record.text.is_empty() {
                return Err(format!("empty text in {:?}", record.id));
            }
            if normalize_text(&record.text) != record.text {
                return Err(format!("text of {:?} is not normalized", record.id));
            }
            Ok(())
        }
        Schema::Triplet => {
            let triplet: TrainTriplet = serde_json::from_str(line).map_err(|e| e.to_string())?;
            triplet.validate().map_err(|e| e.to_string())
        }
        Schema::Run => {
            let row: RunRow = serde_json::from_str(line).map_err(|e| e.to_string())?;
            if row.query_id.is_empty() {
                return Err("empty query_id".to_string());
            }
            run_row_to_list(&row).validate().map_err(|e| e.to_string())
        }
        Schema::Qrels => io::parse_qrels_line(line).map(|_| ()).map_err(|e| e),
    }
}

/// Validates every nonempty line of `path` against `schema`. Only an
/// unreadable file is an error; malformed rows land in the report.
pub fn validate_file(path: &Path, schema: Schema) -> Result<ValidationReport, CliError> {
    let text = io::read_to_string(path)?;
    let mut report = ValidationReport::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.rows += 1;
        if let Err(message) = check_line(schema, line) {
            report.failures.push((idx + 1, message));
        }
    }
    Ok(report)
}
