//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data
//! or environment error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};

use embkit::core::corpus::{FilterConfig, TextRecord};
use embkit::core::distill::{train_distill, DatasetRegistry};
use embkit::core::embedder::{train_embedder, EmbedderParams, TrainingConfig};
use embkit::core::lexical::Bm25Params;
use embkit::core::metrics::evaluate_run;
use embkit::core::mining::MiningConfig;
use embkit::core::reranker::{
    train_reranker_two_stage, FeatureContext, RerankerParams, StageConfig,
};
use embkit::core::TrainTriplet;
use embkit::error::CliError;
use embkit::io;
use embkit::pipeline::{
    apply_filter, effective_registry, metric_depth, parse_metrics, run_pipeline, FilterMode,
    FilterSection, TrainEmbedSection,
};
use embkit::stages::{mine_triplets, score_pairs, score_triplets, PairRow, QueryRecord};
use embkit::validate::{validate_file, Schema};

#[derive(Parser)]
#[command(
    name = "embkit",
    version,
    about = "Retrieval training toolkit: corpus preparation, BM25 and dense mining, dual-encoder and reranker training, distillation, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize the text of JSONL records (NFKC, invisibles removed).
    Normalize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build a BM25 index file from a JSONL document collection.
    BuildIndex {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1.2)]
        k1: f64,
        #[arg(long, default_value_t = 0.75)]
        b: f64,
    },
    /// Mine hard-negative triplets by fused BM25 and dense ranking.
    Mine {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        dense_model: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Mining parameters as JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the dual-encoder on contrastive triplets.
    TrainEmbed {
        #[arg(long)]
        data: PathBuf,
        /// {"dim","tau","training":{...}} as JSON; defaults apply when
        /// omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from an existing model instead of a fresh
        /// initialization.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Train the reranker: stage 1 then stage 2.
    TrainRerank {
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        stage2: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Index file for the BM25 feature.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Embedder model for the cosine feature.
        #[arg(long)]
        embedder: Option<PathBuf>,
        /// Stage-1 config as JSON; built-in stage-1 defaults when omitted.
        #[arg(long)]
        stage1_config: Option<PathBuf>,
        /// Stage-2 config as JSON; built-in stage-2 defaults when omitted.
        #[arg(long)]
        stage2_config: Option<PathBuf>,
    },
    /// Score query-document pairs or triplet candidates with a reranker.
    #[command(group(ArgGroup::new("what").required(true).args(["pairs", "triplets"])))]
    Score {
        #[arg(long)]
        model: PathBuf,
        /// JSONL of {"query","doc"} rows; scores are written back per row.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// JSONL of training triplets; writes teacher_scores per row.
        #[arg(long)]
        triplets: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        embedder: Option<PathBuf>,
        #[arg(long, default_value_t = 512)]
        max_length: usize,
    },
    /// Filter scored triplets by teacher score.
    #[command(group(ArgGroup::new("rule").required(true).args(["threshold", "bottom_percentile"])))]
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Keep rows whose positive teacher score is at least this.
        #[arg(long)]
        threshold: Option<f64>,
        /// Drop this percentage of lowest-scoring rows.
        #[arg(long)]
        bottom_percentile: Option<f64>,
    },
    /// Distill teacher scores into an embedder.
    DistillTrain {
        #[arg(long)]
        data: PathBuf,
        /// Provenance label recorded in the output model file.
        #[arg(long)]
        teacher_tag: Option<String>,
        #[arg(long)]
        embedder: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training parameters as JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON map of source tag to loss family ("retrieval" or "nli");
        /// when omitted every source is treated as retrieval.
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Evaluate a run file against qrels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Comma-separated list such as ndcg@10,map@10,recall@30.
        #[arg(long, default_value = "ndcg@10,map@10,recall@30")]
        metrics: String,
        /// Also write the full per-query report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured stages end to end.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check a data file line by line against a schema.
    Validate {
        #[arg(long)]
        path: PathBuf,
        #[arg(long, value_enum)]
        schema: Schema,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is
            // a usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn read_config_or_default<T: serde::de::DeserializeOwned + Default>(
    path: &Option<PathBuf>,
) -> Result<T, CliError> {
    match path {
        Some(path) => io::read_json(path),
        None => Ok(T::default()),
    }
}

fn load_feature_inputs(
    index: &Option<PathBuf>,
    embedder: &Option<PathBuf>,
) -> Result<(Option<io::LoadedIndex>, Option<EmbedderParams>), CliError> {
    let loaded_index = index.as_deref().map(io::load_index).transpose()?;
    let loaded_embedder = embedder.as_deref().map(io::load_embedder).transpose()?;
    Ok((loaded_index, loaded_embedder))
}

fn read_triplets(path: &PathBuf) -> Result<Vec<TrainTriplet>, CliError> {
    let rows: Vec<TrainTriplet> = io::read_jsonl(path)?;
    for (i, row) in rows.iter().enumerate() {
        row.validate().map_err(|e| CliError::Line {
            path: path.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
    }
    Ok(rows)
}

fn run(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Normalize { input, output } => {
            let records: Vec<TextRecord> = io::read_jsonl(&input)?;
            let normalized: Vec<TextRecord> =
                records.iter().map(TextRecord::normalized).collect();
            io::write_jsonl(&output, &normalized)?;
            println!("normalized {} records to {}", normalized.len(), output.display());
        }
        Command::BuildIndex { input, output, k1, b } => {
            let docs: Vec<TextRecord> = io::read_jsonl(&input)?;
            let params = Bm25Params { k1, b };
            params.validate().map_err(|e| CliError::data(e.to_string()))?;
            io::save_index(&output, &docs, params)?;
            println!("indexed {} documents to {}", docs.len(), output.display());
        }
        Command::Mine { index, dense_model, queries, config, out } => {
            let loaded = io::load_index(&index)?;
            let embedder = io::load_embedder(&dense_model)?;
            let query_rows: Vec<QueryRecord> = io::read_jsonl(&queries)?;
            let cfg: MiningConfig = read_config_or_default(&config)?;
            let triplets =
                mine_triplets(&loaded.index, &loaded.docs, &embedder, &query_rows, &cfg)?;
            io::write_jsonl(&out, &triplets)?;
            println!("mined {} triplets to {}", triplets.len(), out.display());
        }
        Command::TrainEmbed { data, config, out, init } => {
            let triplets = read_triplets(&data)?;
            let section: TrainEmbedSection = read_config_or_default(&config)?;
            let params = match init {
                Some(path) => io::load_embedder(&path)?,
                None => {
                    let texts = embkit::pipeline::triplet_texts(&triplets);
                    EmbedderParams::init(
                        texts.iter().map(String::as_str),
                        section.dim,
                        section.tau,
                        section.training.seed,
                    )
                    .map_err(|e| CliError::data(e.to_string()))?
                }
            };
            let outcome = train_embedder(params, &triplets, &section.training)
                .map_err(|e| CliError::data(e.to_string()))?;
            io::save_embedder(&out, &outcome.params, None)?;
            let last = outcome.step_losses.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained embedder over {} steps (final loss {last:.6}) to {}",
                outcome.step_losses.len(),
                out.display()
            );
        }
        Command::TrainRerank {
            stage1,
            stage2,
            out,
            index,
            embedder,
            stage1_config,
            stage2_config,
        } => {
            let stage1_data = read_triplets(&stage1)?;
            let stage2_data = read_triplets(&stage2)?;
            let cfg1: StageConfig = match &stage1_config {
                Some(path) => io::read_json(path)?,
                None => StageConfig::stage1(),
            };
            let cfg2: StageConfig = match &stage2_config {
                Some(path) => io::read_json(path)?,
                None => StageConfig::stage2(),
            };
            let (loaded_index, loaded_embedder) = load_feature_inputs(&index, &embedder)?;
            let params = train_reranker_two_stage(
                RerankerParams::zeros(),
                &stage1_data,
                &stage2_data,
                &cfg1,
                &cfg2,
                loaded_index.as_ref().map(|l| &l.index),
                loaded_embedder.as_ref(),
            )
            .map_err(|e| CliError::data(e.to_string()))?;
            io::save_reranker(&out, &params)?;
            println!("trained reranker to {}", out.display());
        }
        Command::Score { model, pairs, triplets, out, index, embedder, max_length } => {
            let params = io::load_reranker(&model)?;
            let (loaded_index, loaded_embedder) = load_feature_inputs(&index, &embedder)?;
            let ctx = FeatureContext {
                index: loaded_index.as_ref().map(|l| &l.index),
                embedder: loaded_embedder.as_ref(),
                max_length,
            };
            if let Some(path) = pairs {
                let rows: Vec<PairRow> = io::read_jsonl(&path)?;
                let scored = score_pairs(&params, rows, &ctx)?;
                io::write_jsonl(&out, &scored)?;
                println!("scored {} pairs to {}", scored.len(), out.display());
            } else if let Some(path) = triplets {
                let rows = read_triplets(&path)?;
                let scored = score_triplets(&params, rows, &ctx)?;
                io::write_jsonl(&out, &scored)?;
                println!("scored {} triplets to {}", scored.len(), out.display());
            }
        }
        Command::Filter { input, output, threshold, bottom_percentile } => {
            let rows = read_triplets(&input)?;
            let before = rows.len();
            let section = match (threshold, bottom_percentile) {
                (Some(t), None) => FilterSection {
                    mode: FilterMode::Threshold,
                    config: FilterConfig { score_threshold: t, ..FilterConfig::default() },
                },
                (None, Some(p)) => FilterSection {
                    mode: FilterMode::BottomPercentile,
                    config: FilterConfig { bottom_percentile: p, ..FilterConfig::default() },
                },
                // The argument group guarantees exactly one is set.
                _ => unreachable!(),
            };
            let kept = apply_filter(rows, &section)?;
            io::write_jsonl(&output, &kept)?;
            println!("kept {}/{} rows to {}", kept.len(), before, output.display());
        }
        Command::DistillTrain { data, teacher_tag, embedder, out, config, registry } => {
            let rows = read_triplets(&data)?;
            let params = io::load_embedder(&embedder)?;
            let training: TrainingConfig = read_config_or_default(&config)?;
            let registry: DatasetRegistry = match &registry {
                Some(path) => io::read_json(path)?,
                None => DatasetRegistry::new(),
            };
            let registry = effective_registry(&registry, &rows);
            let outcome = train_distill(params, &rows, &training, &registry)
                .map_err(|e| CliError::data(e.to_string()))?;
            io::save_embedder(&out, &outcome.params, teacher_tag.as_deref())?;
            let last = outcome.step_losses.last().copied().unwrap_or(f64::NAN);
            println!(
                "distilled over {} steps (final loss {last:.6}) to {}",
                outcome.step_losses.len(),
                out.display()
            );
        }
        Command::Eval { run, qrels, metrics, out } => {
            let names: Vec<String> = metrics.split(',').map(|s| s.trim().to_string()).collect();
            let metrics = parse_metrics(&names)?;
            let _ = metric_depth(&metrics);
            let run = io::read_run(&run)?;
            let qrels = io::read_qrels(&qrels)?;
            let report = evaluate_run(&run, &qrels, &metrics)
                .map_err(|e| CliError::data(e.to_string()))?;
            for (name, value) in &report.averages {
                println!("{name}\t{value:.6}");
            }
            if let Some(path) = out {
                io::write_json(&path, &report)?;
            }
        }
        Command::Pipeline { config } => {
            let written = run_pipeline(&config)?;
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Command::Validate { path, schema } => {
            let report = validate_file(&path, schema)?;
            for (line, message) in &report.failures {
                println!("{}:{line}: {message}", path.display());
            }
            println!("{} rows, {} failures", report.rows, report.failures.len());
            if !report.ok() {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
