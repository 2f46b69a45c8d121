//! Config-driven orchestration: one JSON document describes which stages
//! to run; stages execute in dependency order, each reading and writing
//! files in the workdir. A fixed config and seed reproduce byte-identical
//! artifacts.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use embkit_core::corpus::{
    filter_bottom_percentile, filter_by_score_threshold, FilterConfig, TextRecord,
};
use embkit_core::distill::{train_distill, DatasetRegistry, LossFamily};
use embkit_core::embedder::{train_embedder, EmbedderParams, TrainingConfig};
use embkit_core::lexical::Bm25Params;
use embkit_core::metrics::{evaluate_run, Metric};
use embkit_core::mining::MiningConfig;
use embkit_core::reranker::{
    train_reranker_two_stage, FeatureContext, RerankerParams, StageConfig,
};
use embkit_core::TrainTriplet;

use crate::error::CliError;
use crate::io;
use crate::stages::{
    check_registry, derived_seed, mine_triplets, retrieval_run, score_triplets, QueryRecord,
};

fn default_dim() -> usize {
    16
}

fn default_tau() -> f64 {
    0.05
}

fn default_max_length() -> usize {
    512
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineInputs {
    pub docs: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    /// A pre-computed run file; when set, the eval stage scores it instead
    /// of retrieving with the trained model.
    pub run: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NormalizeSection {}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MineSection {
    pub mining: MiningConfig,
    /// Shape of the untrained embedder that provides the dense ranking.
    pub dim: usize,
    pub tau: f64,
}

impl Default for MineSection {
    fn default() -> Self {
        Self { mining: MiningConfig::default(), dim: default_dim(), tau: default_tau() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainEmbedSection {
    pub dim: usize,
    pub tau: f64,
    pub training: TrainingConfig,
}

impl Default for TrainEmbedSection {
    fn default() -> Self {
        Self { dim: default_dim(), tau: default_tau(), training: TrainingConfig::default() }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRerankSection {
    /// Full stage configs; omitted stages use the built-in defaults.
    pub stage1: Option<StageConfig>,
    pub stage2: Option<StageConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreSection {
    pub max_length: usize,
}

impl Default for ScoreSection {
    fn default() -> Self {
        Self { max_length: default_max_length() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    #[default]
    Threshold,
    BottomPercentile,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSection {
    pub mode: FilterMode,
    pub config: FilterConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillSection {
    pub training: TrainingConfig,
    pub teacher_tag: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub metrics: Vec<String>,
    /// Ranking depth of the produced run; defaults to the largest metric
    /// cutoff.
    pub depth: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metrics: vec!["ndcg@10".into(), "map@10".into(), "recall@30".into()],
            depth: None,
        }
    }
}

/// The whole run in one document: global seed, dataset registry, input
/// files, and one optional section per stage. A present section runs; an
/// absent one is skipped (later stages then read whatever artifacts
/// already exist on disk).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub registry: DatasetRegistry,
    pub workdir: PathBuf,
    #[serde(default)]
    pub inputs: PipelineInputs,
    #[serde(default)]
    pub normalize: Option<NormalizeSection>,
    #[serde(default)]
    pub index: Option<Bm25Params>,
    #[serde(default)]
    pub mine: Option<MineSection>,
    #[serde(default)]
    pub train_embed: Option<TrainEmbedSection>,
    #[serde(default)]
    pub train_rerank: Option<TrainRerankSection>,
    #[serde(default)]
    pub score: Option<ScoreSection>,
    #[serde(default)]
    pub filter: Option<FilterSection>,
    #[serde(default)]
    pub distill: Option<DistillSection>,
    #[serde(default)]
    pub eval: Option<EvalSection>,
}

/// Fixed artifact names inside the workdir.
pub mod artifact {
    pub const DOCS: &str = "docs.norm.jsonl";
    pub const QUERIES: &str = "queries.norm.jsonl";
    pub const INDEX: &str = "index.json";
    pub const MINER_EMBEDDER: &str = "miner.embedder.json";
    pub const TRIPLETS: &str = "triplets.jsonl";
    pub const EMBEDDER: &str = "embedder.json";
    pub const RERANKER: &str = "reranker.json";
    pub const SCORED: &str = "scored.jsonl";
    pub const FILTERED: &str = "filtered.jsonl";
    pub const DISTILLED: &str = "distilled.json";
    pub const RUN: &str = "run.jsonl";
    pub const REPORT: &str = "report.json";
}

struct Ctx {
    cfg: PipelineConfig,
    written: Vec<PathBuf>,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.workdir.join(name)
    }

    /// The normalized artifact when present, otherwise the raw input.
    fn resolve_input(
        &self,
        artifact_name: &str,
        raw: &Option<PathBuf>,
        stage: &str,
        what: &str,
    ) -> Result<PathBuf, CliError> {
        let normalized = self.path(artifact_name);
        if normalized.is_file() {
            return Ok(normalized);
        }
        match raw {
            Some(path) if path.is_file() => Ok(path.clone()),
            Some(path) => Err(CliError::stage(
                stage,
                format!("{what} file {} does not exist", path.display()),
            )),
            None => Err(CliError::stage(
                stage,
                format!("missing {what}: configure inputs.{what} or run the normalize stage"),
            )),
        }
    }

    fn require_artifact(&self, name: &str, stage: &str, hint: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::stage(stage, format!("missing {}: {hint}", path.display())))
        }
    }

    fn load_docs(&self, stage: &str) -> Result<Vec<TextRecord>, CliError> {
        let path = self.resolve_input(artifact::DOCS, &self.cfg.inputs.docs, stage, "docs")?;
        io::read_jsonl(&path)
    }

    fn load_queries(&self, stage: &str) -> Result<Vec<QueryRecord>, CliError> {
        let path =
            self.resolve_input(artifact::QUERIES, &self.cfg.inputs.queries, stage, "queries")?;
        let queries: Vec<QueryRecord> = io::read_jsonl(&path)?;
        check_registry(
            &self.cfg.registry,
            queries.iter().map(|q| q.source.as_str()),
            stage,
        )?;
        Ok(queries)
    }

    fn load_triplets(&self, path: &Path, stage: &str) -> Result<Vec<TrainTriplet>, CliError> {
        let rows: Vec<TrainTriplet> = io::read_jsonl(path)?;
        for row in &rows {
            row.validate().map_err(|e| CliError::stage(stage, e))?;
        }
        check_registry(&self.cfg.registry, rows.iter().map(|r| r.source.as_str()), stage)?;
        Ok(rows)
    }

    fn record(&mut self, path: PathBuf) {
        self.written.push(path);
    }
}

fn stage_normalize(ctx: &mut Ctx) -> Result<(), CliError> {
    const STAGE: &str = "normalize";
    let docs_in = match &ctx.cfg.inputs.docs {
        Some(path) => path.clone(),
        None => return Err(CliError::stage(STAGE, "inputs.docs is required")),
    };
    let docs: Vec<TextRecord> = io::read_jsonl(&docs_in)?;
    let normalized: Vec<TextRecord> = docs.iter().map(TextRecord::normalized).collect();
    let out = ctx.path(artifact::DOCS);
    io::write_jsonl(&out, &normalized)?;
    ctx.record(out);
    if let Some(queries_in) = &ctx.cfg.inputs.queries {
        let queries: Vec<QueryRecord> = io::read_jsonl(queries_in)?;
        check_registry(&ctx.cfg.registry, queries.iter().map(|q| q.source.as_str()), STAGE)?;
        let normalized: Vec<QueryRecord> = queries
            .into_iter()
            .map(|q| QueryRecord {
                text: embkit_core::corpus::normalize_text(&q.text),
                positive: q.positive.as_deref().map(embkit_core::corpus::normalize_text),
                answer: q.answer.as_deref().map(embkit_core::corpus::normalize_text),
                ..q
            })
            .collect();
        let out = ctx.path(artifact::QUERIES);
        io::write_jsonl(&out, &normalized)?;
        ctx.record(out);
    }
    Ok(())
}

fn stage_index(ctx: &mut Ctx, params: Bm25Params) -> Result<(), CliError> {
    const STAGE: &str = "index";
    let docs = ctx.load_docs(STAGE)?;
    let out = ctx.path(artifact::INDEX);
    io::save_index(&out, &docs, params).map_err(|e| CliError::stage(STAGE, e))?;
    ctx.record(out);
    Ok(())
}

fn stage_mine(ctx: &mut Ctx, section: &MineSection) -> Result<(), CliError> {
    const STAGE: &str = "mine";
    let index_path = ctx.require_artifact(artifact::INDEX, STAGE, "run the index stage first")?;
    let loaded = io::load_index(&index_path)?;
    let queries = ctx.load_queries(STAGE)?;
    // The dense side of mining uses a fresh seeded embedder: at this point
    // in the pipeline nothing has been trained yet.
    let texts: Vec<&str> = loaded
        .docs
        .iter()
        .map(|d| d.text.as_str())
        .chain(queries.iter().map(|q| q.text.as_str()))
        .collect();
    let embedder = EmbedderParams::init(
        texts.iter().copied(),
        section.dim,
        section.tau,
        derived_seed(ctx.cfg.seed, "mine"),
    )
    .map_err(|e| CliError::stage(STAGE, e))?;
    let miner_path = ctx.path(artifact::MINER_EMBEDDER);
    io::save_embedder(&miner_path, &embedder, None)?;
    ctx.record(miner_path);
    let triplets = mine_triplets(&loaded.index, &loaded.docs, &embedder, &queries, &section.mining)
        .map_err(|e| CliError::stage(STAGE, e))?;
    let out = ctx.path(artifact::TRIPLETS);
    io::write_jsonl(&out, &triplets)?;
    ctx.record(out);
    Ok(())
}

fn stage_train_embed(ctx: &mut Ctx, section: &TrainEmbedSection) -> Result<(), CliError> {
    const STAGE: &str = "train-embed";
    let data_path =
        ctx.require_artifact(artifact::TRIPLETS, STAGE, "run the mine stage first")?;
    let triplets = ctx.load_triplets(&data_path, STAGE)?;
    let mut training = section.training;
    training.seed = derived_seed(ctx.cfg.seed, STAGE);
    let texts = triplet_texts(&triplets);
    let params = EmbedderParams::init(
        texts.iter().map(String::as_str),
        section.dim,
        section.tau,
        training.seed,
    )
    .map_err(|e| CliError::stage(STAGE, e))?;
    let outcome =
        train_embedder(params, &triplets, &training).map_err(|e| CliError::stage(STAGE, e))?;
    let out = ctx.path(artifact::EMBEDDER);
    io::save_embedder(&out, &outcome.params, None)?;
    ctx.record(out);
    Ok(())
}

pub fn triplet_texts(triplets: &[TrainTriplet]) -> Vec<String> {
    let mut texts = BTreeSet::new();
    for t in triplets {
        texts.insert(t.anchor.clone());
        texts.insert(t.positive.clone());
        texts.extend(t.negatives.iter().cloned());
    }
    texts.into_iter().collect()
}

fn stage_train_rerank(ctx: &mut Ctx, section: &TrainRerankSection) -> Result<(), CliError> {
    const STAGE: &str = "train-rerank";
    let data_path =
        ctx.require_artifact(artifact::TRIPLETS, STAGE, "run the mine stage first")?;
    let triplets = ctx.load_triplets(&data_path, STAGE)?;
    let mut cfg1 = section.stage1.unwrap_or_else(StageConfig::stage1);
    let mut cfg2 = section.stage2.unwrap_or_else(StageConfig::stage2);
    cfg1.seed = derived_seed(ctx.cfg.seed, "train-rerank-stage1");
    cfg2.seed = derived_seed(ctx.cfg.seed, "train-rerank-stage2");
    let index_path = ctx.require_artifact(artifact::INDEX, STAGE, "run the index stage first")?;
    let loaded = io::load_index(&index_path)?;
    let embedder_path =
        ctx.require_artifact(artifact::EMBEDDER, STAGE, "run the train-embed stage first")?;
    let embedder = io::load_embedder(&embedder_path)?;
    let params = train_reranker_two_stage(
        RerankerParams::zeros(),
        &triplets,
        &triplets,
        &cfg1,
        &cfg2,
        Some(&loaded.index),
        Some(&embedder),
    )
    .map_err(|e| CliError::stage(STAGE, e))?;
    let out = ctx.path(artifact::RERANKER);
    io::save_reranker(&out, &params)?;
    ctx.record(out);
    Ok(())
}

fn stage_score(ctx: &mut Ctx, section: &ScoreSection) -> Result<(), CliError> {
    const STAGE: &str = "score";
    let model_path =
        ctx.require_artifact(artifact::RERANKER, STAGE, "run the train-rerank stage first")?;
    let model = io::load_reranker(&model_path)?;
    let data_path =
        ctx.require_artifact(artifact::TRIPLETS, STAGE, "run the mine stage first")?;
    let triplets = ctx.load_triplets(&data_path, STAGE)?;
    let index_path = ctx.require_artifact(artifact::INDEX, STAGE, "run the index stage first")?;
    let loaded = io::load_index(&index_path)?;
    let embedder_path =
        ctx.require_artifact(artifact::EMBEDDER, STAGE, "run the train-embed stage first")?;
    let embedder = io::load_embedder(&embedder_path)?;
    let featctx = FeatureContext {
        index: Some(&loaded.index),
        embedder: Some(&embedder),
        max_length: section.max_length,
    };
    let scored =
        score_triplets(&model, triplets, &featctx).map_err(|e| CliError::stage(STAGE, e))?;
    let out = ctx.path(artifact::SCORED);
    io::write_jsonl(&out, &scored)?;
    ctx.record(out);
    Ok(())
}

pub fn apply_filter(
    rows: Vec<TrainTriplet>,
    section: &FilterSection,
) -> Result<Vec<TrainTriplet>, CliError> {
    match section.mode {
        FilterMode::Threshold => filter_by_score_threshold(rows, &section.config)
            .map_err(|e| CliError::data(e.to_string())),
        FilterMode::BottomPercentile => {
            // Rank rows by the positive's teacher score; drop the bottom
            // slice; keep survivors in file order.
            let mut items = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                let score = row
                    .teacher_scores
                    .as_ref()
                    .and_then(|s| s.first().copied())
                    .ok_or_else(|| {
                        CliError::data(format!("row {} has no teacher_scores", i + 1))
                    })?;
                items.push((i.to_string(), score));
            }
            let kept = filter_bottom_percentile(items, section.config.bottom_percentile)
                .map_err(|e| CliError::data(e.to_string()))?;
            let keep: BTreeSet<usize> =
                kept.into_iter().map(|(i, _)| i.parse().unwrap()).collect();
            Ok(rows
                .into_iter()
                .enumerate()
                .filter(|(i, _)| keep.contains(i))
                .map(|(_, row)| row)
                .collect())
        }
    }
}

fn stage_filter(ctx: &mut Ctx, section: &FilterSection) -> Result<(), CliError> {
    const STAGE: &str = "filter";
    let data_path = ctx.require_artifact(artifact::SCORED, STAGE, "run the score stage first")?;
    let rows = ctx.load_triplets(&data_path, STAGE)?;
    let kept = apply_filter(rows, section).map_err(|e| CliError::stage(STAGE, e))?;
    let out = ctx.path(artifact::FILTERED);
    io::write_jsonl(&out, &kept)?;
    ctx.record(out);
    Ok(())
}

fn stage_distill(ctx: &mut Ctx, section: &DistillSection) -> Result<(), CliError> {
    const STAGE: &str = "distill-train";
    let filtered = ctx.path(artifact::FILTERED);
    let data_path = if filtered.is_file() {
        filtered
    } else {
        ctx.require_artifact(artifact::SCORED, STAGE, "run the score stage first")?
    };
    let rows = ctx.load_triplets(&data_path, STAGE)?;
    let embedder_path =
        ctx.require_artifact(artifact::EMBEDDER, STAGE, "run the train-embed stage first")?;
    let embedder = io::load_embedder(&embedder_path)?;
    let mut training = section.training;
    training.seed = derived_seed(ctx.cfg.seed, STAGE);
    let registry = effective_registry(&ctx.cfg.registry, &rows);
    let outcome = train_distill(embedder, &rows, &training, &registry)
        .map_err(|e| CliError::stage(STAGE, e))?;
    let out = ctx.path(artifact::DISTILLED);
    io::save_embedder(&out, &outcome.params, section.teacher_tag.as_deref())?;
    ctx.record(out);
    Ok(())
}

/// An empty registry means "everything is retrieval data": the common
/// single-corpus case should not require boilerplate. A nonempty registry
/// must already cover every tag (checked at load time).
pub fn effective_registry(
    registry: &DatasetRegistry,
    rows: &[TrainTriplet],
) -> DatasetRegistry {
    if !registry.is_empty() {
        return registry.clone();
    }
    rows.iter().map(|r| (r.source.clone(), LossFamily::Retrieval)).collect()
}

pub fn parse_metrics(names: &[String]) -> Result<Vec<Metric>, CliError> {
    let mut metrics = Vec::with_capacity(names.len());
    for name in names {
        metrics.push(name.parse::<Metric>().map_err(|e| CliError::data(e.to_string()))?);
    }
    if metrics.is_empty() {
        return Err(CliError::data("no metrics requested"));
    }
    Ok(metrics)
}

pub fn metric_depth(metrics: &[Metric]) -> usize {
    metrics
        .iter()
        .map(|m| match *m {
            Metric::NdcgAt(k) | Metric::MapAt(k) | Metric::RecallAt(k) => k,
        })
        .max()
        .unwrap_or(10)
}

fn stage_eval(ctx: &mut Ctx, section: &EvalSection) -> Result<(), CliError> {
    const STAGE: &str = "eval";
    let metrics = parse_metrics(&section.metrics).map_err(|e| CliError::stage(STAGE, e))?;
    let qrels_path = match &ctx.cfg.inputs.qrels {
        Some(path) => path.clone(),
        None => return Err(CliError::stage(STAGE, "inputs.qrels is required")),
    };
    let qrels = io::read_qrels(&qrels_path)?;
    let run = match &ctx.cfg.inputs.run {
        Some(path) => io::read_run(path)?,
        None => {
            // Retrieve with the best model this run produced: distilled if
            // present, otherwise the trained embedder.
            let distilled = ctx.path(artifact::DISTILLED);
            let model_path = if distilled.is_file() {
                distilled
            } else {
                ctx.require_artifact(
                    artifact::EMBEDDER,
                    STAGE,
                    "run train-embed, or set inputs.run to evaluate an existing run file",
                )?
            };
            let embedder = io::load_embedder(&model_path)?;
            let docs = ctx.load_docs(STAGE)?;
            let queries = ctx.load_queries(STAGE)?;
            let depth = section.depth.unwrap_or_else(|| metric_depth(&metrics));
            let run = retrieval_run(&embedder, &queries, &docs, depth)
                .map_err(|e| CliError::stage(STAGE, e))?;
            let run_path = ctx.path(artifact::RUN);
            io::write_run(&run_path, &run)?;
            ctx.record(run_path);
            run
        }
    };
    let report = evaluate_run(&run, &qrels, &metrics).map_err(|e| CliError::stage(STAGE, e))?;
    let out = ctx.path(artifact::REPORT);
    io::write_json(&out, &report)?;
    ctx.record(out);
    for (name, value) in &report.averages {
        println!("{name}\t{value:.6}");
    }
    Ok(())
}

/// Runs every configured stage in dependency order and returns the
/// artifact paths written.
pub fn run_pipeline(config_path: &Path) -> Result<Vec<PathBuf>, CliError> {
    let cfg: PipelineConfig = io::read_json(config_path)?;
    std::fs::create_dir_all(&cfg.workdir).map_err(|source| CliError::Io {
        path: cfg.workdir.clone(),
        source,
    })?;
    let mut ctx = Ctx { cfg, written: Vec::new() };
    if ctx.cfg.normalize.is_some() {
        stage_normalize(&mut ctx)?;
    }
    if let Some(params) = ctx.cfg.index {
        stage_index(&mut ctx, params)?;
    }
    if let Some(section) = ctx.cfg.mine.clone() {
        stage_mine(&mut ctx, &section)?;
    }
    if let Some(section) = ctx.cfg.train_embed.clone() {
        stage_train_embed(&mut ctx, &section)?;
    }
    if let Some(section) = ctx.cfg.train_rerank.clone() {
        stage_train_rerank(&mut ctx, &section)?;
    }
    if let Some(section) = ctx.cfg.score.clone() {
        stage_score(&mut ctx, &section)?;
    }
    if let Some(section) = ctx.cfg.filter.clone() {
        stage_filter(&mut ctx, &section)?;
    }
    if let Some(section) = ctx.cfg.distill.clone() {
        stage_distill(&mut ctx, &section)?;
    }
    if let Some(section) = ctx.cfg.eval.clone() {
        stage_eval(&mut ctx, &section)?;
    }
    Ok(ctx.written)
}
