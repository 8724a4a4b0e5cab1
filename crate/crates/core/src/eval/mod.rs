//! Motion-label evaluation: label annotated clips across frame-sampling
//! ratios and context conditions, score against ground truth and report.

mod stats;
mod table;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use stats::{aggregate, cosine, mean, median, population_std, EmptyConditionError, StatsRow};
pub use table::{emit_table, render_table, TableFormat, TABLE_HEADER};

use crate::gateway::mock::{estimate_tokens, TOKENS_PER_IMAGE};
use crate::gateway::{Gateway, GatewayError, TokenUsage};
use crate::media::{compute_frames_to_skip, sample_indices, MediaError, MediaIngest, VideoTrack};
use crate::prompt::{Bindings, TemplateId};

/// Labels equal to this (after trimming) mean the model did not recognize
/// the motion.
pub const REFUSAL_SENTINEL: &str = "UNRECOGNIZED";

pub const DEFAULT_RATIOS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub video: PathBuf,
    pub ground_truth_label: String,
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("manifest line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("manifest line {line}, field `{field}`: {message}")]
    Field { line: usize, field: &'static str, message: String },
    #[error("manifest line {line}: video file {path} does not exist")]
    MissingVideo { line: usize, path: PathBuf },
    #[error("manifest line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
}

#[derive(Deserialize)]
struct ManifestLine {
    id: Option<String>,
    video: Option<String>,
    label: Option<String>,
    title: Option<String>,
}

fn required(value: Option<String>, line: usize, field: &'static str) -> Result<String, ManifestError> {
    match value.map(|v| v.trim().to_string()) {
        Some(v) if !v.is_empty() => Ok(v),
        Some(_) => Err(ManifestError::Field {
            line,
            field,
            message: "must not be empty".into(),
        }),
        None => Err(ManifestError::Field {
            line,
            field,
            message: "is missing".into(),
        }),
    }
}

/// Reads a JSONL manifest of `{id, video, label, title}` objects. Video
/// paths are relative to the manifest's directory. Blank lines are skipped.
pub fn load_dataset(manifest: &Path) -> Result<Vec<DatasetEntry>, ManifestError> {
    let text = std::fs::read_to_string(manifest).map_err(|e| ManifestError::Io {
        path: manifest.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(raw).map_err(|e| ManifestError::Syntax {
            line,
            message: e.to_string(),
        })?;
        let id = required(parsed.id, line, "id")?;
        let video = base.join(required(parsed.video, line, "video")?);
        let label = required(parsed.label, line, "label")?;
        if !video.is_file() {
            return Err(ManifestError::MissingVideo { line, path: video });
        }
        if !seen.insert(id.clone()) {
            return Err(ManifestError::DuplicateId { line, id });
        }
        entries.push(DatasetEntry {
            id,
            video,
            ground_truth_label: label,
            title: parsed.title.map(|t| t.trim().to_string()).filter(|t| !t.is_empty()),
        });
    }
    Ok(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub fps_skip_ratio: f64,
    pub with_context: bool,
}

impl Condition {
    pub fn ratio_label(&self) -> String {
        format!("{}", self.fps_skip_ratio)
    }

    /// Row label in the context comparison table.
    pub fn context_label(&self) -> String {
        let prefix = if self.with_context { "Context" } else { "NoContext" };
        format!("{prefix} - {}", self.fps_skip_ratio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub entry_id: String,
    pub condition: Condition,
    pub generated_label: String,
    pub similarity: Option<f64>,
    pub token_usage: TokenUsage,
    pub excluded: bool,
    pub exclusion_reason: Option<String>,
}

impl EvalRecord {
    fn excluded(entry: &DatasetEntry, condition: Condition, label: String, usage: TokenUsage, reason: String) -> Self {
        Self {
            entry_id: entry.id.clone(),
            condition,
            generated_label: label,
            similarity: None,
            token_usage: usage,
            excluded: true,
            exclusion_reason: Some(reason),
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.excluded == self.similarity.is_none()
            && self.excluded == self.exclusion_reason.is_some()
            && self.similarity.is_none_or(|s| (-1.0 - 1e-9..=1.0 + 1e-9).contains(&s))
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("entry `{id}`: {source}")]
    Dataset { id: String, source: MediaError },
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Cosine similarity of the two texts' embeddings.
pub fn similarity(gateway: &Gateway, generated: &str, truth: &str) -> Result<f64, GatewayError> {
    let a = gateway.embed(generated)?;
    let b = gateway.embed(truth)?;
    Ok(cosine(&a, &b))
}

fn entry_seed(sample_seed: u64, entry: &DatasetEntry) -> u64 {
    let mut h = Sha256::new();
    h.update(sample_seed.to_le_bytes());
    h.update(entry.id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("32-byte digest"))
}

pub struct EvalRunner {
    gateway: Gateway,
    ingest: Arc<MediaIngest>,
    workers: usize,
}

impl EvalRunner {
    pub fn new(gateway: Gateway, ingest: Arc<MediaIngest>) -> Self {
        Self {
            gateway,
            ingest,
            workers: 4,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    fn load_video(&self, entry: &DatasetEntry) -> Result<VideoTrack, EvalError> {
        let bytes = std::fs::read(&entry.video).map_err(|e| EvalError::Io {
            path: entry.video.clone(),
            message: e.to_string(),
        })?;
        VideoTrack::probe(bytes, self.ingest.decoder()).map_err(|source| EvalError::Dataset {
            id: entry.id.clone(),
            source,
        })
    }

    fn label_entry(&self, entry: &DatasetEntry, condition: Condition, sample_seed: u64) -> Result<EvalRecord, EvalError> {
        let video = self.load_video(entry)?;
        let frames = self
            .ingest
            .sample_video(&video, condition.fps_skip_ratio)
            .map_err(|source| EvalError::Dataset {
                id: entry.id.clone(),
                source,
            })?;
        let context = if condition.with_context { entry.title.as_deref() } else { None };
        let seed = Some(entry_seed(sample_seed, entry));
        let (label, usage) = match self.ingest.describe_motion(&self.gateway, &frames, context, seed) {
            Ok(result) => result,
            Err(MediaError::Gateway(e)) => {
                return Ok(EvalRecord::excluded(
                    entry,
                    condition,
                    String::new(),
                    TokenUsage::default(),
                    format!("provider error: {e}"),
                ))
            }
            Err(source) => {
                return Err(EvalError::Dataset {
                    id: entry.id.clone(),
                    source,
                })
            }
        };
        let label = label.trim().to_string();
        if label.is_empty() {
            return Ok(EvalRecord::excluded(entry, condition, label, usage, "empty label".into()));
        }
        if label.trim_end_matches('.') == REFUSAL_SENTINEL {
            return Ok(EvalRecord::excluded(entry, condition, label, usage, "motion not recognized".into()));
        }
        match similarity(&self.gateway, &label, &entry.ground_truth_label) {
            Ok(score) => Ok(EvalRecord {
                entry_id: entry.id.clone(),
                condition,
                generated_label: label,
                similarity: Some(score),
                token_usage: usage,
                excluded: false,
                exclusion_reason: None,
            }),
            Err(e) => Ok(EvalRecord::excluded(entry, condition, label, usage, format!("embedding error: {e}"))),
        }
    }

    /// One record per entry, in dataset order. Only dataset problems abort
    /// the run; provider failures become excluded records.
    pub fn run_condition(
        &self,
        entries: &[DatasetEntry],
        condition: Condition,
        sample_seed: u64,
    ) -> Result<Vec<EvalRecord>, EvalError> {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| EvalError::Pool(e.to_string()))?;
        pool.install(|| {
            entries
                .par_iter()
                .map(|entry| self.label_entry(entry, condition, sample_seed))
                .collect()
        })
    }

    /// Upper-bound token estimate for a sweep, used before paid runs.
    pub fn estimate_tokens(&self, entries: &[DatasetEntry], conditions: &[Condition]) -> Result<u64, EvalError> {
        let base_prompt = self
            .ingest_prompt(None)
            .map_err(|source| EvalError::Dataset { id: String::new(), source })?;
        let mut total = 0u64;
        for entry in entries {
            let video = self.load_video(entry)?;
            for condition in conditions {
                let stride = compute_frames_to_skip(video.fps, condition.fps_skip_ratio).map_err(|source| {
                    EvalError::Dataset {
                        id: entry.id.clone(),
                        source,
                    }
                })?;
                let frames = sample_indices(video.frame_count, stride, self.ingest.max_frames).len() as u64;
                let context = entry.title.as_deref().filter(|_| condition.with_context);
                let context_tokens = context.map(|c| estimate_tokens(c) + 3).unwrap_or(0);
                // labeling prompt + frames + reply, then two short embeddings
                total += estimate_tokens(&base_prompt) + context_tokens + frames * TOKENS_PER_IMAGE + 200;
                total += estimate_tokens(&entry.ground_truth_label) + 50;
            }
        }
        Ok(total)
    }

    fn ingest_prompt(&self, context: Option<&str>) -> Result<String, MediaError> {
        Ok(self.ingest.registry().render(
            TemplateId::MotionLabel,
            &Bindings::new().with("context", crate::media::context_line(context)),
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    Both,
    With,
    Without,
}

impl ContextMode {
    pub fn flags(self) -> &'static [bool] {
        match self {
            ContextMode::Both => &[false, true],
            ContextMode::With => &[true],
            ContextMode::Without => &[false],
        }
    }
}

impl std::str::FromStr for ContextMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "both" => Ok(ContextMode::Both),
            "with" => Ok(ContextMode::With),
            "without" => Ok(ContextMode::Without),
            other => Err(format!("unknown context mode `{other}` (expected both, with or without)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub ratios: Vec<f64>,
    pub context: ContextMode,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ratios: DEFAULT_RATIOS.to_vec(),
            context: ContextMode::Both,
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn conditions(&self) -> Vec<Condition> {
        self.ratios
            .iter()
            .flat_map(|&fps_skip_ratio| {
                self.context.flags().iter().map(move |&with_context| Condition {
                    fps_skip_ratio,
                    with_context,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub records: Vec<EvalRecord>,
    /// No-context rows, one per ratio.
    pub table1: Vec<StatsRow>,
    /// Context and no-context rows, interleaved per ratio.
    pub table2: Vec<StatsRow>,
    /// Conditions whose records were all excluded.
    pub empty: Vec<Condition>,
}

pub fn run_sweep(runner: &EvalRunner, entries: &[DatasetEntry], config: &SweepConfig) -> Result<SweepReport, EvalError> {
    let mut report = SweepReport {
        records: Vec::new(),
        table1: Vec::new(),
        table2: Vec::new(),
        empty: Vec::new(),
    };
    for &ratio in &config.ratios {
        let mut context_rows = Vec::new();
        for &with_context in config.context.flags() {
            let condition = Condition {
                fps_skip_ratio: ratio,
                with_context,
            };
            let records = runner.run_condition(entries, condition, config.seed)?;
            match aggregate(&records) {
                Ok(stats) => {
                    if !with_context {
                        report.table1.push(StatsRow {
                            label: condition.ratio_label(),
                            ..stats.clone()
                        });
                    }
                    context_rows.push(StatsRow {
                        label: condition.context_label(),
                        ..stats
                    });
                }
                Err(EmptyConditionError) => report.empty.push(condition),
            }
            report.records.extend(records);
        }
        // context first, as in the comparison table
        context_rows.reverse();
        report.table2.extend(context_rows);
    }
    Ok(report)
}

/// Writes `table1.{csv,md}`, `table2.{csv,md}` and `records.jsonl`.
pub fn write_report(report: &SweepReport, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, rows) in [("table1", &report.table1), ("table2", &report.table2)] {
        for format in [TableFormat::Csv, TableFormat::Markdown] {
            written.push(emit_table(rows, format, &dir.join(format!("{name}.{}", format.extension())))?);
        }
    }
    let mut jsonl = String::new();
    for record in &report.records {
        jsonl.push_str(&serde_json::to_string(record).map_err(std::io::Error::other)?);
        jsonl.push('\n');
    }
    let path = dir.join("records.jsonl");
    std::fs::write(&path, jsonl)?;
    written.push(path);
    Ok(written)
}
