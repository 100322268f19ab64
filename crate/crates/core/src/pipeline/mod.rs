//! Dataset-level orchestration: alignment, rewriting, evaluation, the
//! strategy ablation and run artifacts.

pub mod dataset;
pub mod manifest;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::alignment::{
    align_segments, AlignmentResult, CosineScorer, RewardModelScorer, SegmentScorer, DEFAULT_MAX_SPAN,
};
use crate::backends::{BackendError, Backends};
use crate::config::SearchConfig;
use crate::eval::attack::{attack_success_rate, AttackError, AttackMode, AttackReport, ChannelModel};
use crate::eval::cost::CostInputs;
use crate::eval::metrics::DEFAULT_ENTAILMENT_CUTOFF;
use crate::eval::report::{evaluate_document, render_table, DocumentInput, MetricReport};
use crate::rewriter::{PromptTemplate, RewriteContext};
use crate::search::{rewrite_document, SearchTrace, StrategyKind};
use crate::seed::{rng_for, sha256_hex};
use crate::text::split_sentences;
use crate::types::Utterance;
pub use dataset::{ingest_dataset, parse_dataset, Dataset, DatasetRecord, Reject};
pub use manifest::{audit, emit_report, AuditIssue, EmittedReport, RunManifest, MANIFEST_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_BACKEND: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

pub const REWRITES_FILE: &str = "rewrites.jsonl";
pub const ALIGNMENTS_FILE: &str = "alignments.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_TABLE_FILE: &str = "metrics.txt";
pub const ATTACK_FILE: &str = "attack.json";
pub const ATTACK_TABLE_FILE: &str = "attack.txt";
pub const ABLATION_FILE: &str = "ablation.json";
pub const ABLATION_TABLE_FILE: &str = "ablation.txt";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error("{rejected} of {total} dataset lines rejected, above the 10% limit: {first}")]
    TooManyRejects {
        rejected: usize,
        total: usize,
        first: String,
    },
    #[error("backend check failed: {0}")]
    Backend(#[from] BackendError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("no documents")]
    NoDocuments,
    #[error("missing file {0}")]
    MissingFile(String),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Backend(_) => EXIT_BACKEND,
            _ => EXIT_VALIDATION,
        }
    }
}

/// Which span scorer proposes privacy segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignerKind {
    RewardModel,
    Cosine,
}

impl AlignerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AlignerKind::RewardModel => "reward-model",
            AlignerKind::Cosine => "cosine",
        }
    }
}

impl fmt::Display for AlignerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlignerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reward-model" => Ok(Self::RewardModel),
            "cosine" => Ok(Self::Cosine),
            other => Err(format!("unknown aligner {other:?} (expected reward-model|cosine)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub cfg: SearchConfig,
    pub strategy: StrategyKind,
    pub template: PromptTemplate,
    pub aligner: AlignerKind,
    /// Overrides the aligner's default threshold.
    pub align_threshold: Option<f64>,
    pub max_span: usize,
    /// Rewrite only the first N sentences of each document.
    pub max_sentences: Option<usize>,
    /// Worker threads; 0 picks the number of CPUs.
    pub workers: usize,
    pub nli_cutoff: f64,
    pub channel: Option<ChannelModel>,
    pub attack_mode: AttackMode,
    pub cost: Option<CostInputs>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            cfg: SearchConfig::default(),
            strategy: StrategyKind::Tree,
            template: PromptTemplate::default(),
            aligner: AlignerKind::RewardModel,
            align_threshold: None,
            max_span: DEFAULT_MAX_SPAN,
            max_sentences: None,
            workers: 0,
            nli_cutoff: DEFAULT_ENTAILMENT_CUTOFF,
            channel: None,
            attack_mode: AttackMode::ContextFree,
            cost: None,
        }
    }
}

impl PipelineOptions {
    pub fn segment_scorer(&self, backends: &Backends) -> Box<dyn SegmentScorer> {
        match self.aligner {
            AlignerKind::RewardModel => Box::new(RewardModelScorer::new(Arc::clone(&backends.reward))),
            AlignerKind::Cosine => Box::new(CosineScorer::new(Arc::clone(&backends.embedder))),
        }
    }

    /// Every setting that can change an output byte.
    pub fn settings(&self, backends: &Backends) -> BTreeMap<String, String> {
        let scorer = self.segment_scorer(backends);
        let mut m = self.cfg.to_raw();
        m.insert("aligner".into(), self.aligner.to_string());
        m.insert(
            "align_threshold".into(),
            self.align_threshold.unwrap_or(scorer.default_threshold()).to_string(),
        );
        m.insert("max_span".into(), self.max_span.to_string());
        m.insert(
            "max_sentences".into(),
            self.max_sentences.map(|n| n.to_string()).unwrap_or_else(|| "all".into()),
        );
        m.insert("nli_cutoff".into(), self.nli_cutoff.to_string());
        m.insert("scorer".into(), backends.scorer.identity());
        m.insert("template_sha256".into(), sha256_hex(self.template.text().as_bytes()));
        m
    }

    fn pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| PipelineError::Validation(format!("worker pool: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentenceAlignment {
    pub index: usize,
    pub sentence: String,
    /// `None` for sentences beyond `max_sentences`, which pass through.
    pub alignment: Option<AlignmentResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordAlignment {
    pub doc_id: String,
    pub sentences: Vec<SentenceAlignment>,
}

impl RecordAlignment {
    pub fn segment_surfaces(&self) -> Vec<String> {
        self.sentences
            .iter()
            .flat_map(|s| s.alignment.iter().flat_map(|a| a.segments.iter()))
            .map(|seg| seg.surface().to_string())
            .collect()
    }
}

/// A document that could not be processed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordFailure {
    pub doc_id: String,
    pub stage: String,
    pub message: String,
}

impl RecordFailure {
    fn new(doc_id: &str, stage: &str, message: impl fmt::Display) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }
}

/// Splits a document into sentences and aligns the ones to be rewritten.
pub fn align_record(
    record: &DatasetRecord,
    scorer: &dyn SegmentScorer,
    threshold: f64,
    opts: &PipelineOptions,
) -> Result<RecordAlignment, RecordFailure> {
    let mut sentences = split_sentences(&record.utterance);
    if sentences.is_empty() {
        sentences.push(record.utterance.clone());
    }
    let limit = opts.max_sentences.unwrap_or(usize::MAX);
    let sentences = sentences
        .into_iter()
        .enumerate()
        .map(|(index, sentence)| {
            let alignment = if index < limit {
                let u = Utterance::new(format!("{}#{index}", record.doc_id), sentence.as_str())
                    .map_err(|e| RecordFailure::new(&record.doc_id, "align", e))?;
                Some(
                    align_segments(&u, &record.privacy_spec, scorer, threshold, opts.max_span)
                        .map_err(|e| RecordFailure::new(&record.doc_id, "align", e))?,
                )
            } else {
                None
            };
            Ok(SentenceAlignment {
                index,
                sentence,
                alignment,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RecordAlignment {
        doc_id: record.doc_id.clone(),
        sentences,
    })
}

/// Aligns every record once; the result can be shared between strategies.
pub fn align_dataset(
    records: &[DatasetRecord],
    opts: &PipelineOptions,
    backends: &Backends,
) -> Result<Vec<Result<RecordAlignment, RecordFailure>>, PipelineError> {
    let scorer = opts.segment_scorer(backends);
    let threshold = opts.align_threshold.unwrap_or(scorer.default_threshold());
    if !(0.0..=1.0).contains(&threshold) {
        return Err(PipelineError::Validation(format!(
            "alignment threshold {threshold} outside [0, 1]"
        )));
    }
    let pool = opts.pool()?;
    Ok(pool.install(|| {
        records
            .par_iter()
            .map(|r| align_record(r, scorer.as_ref(), threshold, opts))
            .collect()
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentenceRewrite {
    pub index: usize,
    pub original: String,
    pub rewrite: String,
    pub traces: Vec<SearchTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordRewrite {
    pub doc_id: String,
    pub original: String,
    pub rewrite: String,
    pub segments: Vec<String>,
    pub sentences: Vec<SentenceRewrite>,
}

impl RecordRewrite {
    pub fn traces(&self) -> impl Iterator<Item = &SearchTrace> {
        self.sentences.iter().flat_map(|s| s.traces.iter())
    }

    /// Generator calls that produced a node, over all segments.
    pub fn expansion_count(&self) -> usize {
        self.traces().map(|t| t.expansions.len()).sum()
    }

    /// One JSON line per segment search.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            for t in &s.traces {
                let line = serde_json::json!({ "sentence": s.index, "trace": t });
                out.push_str(&line.to_string());
                out.push('\n');
            }
        }
        out
    }
}

/// Row of the rewrites file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteRow {
    pub doc_id: String,
    pub strategy: String,
    pub original: String,
    pub rewrite: String,
    pub segments: Vec<String>,
}

/// Rewrites one aligned record with its own seeded random stream.
pub fn rewrite_record(
    record: &DatasetRecord,
    alignment: &RecordAlignment,
    strategy: StrategyKind,
    opts: &PipelineOptions,
    backends: &Backends,
) -> Result<RecordRewrite, RecordFailure> {
    let mut rng = rng_for(opts.cfg.rng_seed, &record.doc_id);
    let ctx = RewriteContext {
        backends,
        spec: &record.privacy_spec,
        cfg: &opts.cfg,
        template: &opts.template,
    };
    let mut sentences = Vec::with_capacity(alignment.sentences.len());
    for s in &alignment.sentences {
        let (rewrite, traces) = match &s.alignment {
            Some(a) => {
                let out = rewrite_document(&ctx, &s.sentence, a, strategy, &mut rng);
                (out.final_text, out.traces)
            }
            None => (s.sentence.clone(), Vec::new()),
        };
        if let Some(t) = traces.iter().find(|t| t.degraded) {
            let surfaces: Vec<&str> = t.segments.iter().map(|s| s.surface()).collect();
            let cause = t.failures.last().map(|f| f.error.as_str()).unwrap_or("unknown");
            return Err(RecordFailure::new(
                &record.doc_id,
                "rewrite",
                format!("every expansion failed for {surfaces:?}: {cause}"),
            ));
        }
        sentences.push(SentenceRewrite {
            index: s.index,
            original: s.sentence.clone(),
            rewrite,
            traces,
        });
    }
    let rewrite = sentences
        .iter()
        .map(|s| s.rewrite.as_str())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    Ok(RecordRewrite {
        doc_id: record.doc_id.clone(),
        original: record.utterance.clone(),
        rewrite,
        segments: alignment.segment_surfaces(),
        sentences,
    })
}

fn rewrite_all(
    records: &[DatasetRecord],
    alignments: &[Result<RecordAlignment, RecordFailure>],
    strategy: StrategyKind,
    opts: &PipelineOptions,
    backends: &Backends,
    pool: &rayon::ThreadPool,
) -> Vec<Result<RecordRewrite, RecordFailure>> {
    pool.install(|| {
        records
            .par_iter()
            .zip(alignments.par_iter())
            .map(|(record, alignment)| match alignment {
                Ok(a) => rewrite_record(record, a, strategy, opts, backends),
                Err(f) => Err(f.clone()),
            })
            .collect()
    })
}

/// Scores rewrites against their records. Rows without a record are ignored.
pub fn evaluate_rewrites(
    records: &[DatasetRecord],
    rows: &[RewriteRow],
    opts: &PipelineOptions,
    backends: &Backends,
) -> Result<MetricReport, PipelineError> {
    let by_id: HashMap<&str, &DatasetRecord> = records.iter().map(|r| (r.doc_id.as_str(), r)).collect();
    let pairs: Vec<(&DatasetRecord, &RewriteRow)> = rows
        .iter()
        .filter_map(|row| match by_id.get(row.doc_id.as_str()) {
            Some(r) => Some((*r, row)),
            None => {
                log::warn!("rewrite for unknown doc_id {:?} ignored", row.doc_id);
                None
            }
        })
        .collect();
    let pool = opts.pool()?;
    let logprob = backends.logprob.as_deref();
    let per_document = pool.install(|| {
        pairs
            .par_iter()
            .map(|(record, row)| {
                let input = DocumentInput {
                    doc_id: &record.doc_id,
                    original: &record.utterance,
                    rewrite: &row.rewrite,
                    reference: record.reference_rewrite.as_deref(),
                    spec: &record.privacy_spec,
                };
                evaluate_document(&input, backends.nli.as_ref(), logprob, opts.nli_cutoff)
            })
            .collect()
    });
    Ok(MetricReport::aggregate(per_document))
}

/// Runs the reconstruction attack over rewrites of known records.
pub fn attack_rewrites(
    records: &[DatasetRecord],
    rows: &[RewriteRow],
    channel: &ChannelModel,
    mode: AttackMode,
) -> Result<AttackReport, PipelineError> {
    let by_id: HashMap<&str, &DatasetRecord> = records.iter().map(|r| (r.doc_id.as_str(), r)).collect();
    let pairs = rows
        .iter()
        .filter_map(|row| by_id.get(row.doc_id.as_str()).map(|r| (r, row)))
        .map(|(r, row)| {
            Utterance::new(r.doc_id.clone(), r.utterance.clone())
                .map(|u| (u, row.rewrite.clone()))
                .map_err(|e| PipelineError::Validation(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(attack_success_rate(&pairs, channel, mode)?)
}

pub fn load_rewrites(path: &Path) -> Result<Vec<RewriteRow>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::Validation(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// File name for a document's trace; non-portable ids get a hash suffix.
pub fn trace_file_name(doc_id: &str) -> String {
    let safe: String = doc_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if safe == doc_id && !safe.starts_with('.') {
        format!("traces/{safe}.jsonl")
    } else {
        format!("traces/{safe}-{}.jsonl", &sha256_hex(doc_id.as_bytes())[..8])
    }
}

/// Writes run files from one thread and remembers their hashes.
struct OutputWriter<'a> {
    dir: &'a Path,
    files: BTreeMap<String, String>,
}

impl<'a> OutputWriter<'a> {
    fn new(dir: &'a Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        Ok(Self {
            dir,
            files: BTreeMap::new(),
        })
    }

    fn write(&mut self, rel: &str, contents: &str) -> Result<(), PipelineError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| PipelineError::io(&path, e))?;
        self.files.insert(rel.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("rows serialize") + "\n")
        .collect()
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Aligns a dataset and writes the alignments file.
pub fn run_alignment(
    dataset: &Dataset,
    opts: &PipelineOptions,
    backends: &Backends,
    out_dir: &Path,
) -> Result<(Vec<RecordAlignment>, Vec<RecordFailure>), PipelineError> {
    if dataset.records.is_empty() {
        return Err(PipelineError::NoDocuments);
    }
    let results = align_dataset(&dataset.records, opts, backends)?;
    let (ok, failed): (Vec<_>, Vec<_>) = results.into_iter().partition(Result::is_ok);
    let ok: Vec<RecordAlignment> = ok.into_iter().map(Result::unwrap).collect();
    let failed: Vec<RecordFailure> = failed.into_iter().map(|r| r.unwrap_err()).collect();
    let mut w = OutputWriter::new(out_dir)?;
    w.write(ALIGNMENTS_FILE, &jsonl(&ok))?;
    Ok((ok, failed))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub metrics: MetricReport,
    pub attack: Option<AttackReport>,
    pub rewrites: Vec<RecordRewrite>,
    pub failures: Vec<RecordFailure>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            EXIT_OK
        } else {
            EXIT_PARTIAL
        }
    }
}

/// Full run: health check, alignment, rewriting, evaluation, optional
/// attack, and the manifest. Per-document failures are skipped and counted.
pub fn run_pipeline(
    dataset: &Dataset,
    opts: &PipelineOptions,
    backends: &Backends,
    out_dir: &Path,
) -> Result<RunOutcome, PipelineError> {
    if dataset.records.is_empty() {
        return Err(PipelineError::NoDocuments);
    }
    if let Some(ch) = &opts.channel {
        if opts.attack_mode == AttackMode::Contextual && !ch.has_contexts() {
            return Err(AttackError::NoContextTable.into());
        }
    }
    backends.health_check()?;
    let started_at = now();
    let pool = opts.pool()?;
    let alignments = align_dataset(&dataset.records, opts, backends)?;
    let results = rewrite_all(&dataset.records, &alignments, opts.strategy, opts, backends, &pool);

    let mut rewrites = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rw) => rewrites.push(rw),
            Err(f) => {
                log::warn!("skipping {} ({}): {}", f.doc_id, f.stage, f.message);
                failures.push(f);
            }
        }
    }

    let rows: Vec<RewriteRow> = rewrites
        .iter()
        .map(|r| RewriteRow {
            doc_id: r.doc_id.clone(),
            strategy: opts.strategy.to_string(),
            original: r.original.clone(),
            rewrite: r.rewrite.clone(),
            segments: r.segments.clone(),
        })
        .collect();
    let aligned: Vec<&RecordAlignment> = alignments.iter().filter_map(|a| a.as_ref().ok()).collect();

    let mut w = OutputWriter::new(out_dir)?;
    w.write(ALIGNMENTS_FILE, &jsonl(&aligned))?;
    w.write(REWRITES_FILE, &jsonl(&rows))?;
    let mut trace_files = BTreeMap::new();
    for r in &rewrites {
        let rel = trace_file_name(&r.doc_id);
        w.write(&rel, &r.trace_jsonl())?;
        trace_files.insert(r.doc_id.clone(), rel);
    }

    let metrics = evaluate_rewrites(&dataset.records, &rows, opts, backends)?;
    w.write(METRICS_FILE, &(metrics.to_json() + "\n"))?;
    w.write(METRICS_TABLE_FILE, &metrics.render_table())?;

    let attack = match &opts.channel {
        Some(ch) => {
            let report = attack_rewrites(&dataset.records, &rows, ch, opts.attack_mode)?;
            w.write(ATTACK_FILE, &(report.to_json() + "\n"))?;
            w.write(ATTACK_TABLE_FILE, &report.render_table())?;
            Some(report)
        }
        None => None,
    };

    let config = opts.settings(backends);
    let config_text: String = config.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        strategy: opts.strategy.to_string(),
        config_hash: sha256_hex(config_text.as_bytes()),
        config,
        dataset_path: dataset.path.display().to_string(),
        dataset_hash: dataset.sha256.clone(),
        backends: backends.identities().into_iter().collect(),
        started_at,
        finished_at: now(),
        documents: rewrites.len(),
        skipped: failures.len(),
        skipped_ids: failures.iter().map(|f| f.doc_id.clone()).collect(),
        rewrites_file: REWRITES_FILE.into(),
        metrics_file: METRICS_FILE.into(),
        attack_file: attack.as_ref().map(|_| ATTACK_FILE.to_string()),
        trace_files,
        files: w.files.clone(),
        cost: opts.cost,
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&manifest_path, manifest.to_json()).map_err(|e| PipelineError::io(&manifest_path, e))?;
    Ok(RunOutcome {
        manifest,
        metrics,
        attack,
        rewrites,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: String,
    pub documents: usize,
    pub skipped: usize,
    pub privacy_nli_rate: Option<f64>,
    pub rouge1_f: Option<f64>,
    pub perplexity: Option<f64>,
    pub expansions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, strategy: StrategyKind) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.strategy == strategy.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ablation report serializes") + "\n"
    }

    pub fn render_table(&self) -> String {
        let opt = |v: Option<f64>, d: usize| v.map(|x| format!("{x:.d$}")).unwrap_or_else(|| "n/a".into());
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.strategy.clone(),
                    opt(r.privacy_nli_rate, 2),
                    opt(r.rouge1_f, 4),
                    opt(r.perplexity, 2),
                    r.documents.to_string(),
                    r.skipped.to_string(),
                    r.expansions.to_string(),
                ]
            })
            .collect();
        render_table(
            &["strategy", "privacy_nli_%", "rouge1_f", "ppl", "docs", "skipped", "expansions"],
            &rows,
        )
    }
}

/// Runs every strategy over one shared alignment of the dataset.
pub fn run_ablation(
    dataset: &Dataset,
    opts: &PipelineOptions,
    backends: &Backends,
    out_dir: &Path,
) -> Result<AblationReport, PipelineError> {
    if dataset.records.is_empty() {
        return Err(PipelineError::NoDocuments);
    }
    backends.health_check()?;
    let pool = opts.pool()?;
    let alignments = align_dataset(&dataset.records, opts, backends)?;
    let mut w = OutputWriter::new(out_dir)?;
    let mut rows = Vec::new();
    for strategy in StrategyKind::ALL {
        let results = rewrite_all(&dataset.records, &alignments, strategy, opts, backends, &pool);
        let skipped = results.iter().filter(|r| r.is_err()).count();
        let done: Vec<RecordRewrite> = results.into_iter().filter_map(Result::ok).collect();
        let rewrite_rows: Vec<RewriteRow> = done
            .iter()
            .map(|r| RewriteRow {
                doc_id: r.doc_id.clone(),
                strategy: strategy.to_string(),
                original: r.original.clone(),
                rewrite: r.rewrite.clone(),
                segments: r.segments.clone(),
            })
            .collect();
        w.write(&format!("ablation/{strategy}.jsonl"), &jsonl(&rewrite_rows))?;
        let metrics = evaluate_rewrites(&dataset.records, &rewrite_rows, opts, backends)?;
        rows.push(AblationRow {
            strategy: strategy.to_string(),
            documents: done.len(),
            skipped,
            privacy_nli_rate: metrics.privacy_nli_rate,
            rouge1_f: metrics.rouge1_f,
            perplexity: metrics.perplexity,
            expansions: done.iter().map(RecordRewrite::expansion_count).sum(),
        });
    }
    let report = AblationReport { rows };
    w.write(ABLATION_FILE, &report.to_json())?;
    w.write(ABLATION_TABLE_FILE, &report.render_table())?;
    Ok(report)
}
