//! Privacy segment alignment: locate the spans of an utterance that express
//! the privacy specification.
//!
//! Every contiguous span of up to [`DEFAULT_MAX_SPAN`] tokens is scored
//! against every statement of the spec; the best-scoring non-overlapping
//! spans at or above a threshold become the rewrite targets.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::hash::Hash;
use std::sync::Arc;

use crate::backends::{BackendError, Embedder, RewardModel};
use crate::text::{find_token_run, tokenize};
use crate::types::{PrivacySpec, TypeError, Utterance};

pub const DEFAULT_MAX_SPAN: usize = 4;
pub const DEFAULT_COSINE_THRESHOLD: f64 = 0.2;
pub const DEFAULT_REWARD_MODEL_THRESHOLD: f64 = 0.15;
pub const DEFAULT_MASK: &str = "<MASK>";

#[derive(Debug, thiserror::Error)]
pub enum AlignError {
    #[error("scoring failed: {0}")]
    Scoring(#[from] BackendError),
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("segments overlap at token {0}")]
    Overlap(usize),
    #[error("segment {0:?} not found in sentence")]
    NotFound(String),
    #[error("mask {0:?} must tokenize to exactly one token")]
    Mask(String),
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// A sensitive span of an utterance: tokens `start..end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSegment {
    start: usize,
    end: usize,
    surface: String,
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_item: Option<usize>,
}

impl AlignedSegment {
    /// Builds a segment over `tokens[start..end]`.
    pub fn new(
        tokens: &[String],
        start: usize,
        end: usize,
        score: f64,
        source_item: Option<usize>,
    ) -> Result<Self, AlignError> {
        if start >= end || end > tokens.len() {
            return Err(AlignError::InvalidSegment(format!(
                "span {start}..{end} over {} tokens",
                tokens.len()
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(AlignError::InvalidSegment(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            start,
            end,
            surface: tokens[start..end].join(" "),
            score,
            source_item,
        })
    }

    /// Finds the first occurrence of `phrase` in `sentence` and wraps it.
    pub fn locate(sentence: &str, phrase: &str, score: f64) -> Result<Self, AlignError> {
        let toks = tokenize(sentence);
        let needle = tokenize(phrase);
        let start =
            find_token_run(&toks, &needle).ok_or_else(|| AlignError::NotFound(phrase.to_string()))?;
        Self::new(&toks, start, start + needle.len(), score, None)
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.surface)
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn source_item(&self) -> Option<usize> {
        self.source_item
    }

    pub fn overlaps(&self, other: &AlignedSegment) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentResult {
    pub segments: Vec<AlignedSegment>,
    pub threshold_used: f64,
    pub scorer_name: String,
}

/// Scores candidate spans against a privacy spec. Returns, per span, the best
/// score over spec statements and the index of the statement that achieved it.
///
/// A fine-tuned span detector plugs in here as another implementation.
pub trait SegmentScorer: Send + Sync {
    fn name(&self) -> &str;
    fn default_threshold(&self) -> f64;
    fn score_spans(
        &self,
        spec: &PrivacySpec,
        spans: &[String],
    ) -> Result<Vec<(f64, Option<usize>)>, AlignError>;
}

/// Cosine similarity between embeddings, rescaled from [-1,1] to [0,1].
pub struct CosineScorer {
    embedder: Arc<dyn Embedder>,
}

impl CosineScorer {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self { embedder }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn rescale(cos: f64) -> f64 {
    ((cos + 1.0) / 2.0).clamp(0.0, 1.0)
}

fn best_of(scores: impl Iterator<Item = f64>) -> (f64, Option<usize>) {
    let mut best = (0.0, None);
    for (i, s) in scores.enumerate() {
        if best.1.is_none() || s > best.0 {
            best = (s, Some(i));
        }
    }
    best
}

impl SegmentScorer for CosineScorer {
    fn name(&self) -> &str {
        "cosine-embedding"
    }

    fn default_threshold(&self) -> f64 {
        DEFAULT_COSINE_THRESHOLD
    }

    fn score_spans(
        &self,
        spec: &PrivacySpec,
        spans: &[String],
    ) -> Result<Vec<(f64, Option<usize>)>, AlignError> {
        let items = spec
            .statements()
            .iter()
            .map(|s| crate::backends::embed(self.embedder.as_ref(), s))
            .collect::<Result<Vec<_>, _>>()?;
        spans
            .iter()
            .map(|span| {
                let v = crate::backends::embed(self.embedder.as_ref(), span)?;
                Ok(best_of(items.iter().map(|it| rescale(cosine(&v, it)))))
            })
            .collect()
    }
}

/// Uses the reward model's relevance head: how strongly a span expresses a
/// spec statement.
pub struct RewardModelScorer {
    model: Arc<dyn RewardModel>,
}

impl RewardModelScorer {
    pub fn new(model: Arc<dyn RewardModel>) -> Self {
        Self { model }
    }
}

impl SegmentScorer for RewardModelScorer {
    fn name(&self) -> &str {
        "reward-model"
    }

    fn default_threshold(&self) -> f64 {
        DEFAULT_REWARD_MODEL_THRESHOLD
    }

    fn score_spans(
        &self,
        spec: &PrivacySpec,
        spans: &[String],
    ) -> Result<Vec<(f64, Option<usize>)>, AlignError> {
        let items = spec.statements();
        spans
            .iter()
            .map(|span| {
                let scores = items
                    .iter()
                    .map(|it| self.model.relevance(it, span).map(|s| s.clamp(0.0, 1.0)))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(best_of(scores.into_iter()))
            })
            .collect()
    }
}

/// Alignment score of a single span: best rescaled cosine over spec statements.
pub fn score_segment(
    spec: &PrivacySpec,
    segment_tokens: &[String],
    embedder: Arc<dyn Embedder>,
) -> Result<f64, AlignError> {
    if segment_tokens.is_empty() {
        return Err(AlignError::InvalidSegment("empty segment".into()));
    }
    let scorer = CosineScorer::new(embedder);
    Ok(scorer.score_spans(spec, &[segment_tokens.join(" ")])?[0].0)
}

/// Selects the highest-scoring non-overlapping spans of at most `max_span`
/// tokens whose score reaches `threshold`.
pub fn align_segments(
    u: &Utterance,
    spec: &PrivacySpec,
    scorer: &dyn SegmentScorer,
    threshold: f64,
    max_span: usize,
) -> Result<AlignmentResult, AlignError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(AlignError::Threshold(threshold));
    }
    let tokens = u.tokens();
    let mut spans = Vec::new();
    for start in 0..tokens.len() {
        for len in 1..=max_span.min(tokens.len() - start) {
            spans.push((start, start + len));
        }
    }
    let surfaces: Vec<String> = spans.iter().map(|&(s, e)| tokens[s..e].join(" ")).collect();
    let scores = if surfaces.is_empty() {
        Vec::new()
    } else {
        scorer.score_spans(spec, &surfaces)?
    };

    let mut ranked: Vec<usize> = (0..spans.len())
        .filter(|&i| scores[i].0 >= threshold)
        .collect();
    ranked.sort_by(|&a, &b| {
        scores[b]
            .0
            .total_cmp(&scores[a].0)
            .then(spans[a].0.cmp(&spans[b].0))
            .then(spans[a].1.cmp(&spans[b].1))
    });

    let mut taken = vec![false; tokens.len()];
    let mut segments = Vec::new();
    for i in ranked {
        let (s, e) = spans[i];
        if taken[s..e].iter().any(|&t| t) {
            continue;
        }
        taken[s..e].iter_mut().for_each(|t| *t = true);
        segments.push(AlignedSegment::new(tokens, s, e, scores[i].0, scores[i].1)?);
    }
    segments.sort_by_key(|seg| seg.start);
    Ok(AlignmentResult {
        segments,
        threshold_used: threshold,
        scorer_name: scorer.name().to_string(),
    })
}

/// Replaces each segment with `mask`; the redaction baseline.
pub fn scrub_segments(
    u: &Utterance,
    segments: &[AlignedSegment],
    mask: &str,
) -> Result<Utterance, AlignError> {
    if tokenize(mask).len() != 1 {
        return Err(AlignError::Mask(mask.to_string()));
    }
    let tokens = u.tokens();
    let mut ordered: Vec<&AlignedSegment> = segments.iter().collect();
    ordered.sort_by_key(|s| s.start);
    for seg in &ordered {
        if seg.end > tokens.len() || tokens[seg.start..seg.end].join(" ") != seg.surface {
            return Err(AlignError::InvalidSegment(format!(
                "{:?} does not match utterance {:?}",
                seg.surface,
                u.doc_id()
            )));
        }
    }
    for w in ordered.windows(2) {
        if w[0].overlaps(w[1]) {
            return Err(AlignError::Overlap(w[1].start));
        }
    }
    if ordered.is_empty() {
        return Ok(u.clone());
    }
    let mut out: Vec<&str> = Vec::with_capacity(tokens.len());
    let mut i = 0;
    for seg in ordered {
        out.extend(tokens[i..seg.start].iter().map(String::as_str));
        out.push(mask);
        i = seg.end;
    }
    out.extend(tokens[i..].iter().map(String::as_str));
    Ok(Utterance::new(u.doc_id(), out.join(" "))?)
}

/// |A∩B| / min(|A|,|B|). Both empty gives 1, exactly one empty gives 0.
pub fn overlap_coefficient<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => a.intersection(b).count() as f64 / a.len().min(b.len()) as f64,
    }
}
