//! One-step controllable rewriting: sample candidates under an action prompt,
//! gate them against the reward threshold, pick one.

use rand::Rng;
use serde::Serialize;
use std::path::Path;

use crate::alignment::AlignedSegment;
use crate::backends::{self, BackendError, Backends};
use crate::config::SearchConfig;
use crate::text::{contains_phrase, truncate_tokens};
use crate::types::{PrivacySpec, RewriteAction};

#[derive(Debug, thiserror::Error)]
pub enum RewriteError {
    #[error("segment not found: {0:?}")]
    SegmentNotFound(String),
    #[error("rewrite needs at least one segment")]
    NoSegments,
    #[error("generation failed: {0}")]
    Generate(#[source] BackendError),
    #[error("monitor failed on candidate {index}: {source}")]
    Monitor {
        index: usize,
        #[source]
        source: BackendError,
    },
    #[error("generator returned only empty candidates")]
    AllEmpty,
    #[error("prompt template is missing the {0} placeholder")]
    Template(&'static str),
    #[error("reading prompt template {path}: {source}")]
    TemplateIo {
        path: String,
        source: std::io::Error,
    },
}

impl RewriteError {
    pub fn backend(&self) -> Option<&BackendError> {
        match self {
            RewriteError::Generate(e) | RewriteError::Monitor { source: e, .. } => Some(e),
            _ => None,
        }
    }
}

const DEFAULT_TEMPLATE: &str = "\
Rewrite the sentence below so that it no longer reveals the private detail.

Sentence: {sentence}
Private detail: {segment}
Instruction: {action_directive}

Reply with the rewritten sentence only. Do not explain the change, do not mention privacy, and do not say that the sentence was rewritten.";

/// Prompt text with `{sentence}`, `{segment}` and `{action_directive}` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            text: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, RewriteError> {
        let text = text.into();
        for slot in ["{sentence}", "{segment}", "{action_directive}"] {
            if !text.contains(slot) {
                return Err(RewriteError::Template(slot));
            }
        }
        Ok(Self { text })
    }

    pub fn from_file(path: &Path) -> Result<Self, RewriteError> {
        let text = std::fs::read_to_string(path).map_err(|source| RewriteError::TemplateIo {
            path: path.display().to_string(),
            source,
        })?;
        Self::new(text)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    fn render(&self, sentence: &str, segment: &str, directive: &str) -> String {
        self.text
            .replace("{sentence}", sentence)
            .replace("{segment}", segment)
            .replace("{action_directive}", directive)
    }
}

fn quoted_list(segments: &[AlignedSegment]) -> String {
    segments
        .iter()
        .map(|s| format!("\"{}\"", s.surface()))
        .collect::<Vec<_>>()
        .join(", ")
}

fn directive(action: RewriteAction, segments: &[AlignedSegment]) -> String {
    let plural = if segments.len() > 1 { "s" } else { "" };
    let list = quoted_list(segments);
    match action {
        RewriteAction::Delete => format!(
            "Remove the exact phrase{plural} {list} from the sentence and keep the remaining text fluent and grammatical."
        ),
        RewriteAction::Obscure => format!(
            "Replace the phrase{plural} {list} with a strictly more general, less specific term and keep everything else unchanged."
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewritePrompt {
    base_sentence: String,
    segments: Vec<AlignedSegment>,
    action: RewriteAction,
    instruction_text: String,
}

impl RewritePrompt {
    pub fn base_sentence(&self) -> &str {
        &self.base_sentence
    }

    /// The targeted segments; a single one except for whole-sentence rewrites.
    pub fn segments(&self) -> &[AlignedSegment] {
        &self.segments
    }

    pub fn action(&self) -> RewriteAction {
        self.action
    }

    pub fn instruction_text(&self) -> &str {
        &self.instruction_text
    }
}

pub fn build_prompt(
    sentence: &str,
    segment: &AlignedSegment,
    action: RewriteAction,
) -> Result<RewritePrompt, RewriteError> {
    build_prompt_with(&PromptTemplate::default(), sentence, std::slice::from_ref(segment), action)
}

pub fn build_prompt_with(
    template: &PromptTemplate,
    sentence: &str,
    segments: &[AlignedSegment],
    action: RewriteAction,
) -> Result<RewritePrompt, RewriteError> {
    if segments.is_empty() {
        return Err(RewriteError::NoSegments);
    }
    if let Some(missing) = segments.iter().find(|s| !contains_phrase(sentence, s.surface())) {
        return Err(RewriteError::SegmentNotFound(missing.surface().to_string()));
    }
    let list = quoted_list(segments);
    let instruction_text = template.render(sentence, &list, &directive(action, segments));
    Ok(RewritePrompt {
        base_sentence: sentence.to_string(),
        segments: segments.to_vec(),
        action,
        instruction_text,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub text: String,
    pub gate_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub accepted_indices: Vec<usize>,
    pub chosen_index: usize,
}

impl CandidateSet {
    pub fn chosen(&self) -> &Candidate {
        &self.candidates[self.chosen_index]
    }

    pub fn chosen_accepted(&self) -> bool {
        self.accepted_indices.contains(&self.chosen_index)
    }
}

/// Accept/choose reduction over scored candidates: uniform among accepted,
/// otherwise the best score in the gate's direction (lowest index on ties).
pub fn choose_candidate<R: Rng + ?Sized>(
    scores: &[f64],
    cfg: &SearchConfig,
    rng: &mut R,
) -> (Vec<usize>, usize) {
    assert!(!scores.is_empty(), "no candidates to choose from");
    let accepted: Vec<usize> = (0..scores.len()).filter(|&i| cfg.accepts(scores[i])).collect();
    let chosen = if accepted.is_empty() {
        let mut best = 0;
        for i in 1..scores.len() {
            if cfg.gate_direction.better(scores[i], scores[best]) {
                best = i;
            }
        }
        best
    } else {
        accepted[rng.random_range(0..accepted.len())]
    };
    (accepted, chosen)
}

/// What a rewrite call needs besides its inputs.
#[derive(Clone, Copy)]
pub struct RewriteContext<'a> {
    pub backends: &'a Backends,
    pub spec: &'a PrivacySpec,
    pub cfg: &'a SearchConfig,
    pub template: &'a PromptTemplate,
}

/// Samples `sample_count` rewrites, scores each with the monitor, and picks one.
pub fn one_step_rewrite<R: Rng + ?Sized>(
    ctx: &RewriteContext<'_>,
    sentence: &str,
    segments: &[AlignedSegment],
    action: RewriteAction,
    rng: &mut R,
) -> Result<CandidateSet, RewriteError> {
    let prompt = build_prompt_with(ctx.template, sentence, segments, action)?;
    let raw = backends::generate(
        ctx.backends.generator.as_ref(),
        &prompt,
        ctx.cfg.sample_count,
        ctx.cfg.max_tokens,
    )
    .map_err(RewriteError::Generate)?;
    // An empty rewrite cannot be scored; the remaining candidates still count.
    let texts: Vec<String> = raw
        .iter()
        .map(|t| truncate_tokens(t.trim(), ctx.cfg.max_tokens))
        .filter(|t| !t.trim().is_empty())
        .collect();
    if texts.is_empty() {
        return Err(RewriteError::AllEmpty);
    }
    let mut candidates = Vec::with_capacity(texts.len());
    for (index, text) in texts.into_iter().enumerate() {
        let gate_score = ctx
            .backends
            .scorer
            .score_reward(&text, segments, ctx.spec)
            .map_err(|source| RewriteError::Monitor { index, source })?;
        candidates.push(Candidate { text, gate_score });
    }
    let scores: Vec<f64> = candidates.iter().map(|c| c.gate_score).collect();
    let (accepted_indices, chosen_index) = choose_candidate(&scores, ctx.cfg, rng);
    Ok(CandidateSet {
        candidates,
        accepted_indices,
        chosen_index,
    })
}
