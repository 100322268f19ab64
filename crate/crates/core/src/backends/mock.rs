//! Deterministic offline backends.
//!
//! Every adapter here is a pure function of its inputs and construction-time
//! settings, so search behaviour under these mocks is exactly predictable.

use rand::Rng;
use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::{BackendError, Embedder, LogProb, LogProbModel, NliModel, RewardModel, TextGenerator};
use crate::alignment::AlignedSegment;
use crate::rewriter::RewritePrompt;
use crate::seed::{rng_for, stable_hash, unit_interval};
use crate::text::{content_tokens, find_token_run, normalize, tokenize};
use crate::types::{PrivacySpec, RewriteAction};

pub const DEFAULT_PLACEHOLDER: &str = "something";
pub const DEFAULT_CEILING: usize = 64;

/// Scripted deviation from the default edit for one (action, segment).
#[derive(Debug, Clone, PartialEq)]
pub enum MockOverride {
    /// Ignore the instruction and return the sentence unchanged.
    Echo,
    /// Return this text instead of the edited sentence.
    Replace(String),
    /// Fail the call.
    Fail(String),
}

/// Delete removes the segment tokens; Obscure swaps them for a hypernym from
/// the table, or [`DEFAULT_PLACEHOLDER`]. Output is normalized token text.
#[derive(Debug, Clone, Default)]
pub struct MockGenerator {
    hypernyms: HashMap<String, String>,
    overrides: HashMap<(RewriteAction, String), MockOverride>,
    fail_all: Option<String>,
    ceiling: Option<usize>,
}

impl MockGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_hypernym(mut self, segment: &str, general: &str) -> Self {
        self.hypernyms.insert(normalize(segment), general.to_string());
        self
    }

    pub fn with_hypernyms<I, A, B>(mut self, table: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        for (a, b) in table {
            self.hypernyms.insert(normalize(a.as_ref()), b.as_ref().to_string());
        }
        self
    }

    pub fn with_override(mut self, action: RewriteAction, segment: &str, o: MockOverride) -> Self {
        self.overrides.insert((action, normalize(segment)), o);
        self
    }

    pub fn failing(message: &str) -> Self {
        Self {
            fail_all: Some(message.to_string()),
            ..Self::default()
        }
    }

    pub fn with_ceiling(mut self, ceiling: usize) -> Self {
        self.ceiling = Some(ceiling);
        self
    }

    /// The single deterministic rewrite this mock produces for `prompt`.
    pub fn rewrite(&self, prompt: &RewritePrompt) -> Result<String, BackendError> {
        if let Some(msg) = &self.fail_all {
            return Err(BackendError::Injected(msg.clone()));
        }
        let mut tokens = tokenize(prompt.base_sentence());
        for seg in prompt.segments() {
            let key = (prompt.action(), seg.surface().to_string());
            match self.overrides.get(&key) {
                Some(MockOverride::Echo) => continue,
                Some(MockOverride::Replace(text)) => {
                    tokens = tokenize(text);
                    continue;
                }
                Some(MockOverride::Fail(msg)) => return Err(BackendError::Injected(msg.clone())),
                None => {}
            }
            let needle = seg.tokens();
            let Some(at) = find_token_run(&tokens, &needle) else {
                continue;
            };
            let replacement = match prompt.action() {
                RewriteAction::Delete => Vec::new(),
                RewriteAction::Obscure => tokenize(
                    self.hypernyms
                        .get(seg.surface())
                        .map(String::as_str)
                        .unwrap_or(DEFAULT_PLACEHOLDER),
                ),
            };
            tokens.splice(at..at + needle.len(), replacement);
        }
        Ok(tokens.join(" "))
    }
}

impl TextGenerator for MockGenerator {
    fn identity(&self) -> String {
        "mock-generator".into()
    }

    fn generate(
        &self,
        prompt: &RewritePrompt,
        n: usize,
        _max_tokens: usize,
    ) -> Result<Vec<String>, BackendError> {
        if n == 0 {
            return Err(BackendError::InvalidRequest("n must be ≥ 1".into()));
        }
        let ceiling = self.ceiling.unwrap_or(DEFAULT_CEILING);
        if n > ceiling {
            return Err(BackendError::InvalidRequest(format!(
                "n = {n} exceeds the ceiling of {ceiling}"
            )));
        }
        let text = self.rewrite(prompt)?;
        Ok(vec![text; n])
    }
}

/// Wraps a generator and counts `generate` calls.
pub struct CountingGenerator<G> {
    inner: G,
    calls: AtomicUsize,
}

impl<G: TextGenerator> CountingGenerator<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<G: TextGenerator> TextGenerator for CountingGenerator<G> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn generate(
        &self,
        prompt: &RewritePrompt,
        n: usize,
        max_tokens: usize,
    ) -> Result<Vec<String>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(prompt, n, max_tokens)
    }
}

/// Reward = 1 − fraction of distinct segment tokens still present.
/// Relevance = Dice overlap between the text's tokens and the statement's
/// content tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockRewardModel;

impl RewardModel for MockRewardModel {
    fn identity(&self) -> String {
        "mock-reward".into()
    }

    fn reward(
        &self,
        candidate: &str,
        segments: &[AlignedSegment],
        _spec: &PrivacySpec,
    ) -> Result<f64, BackendError> {
        let mut seg_tokens: Vec<String> = segments.iter().flat_map(|s| s.tokens()).collect();
        seg_tokens.sort();
        seg_tokens.dedup();
        if seg_tokens.is_empty() {
            return Ok(1.0);
        }
        let cand = tokenize(candidate);
        let residual = seg_tokens.iter().filter(|t| cand.contains(t)).count();
        Ok(1.0 - residual as f64 / seg_tokens.len() as f64)
    }

    fn relevance(&self, statement: &str, text: &str) -> Result<f64, BackendError> {
        let mut span = tokenize(text);
        span.sort();
        span.dedup();
        let mut content = content_tokens(statement);
        content.sort();
        content.dedup();
        if span.is_empty() || content.is_empty() {
            return Ok(0.0);
        }
        let shared = span.iter().filter(|t| content.contains(t)).count();
        Ok(2.0 * shared as f64 / (span.len() + content.len()) as f64)
    }
}

/// Pseudo-random rewards in [0,1), a pure function of (seed, inputs).
#[derive(Debug, Clone, Copy)]
pub struct NoisyRewardModel {
    pub seed: u64,
}

impl RewardModel for NoisyRewardModel {
    fn identity(&self) -> String {
        format!("noisy-reward(seed={})", self.seed)
    }

    fn reward(
        &self,
        candidate: &str,
        segments: &[AlignedSegment],
        _spec: &PrivacySpec,
    ) -> Result<f64, BackendError> {
        let segs: Vec<&str> = segments.iter().map(|s| s.surface()).collect();
        Ok(unit_interval(stable_hash(&[
            &self.seed.to_le_bytes(),
            candidate.as_bytes(),
            segs.join("|").as_bytes(),
        ])))
    }

    fn relevance(&self, statement: &str, text: &str) -> Result<f64, BackendError> {
        Ok(unit_interval(stable_hash(&[
            &self.seed.to_le_bytes(),
            statement.as_bytes(),
            text.as_bytes(),
        ])))
    }
}

/// Always returns the same reward; for composition tests.
#[derive(Debug, Clone, Copy)]
pub struct FixedReward(pub f64);

impl RewardModel for FixedReward {
    fn identity(&self) -> String {
        format!("fixed-reward({})", self.0)
    }

    fn reward(&self, _: &str, _: &[AlignedSegment], _: &PrivacySpec) -> Result<f64, BackendError> {
        Ok(self.0)
    }

    fn relevance(&self, _: &str, _: &str) -> Result<f64, BackendError> {
        Ok(self.0)
    }
}

/// Entailment 1.0 when every content token of the hypothesis occurs in the
/// premise, else 0.0. Hypotheses made only of stopwords use all their tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockNli;

impl NliModel for MockNli {
    fn identity(&self) -> String {
        "mock-nli".into()
    }

    fn entailment(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError> {
        let premise = tokenize(premise);
        let mut needed = content_tokens(hypothesis);
        if needed.is_empty() {
            needed = tokenize(hypothesis);
        }
        Ok(if needed.iter().all(|t| premise.contains(t)) {
            1.0
        } else {
            0.0
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedNli(pub f64);

impl NliModel for FixedNli {
    fn identity(&self) -> String {
        format!("fixed-nli({})", self.0)
    }

    fn entailment(&self, _: &str, _: &str) -> Result<f64, BackendError> {
        Ok(self.0)
    }
}

/// Seeded hash-to-vector embedder with planted vectors for tests.
///
/// Lookups normalize the text first. Unplanted texts map to the fallback
/// vector when one is set, otherwise to a seeded pseudo-random unit vector.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
    planted: HashMap<String, Vec<f64>>,
    fallback: Option<Vec<f64>>,
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

impl MockEmbedder {
    pub fn hashed(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "embedding dimension must be ≥ 1");
        Self {
            dim,
            seed,
            planted: HashMap::new(),
            fallback: None,
        }
    }

    /// Each listed item embeds to itself with cosine 1; every other text
    /// sits at cosine −0.9 to each item, so only exact matches align.
    pub fn exact_match<S: AsRef<str>>(items: &[S]) -> Self {
        let dim = items.len() + 1;
        let mut e = Self::hashed(dim, 0);
        let mut fallback = vec![0.0; dim];
        fallback[0] = 1.0;
        let side = (1.0f64 - 0.81).sqrt();
        for (i, item) in items.iter().enumerate() {
            let mut v = vec![0.0; dim];
            v[0] = -0.9;
            v[i + 1] = side;
            e.planted.insert(normalize(item.as_ref()), v);
        }
        e.fallback = Some(fallback);
        e
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn with_vector(mut self, text: &str, v: Vec<f64>) -> Self {
        assert_eq!(v.len(), self.dim, "planted vector has the wrong dimension");
        self.planted.insert(normalize(text), unit(v));
        self
    }

    pub fn with_fallback_vector(mut self, v: Vec<f64>) -> Self {
        assert_eq!(v.len(), self.dim, "fallback vector has the wrong dimension");
        self.fallback = Some(unit(v));
        self
    }

    /// Plants `partner` at exactly `cosine` to `anchor`, using a fresh axis
    /// orthogonal to the anchor.
    pub fn with_pair(mut self, anchor: &str, partner: &str, cosine: f64) -> Result<Self, BackendError> {
        if !(-1.0..=1.0).contains(&cosine) {
            return Err(BackendError::InvalidRequest(format!("cosine {cosine} outside [-1, 1]")));
        }
        let anchor_key = normalize(anchor);
        if !self.planted.contains_key(&anchor_key) {
            let axis = self.fresh_axis(None)?;
            self.planted.insert(anchor_key.clone(), axis);
        }
        let a = self.planted[&anchor_key].clone();
        let u = self.fresh_axis(Some(&a))?;
        let s = (1.0 - cosine * cosine).max(0.0).sqrt();
        let v: Vec<f64> = a.iter().zip(&u).map(|(x, y)| cosine * x + s * y).collect();
        self.planted.insert(normalize(partner), v);
        Ok(self)
    }

    /// A unit vector orthogonal to `against` and to every planted vector's
    /// support that it can find among the standard basis.
    fn fresh_axis(&self, against: Option<&[f64]>) -> Result<Vec<f64>, BackendError> {
        let used: Vec<&Vec<f64>> = self.planted.values().chain(self.fallback.as_ref()).collect();
        for k in 0..self.dim {
            if used.iter().any(|v| v[k].abs() > 1e-12) {
                continue;
            }
            let mut e = vec![0.0; self.dim];
            e[k] = 1.0;
            if let Some(a) = against {
                let d: f64 = a[k];
                e.iter_mut().zip(a).for_each(|(x, y)| *x -= d * y);
            }
            return Ok(unit(e));
        }
        Err(BackendError::InvalidRequest(format!(
            "no free axis left in a {}-dimensional mock embedder",
            self.dim
        )))
    }

    fn hashed_vector(&self, key: &str) -> Vec<f64> {
        let mut rng = rng_for(self.seed, key);
        unit((0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect())
    }
}

impl Embedder for MockEmbedder {
    fn identity(&self) -> String {
        format!("mock-embedder(dim={},seed={})", self.dim, self.seed)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let key = normalize(text);
        if key.is_empty() {
            return Err(BackendError::InvalidRequest("text must be non-empty".into()));
        }
        Ok(match (self.planted.get(&key), &self.fallback) {
            (Some(v), _) => v.clone(),
            (None, Some(f)) => f.clone(),
            (None, None) => self.hashed_vector(&key),
        })
    }
}

/// Uniform language model: every token costs −ln(vocab_size).
#[derive(Debug, Clone, Copy)]
pub struct MockLogProb {
    vocab_size: f64,
    supported: bool,
}

impl MockLogProb {
    pub fn new(vocab_size: f64) -> Self {
        assert!(vocab_size > 1.0, "vocabulary size must exceed 1");
        Self {
            vocab_size,
            supported: true,
        }
    }

    /// An endpoint without log-prob support.
    pub fn unsupported() -> Self {
        Self {
            vocab_size: 2.0,
            supported: false,
        }
    }
}

impl LogProbModel for MockLogProb {
    fn identity(&self) -> String {
        format!("mock-logprob(vocab={})", self.vocab_size)
    }

    fn score_logprob(&self, text: &str) -> Result<LogProb, BackendError> {
        if !self.supported {
            return Err(BackendError::Unsupported {
                backend: self.identity(),
                capability: "log-probabilities",
            });
        }
        let n = tokenize(text).len();
        Ok(LogProb {
            total: -(n as f64) * self.vocab_size.ln(),
            token_count: n,
        })
    }
}

/// The standard offline bundle.
pub fn mock_backends(generator: MockGenerator, scorer: super::ScorerSpec) -> super::Backends {
    super::Backends::new(
        Arc::new(generator),
        Arc::new(MockRewardModel),
        Arc::new(MockNli),
        Arc::new(MockEmbedder::hashed(32, 0)),
        Some(Arc::new(MockLogProb::new(std::f64::consts::E))),
        scorer,
    )
}
