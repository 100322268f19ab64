//! Model backends: text generation, reward scoring, NLI entailment,
//! embeddings and token log-probabilities.
//!
//! Each capability is a trait so the search code never knows whether it is
//! talking to a local inference server ([`http`]) or the deterministic
//! [`mock`] suite. The free functions in this module enforce the shared
//! preconditions (non-empty text, `n ≥ 1`) in front of any adapter.

pub mod http;
pub mod mock;

use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::alignment::AlignedSegment;
use crate::rewriter::RewritePrompt;
use crate::types::PrivacySpec;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum BackendError {
    #[error("transport failure talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("{endpoint} answered HTTP {status}: {body}")]
    Status {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("malformed response from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("{0} returned no candidates")]
    Empty(String),
    #[error("{0}")]
    InvalidRequest(String),
    #[error("{backend} does not support {capability}")]
    Unsupported {
        backend: String,
        capability: &'static str,
    },
    #[error("{0}")]
    Injected(String),
}

impl BackendError {
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Transport { .. } | BackendError::Status { .. })
    }
}

pub trait TextGenerator: Send + Sync {
    fn identity(&self) -> String;
    /// Up to `n` rewrites of the prompt, each at most `max_tokens` long.
    fn generate(
        &self,
        prompt: &RewritePrompt,
        n: usize,
        max_tokens: usize,
    ) -> Result<Vec<String>, BackendError>;
    /// Cheap reachability probe run before a batch starts.
    fn health_check(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

pub trait RewardModel: Send + Sync {
    fn identity(&self) -> String;
    /// Privacy reward of `candidate` with respect to the targeted segments;
    /// higher means less residual private content. Nominally in [0,1].
    fn reward(
        &self,
        candidate: &str,
        segments: &[AlignedSegment],
        spec: &PrivacySpec,
    ) -> Result<f64, BackendError>;
    /// How strongly `text` expresses the spec statement; used for alignment.
    fn relevance(&self, statement: &str, text: &str) -> Result<f64, BackendError>;
    fn health_check(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

pub trait NliModel: Send + Sync {
    fn identity(&self) -> String;
    /// Probability that `premise` entails `hypothesis`.
    fn entailment(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError>;
    fn health_check(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

pub trait Embedder: Send + Sync {
    fn identity(&self) -> String;
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogProb {
    pub total: f64,
    pub token_count: usize,
}

pub trait LogProbModel: Send + Sync {
    fn identity(&self) -> String;
    fn score_logprob(&self, text: &str) -> Result<LogProb, BackendError>;
}

fn require_text(what: &str, text: &str) -> Result<(), BackendError> {
    if text.trim().is_empty() {
        return Err(BackendError::InvalidRequest(format!("{what} must be non-empty")));
    }
    Ok(())
}

pub fn generate(
    generator: &dyn TextGenerator,
    prompt: &RewritePrompt,
    n: usize,
    max_tokens: usize,
) -> Result<Vec<String>, BackendError> {
    if n == 0 {
        return Err(BackendError::InvalidRequest("n must be ≥ 1".into()));
    }
    let mut out = generator.generate(prompt, n, max_tokens)?;
    out.truncate(n);
    if out.is_empty() {
        return Err(BackendError::Empty(generator.identity()));
    }
    Ok(out)
}

pub fn nli_entailment(nli: &dyn NliModel, premise: &str, hypothesis: &str) -> Result<f64, BackendError> {
    require_text("premise", premise)?;
    require_text("hypothesis", hypothesis)?;
    let p = nli.entailment(premise, hypothesis)?;
    if p.is_nan() {
        return Err(BackendError::Protocol {
            endpoint: nli.identity(),
            message: "entailment probability is NaN".into(),
        });
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Unit-normalized embedding of `text`.
pub fn embed(embedder: &dyn Embedder, text: &str) -> Result<Vec<f64>, BackendError> {
    require_text("text", text)?;
    let mut v = embedder.embed(text)?;
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(BackendError::Protocol {
            endpoint: embedder.identity(),
            message: "embedding has zero or non-finite norm".into(),
        });
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

pub fn score_logprob(model: &dyn LogProbModel, text: &str) -> Result<LogProb, BackendError> {
    require_text("text", text)?;
    let lp = model.score_logprob(text)?;
    if lp.token_count == 0 {
        return Err(BackendError::Protocol {
            endpoint: model.identity(),
            message: "no scored tokens".into(),
        });
    }
    Ok(lp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    RewardModel,
    PrivacyNli,
    LinearCombination,
}

/// Which discriminator produces the search reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScorerSpec {
    kind: ScorerKind,
    /// (reward weight, NLI weight); set only for linear combinations.
    weights: Option<(f64, f64)>,
}

impl ScorerSpec {
    pub const DEFAULT_WEIGHTS: (f64, f64) = (0.5, 0.5);

    pub fn reward_model() -> Self {
        Self {
            kind: ScorerKind::RewardModel,
            weights: None,
        }
    }

    pub fn privacy_nli() -> Self {
        Self {
            kind: ScorerKind::PrivacyNli,
            weights: None,
        }
    }

    pub fn linear(w_reward: f64, w_nli: f64) -> Result<Self, BackendError> {
        if !(w_reward >= 0.0 && w_nli >= 0.0) || ((w_reward + w_nli) - 1.0).abs() > 1e-9 {
            return Err(BackendError::InvalidRequest(format!(
                "linear-combination weights ({w_reward}, {w_nli}) must be non-negative and sum to 1"
            )));
        }
        Ok(Self {
            kind: ScorerKind::LinearCombination,
            weights: Some((w_reward, w_nli)),
        })
    }

    pub fn kind(&self) -> ScorerKind {
        self.kind
    }

    pub fn weights(&self) -> Option<(f64, f64)> {
        self.weights
    }
}

/// Reward discriminator: the configured combination of reward model and
/// privacy NLI. Serves as both the one-step gate monitor and the search reward.
pub struct Scorer {
    spec: ScorerSpec,
    reward: Arc<dyn RewardModel>,
    nli: Arc<dyn NliModel>,
    clamped: AtomicU64,
}

impl Scorer {
    pub fn new(spec: ScorerSpec, reward: Arc<dyn RewardModel>, nli: Arc<dyn NliModel>) -> Self {
        Self {
            spec,
            reward,
            nli,
            clamped: AtomicU64::new(0),
        }
    }

    pub fn spec(&self) -> ScorerSpec {
        self.spec
    }

    /// Number of out-of-range reward values clamped so far.
    pub fn clamp_count(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    pub fn identity(&self) -> String {
        match self.spec.kind {
            ScorerKind::RewardModel => self.reward.identity(),
            ScorerKind::PrivacyNli => format!("privacy-nli({})", self.nli.identity()),
            ScorerKind::LinearCombination => {
                let (a, b) = self.spec.weights.unwrap_or(ScorerSpec::DEFAULT_WEIGHTS);
                format!("linear({a}*{} + {b}*nli({}))", self.reward.identity(), self.nli.identity())
            }
        }
    }

    fn reward_component(
        &self,
        candidate: &str,
        segments: &[AlignedSegment],
        spec: &PrivacySpec,
    ) -> Result<f64, BackendError> {
        let r = self.reward.reward(candidate, segments, spec)?;
        if r.is_nan() {
            return Err(BackendError::Protocol {
                endpoint: self.reward.identity(),
                message: "reward is NaN".into(),
            });
        }
        if !(0.0..=1.0).contains(&r) {
            let n = self.clamped.fetch_add(1, Ordering::Relaxed) + 1;
            log::warn!("reward {r} from {} clamped into [0,1] ({n} so far)", self.reward.identity());
        }
        Ok(r.clamp(0.0, 1.0))
    }

    /// 1 − the strongest entailment of any spec statement by `candidate`.
    pub fn nli_privacy(&self, candidate: &str, spec: &PrivacySpec) -> Result<f64, BackendError> {
        let mut max = 0.0f64;
        for h in spec.statements() {
            max = max.max(nli_entailment(self.nli.as_ref(), candidate, &h)?);
        }
        Ok(1.0 - max)
    }

    pub fn score_reward(
        &self,
        candidate: &str,
        segments: &[AlignedSegment],
        spec: &PrivacySpec,
    ) -> Result<f64, BackendError> {
        require_text("candidate", candidate)?;
        match self.spec.kind {
            ScorerKind::RewardModel => self.reward_component(candidate, segments, spec),
            ScorerKind::PrivacyNli => self.nli_privacy(candidate, spec),
            ScorerKind::LinearCombination => {
                let (wr, wn) = self.spec.weights.unwrap_or(ScorerSpec::DEFAULT_WEIGHTS);
                let r = self.reward_component(candidate, segments, spec)?;
                let n = self.nli_privacy(candidate, spec)?;
                Ok((wr * r + wn * n).clamp(0.0, 1.0))
            }
        }
    }

    pub fn health_check(&self) -> Result<(), BackendError> {
        match self.spec.kind {
            ScorerKind::RewardModel => self.reward.health_check(),
            ScorerKind::PrivacyNli => self.nli.health_check(),
            ScorerKind::LinearCombination => {
                self.reward.health_check()?;
                self.nli.health_check()
            }
        }
    }
}

/// Everything a pipeline run talks to.
#[derive(Clone)]
pub struct Backends {
    pub generator: Arc<dyn TextGenerator>,
    pub scorer: Arc<Scorer>,
    pub nli: Arc<dyn NliModel>,
    pub reward: Arc<dyn RewardModel>,
    pub embedder: Arc<dyn Embedder>,
    pub logprob: Option<Arc<dyn LogProbModel>>,
}

impl Backends {
    pub fn new(
        generator: Arc<dyn TextGenerator>,
        reward: Arc<dyn RewardModel>,
        nli: Arc<dyn NliModel>,
        embedder: Arc<dyn Embedder>,
        logprob: Option<Arc<dyn LogProbModel>>,
        scorer: ScorerSpec,
    ) -> Self {
        Self {
            scorer: Arc::new(Scorer::new(scorer, reward.clone(), nli.clone())),
            generator,
            nli,
            reward,
            embedder,
            logprob,
        }
    }

    /// Names of every backend, for run manifests.
    pub fn identities(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("generator".to_string(), self.generator.identity()),
            ("scorer".to_string(), self.scorer.identity()),
            ("nli".to_string(), self.nli.identity()),
            ("embedder".to_string(), self.embedder.identity()),
        ];
        if let Some(lp) = &self.logprob {
            out.push(("logprob".to_string(), lp.identity()));
        }
        out
    }

    pub fn health_check(&self) -> Result<(), BackendError> {
        self.generator.health_check()?;
        self.scorer.health_check()?;
        self.nli.health_check()
    }
}
