//! Bayesian token-reconstruction attack against rewritten text.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::metrics::align_tokens;
use crate::text::tokenize;
use crate::types::Utterance;

/// Observation emitted when the rewrite deleted the original token.
pub const GAP_TOKEN: &str = "<del>";
/// Context placeholder at sequence boundaries.
pub const BOUNDARY_TOKEN: &str = "<s>";

const SUM_TOLERANCE: f64 = 1e-9;

pub type Distribution = BTreeMap<String, f64>;

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error("unreachable observation {0:?}")]
    Unreachable(String),
    #[error("invalid channel model: {0}")]
    InvalidChannel(String),
    #[error("channel model has no contextual table")]
    NoContextTable,
    #[error("cannot read channel file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse channel file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Per-context overrides; missing parts fall back to the context-free tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextEntry {
    pub left: String,
    pub right: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Distribution>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub emission: BTreeMap<String, Distribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    vocabulary: BTreeSet<String>,
    prior: Distribution,
    emission: BTreeMap<String, Distribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contexts: Option<Vec<ContextEntry>>,
}

fn check_distribution(what: &str, d: &Distribution) -> Result<(), AttackError> {
    if let Some((k, v)) = d.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
        return Err(AttackError::InvalidChannel(format!("{what}: bad probability {v} for {k:?}")));
    }
    let sum: f64 = d.values().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(AttackError::InvalidChannel(format!("{what} sums to {sum}")));
    }
    Ok(())
}

impl ChannelModel {
    pub fn new(
        prior: Distribution,
        emission: BTreeMap<String, Distribution>,
        contexts: Option<Vec<ContextEntry>>,
    ) -> Result<Self, AttackError> {
        let model = Self {
            vocabulary: prior.keys().cloned().collect(),
            prior,
            emission,
            contexts,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.vocabulary.is_empty() {
            return Err(AttackError::InvalidChannel("empty vocabulary".into()));
        }
        let prior_keys: BTreeSet<String> = self.prior.keys().cloned().collect();
        if prior_keys != self.vocabulary {
            return Err(AttackError::InvalidChannel("prior keys differ from the vocabulary".into()));
        }
        check_distribution("prior", &self.prior)?;
        for x in &self.vocabulary {
            let row = self
                .emission
                .get(x)
                .ok_or_else(|| AttackError::InvalidChannel(format!("no emission row for {x:?}")))?;
            check_distribution(&format!("emission row {x:?}"), row)?;
        }
        if let Some(extra) = self.emission.keys().find(|k| !self.vocabulary.contains(*k)) {
            return Err(AttackError::InvalidChannel(format!("emission row for unknown token {extra:?}")));
        }
        for c in self.contexts.iter().flatten() {
            let label = format!("context ({:?}, {:?})", c.left, c.right);
            if let Some(p) = &c.prior {
                if p.keys().any(|k| !self.vocabulary.contains(k)) {
                    return Err(AttackError::InvalidChannel(format!("{label}: prior outside the vocabulary")));
                }
                check_distribution(&format!("{label} prior"), p)?;
            }
            for (x, row) in &c.emission {
                if !self.vocabulary.contains(x) {
                    return Err(AttackError::InvalidChannel(format!("{label}: unknown token {x:?}")));
                }
                check_distribution(&format!("{label} emission row {x:?}"), row)?;
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, AttackError> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, AttackError> {
        let text = std::fs::read_to_string(path).map_err(|source| AttackError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("channel model serializes")
    }

    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    pub fn prior(&self) -> &Distribution {
        &self.prior
    }

    pub fn emission(&self, x: &str, y: &str) -> f64 {
        self.emission.get(x).and_then(|r| r.get(y)).copied().unwrap_or(0.0)
    }

    pub fn has_contexts(&self) -> bool {
        self.contexts.is_some()
    }

    /// Every observation with non-zero probability under some x.
    pub fn observations(&self) -> BTreeSet<String> {
        self.emission
            .values()
            .flat_map(|r| r.iter().filter(|(_, p)| **p > 0.0).map(|(y, _)| y.clone()))
            .collect()
    }

    fn context(&self, left: &str, right: &str) -> Option<&ContextEntry> {
        self.contexts
            .as_ref()?
            .iter()
            .find(|c| c.left == left && c.right == right)
    }
}

fn argmax<F: Fn(&str) -> f64>(y: &str, vocab: &BTreeSet<String>, score: F) -> Result<String, AttackError> {
    let mut best: Option<(f64, &String)> = None;
    // BTreeSet iterates in lexicographic order, so strict `>` keeps the first.
    for x in vocab {
        let s = score(x);
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, x));
        }
    }
    match best {
        Some((s, x)) if s > 0.0 => Ok(x.clone()),
        _ => Err(AttackError::Unreachable(y.to_string())),
    }
}

/// argmax_x Pr(y|x)·Pr(x); lexicographically smallest x on ties.
pub fn reconstruct_context_free(y: &str, channel: &ChannelModel) -> Result<String, AttackError> {
    argmax(y, &channel.vocabulary, |x| channel.emission(x, y) * channel.prior[x])
}

/// argmax_x Pr(y|x,c)·Pr(x|c) with per-part fallback to the context-free tables.
pub fn reconstruct_contextual(
    y: &str,
    context: (&str, &str),
    channel: &ChannelModel,
) -> Result<String, AttackError> {
    if !channel.has_contexts() {
        return Err(AttackError::NoContextTable);
    }
    let entry = channel.context(context.0, context.1);
    argmax(y, &channel.vocabulary, |x| {
        let prior = entry
            .and_then(|e| e.prior.as_ref())
            .map(|p| p.get(x).copied().unwrap_or(0.0))
            .unwrap_or(channel.prior[x]);
        let emission = entry
            .and_then(|e| e.emission.get(x))
            .map(|r| r.get(y).copied().unwrap_or(0.0))
            .unwrap_or_else(|| channel.emission(x, y));
        emission * prior
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    ContextFree,
    Contextual,
}

impl std::str::FromStr for AttackMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "context-free" => Ok(Self::ContextFree),
            "contextual" => Ok(Self::Contextual),
            other => Err(format!("unknown attack mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    /// `None` when no differing sensitive position exists.
    pub asr_context_free: Option<f64>,
    pub asr_contextual: Option<f64>,
    pub aligned_pairs: usize,
    pub differing_pairs: usize,
    pub sensitive_positions: usize,
    pub correct_context_free: usize,
    pub correct_contextual: Option<usize>,
    /// Observations the channel cannot produce; counted as failed reconstructions.
    pub unreachable: usize,
}

/// One attacked position: the original token, the observation and its
/// window-1 context in the rewritten sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackSite {
    pub original: String,
    pub observed: String,
    pub left: String,
    pub right: String,
}

/// Positions where the rewrite differs from the original, with the
/// `differing` count covering all tokens and the returned sites only those
/// whose original token is in `vocab`.
pub fn attack_sites(
    original: &[String],
    rewritten: &[String],
    vocab: &BTreeSet<String>,
) -> (usize, usize, Vec<AttackSite>) {
    let pairs = align_tokens(original, rewritten);
    // Rewritten-sequence index of each column, or the next one for gaps.
    let mut next_rew = Vec::with_capacity(pairs.len());
    let mut k = 0usize;
    for (_, r) in &pairs {
        next_rew.push(k);
        if r.is_some() {
            k += 1;
        }
    }
    let boundary = || BOUNDARY_TOKEN.to_string();
    let mut differing = 0;
    let mut sites = Vec::new();
    for (col, (o, r)) in pairs.iter().enumerate() {
        if o.as_ref() == r.as_ref() {
            continue;
        }
        differing += 1;
        let Some(x) = o else { continue };
        if !vocab.contains(x) {
            continue;
        }
        let pos = next_rew[col];
        let left = pos.checked_sub(1).map(|i| rewritten[i].clone()).unwrap_or_else(boundary);
        let right_idx = if r.is_some() { pos + 1 } else { pos };
        let right = rewritten.get(right_idx).cloned().unwrap_or_else(boundary);
        sites.push(AttackSite {
            original: x.clone(),
            observed: r.clone().unwrap_or_else(|| GAP_TOKEN.to_string()),
            left,
            right,
        });
    }
    (pairs.len(), differing, sites)
}

/// Empirical attack success over (original, rewrite) pairs.
pub fn attack_success_rate(
    pairs: &[(Utterance, String)],
    channel: &ChannelModel,
    mode: AttackMode,
) -> Result<AttackReport, AttackError> {
    if mode == AttackMode::Contextual && !channel.has_contexts() {
        return Err(AttackError::NoContextTable);
    }
    let mut report = AttackReport {
        asr_context_free: None,
        asr_contextual: None,
        aligned_pairs: 0,
        differing_pairs: 0,
        sensitive_positions: 0,
        correct_context_free: 0,
        correct_contextual: (mode == AttackMode::Contextual).then_some(0),
        unreachable: 0,
    };
    for (utt, rewritten) in pairs {
        let (aligned, differing, sites) = attack_sites(utt.tokens(), &tokenize(rewritten), channel.vocabulary());
        report.aligned_pairs += aligned;
        report.differing_pairs += differing;
        report.sensitive_positions += sites.len();
        for s in sites {
            match reconstruct_context_free(&s.observed, channel) {
                Ok(x) if x == s.original => report.correct_context_free += 1,
                Ok(_) => {}
                Err(AttackError::Unreachable(_)) => report.unreachable += 1,
                Err(e) => return Err(e),
            }
            if let Some(correct) = report.correct_contextual.as_mut() {
                match reconstruct_contextual(&s.observed, (&s.left, &s.right), channel) {
                    Ok(x) if x == s.original => *correct += 1,
                    Ok(_) | Err(AttackError::Unreachable(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    if report.sensitive_positions > 0 {
        let n = report.sensitive_positions as f64;
        report.asr_context_free = Some(report.correct_context_free as f64 / n);
        report.asr_contextual = report.correct_contextual.map(|c| c as f64 / n);
    }
    Ok(report)
}

/// Σ_y max_x Pr(y|x)·Pr(x): the success rate of the optimal reconstructor.
pub fn bayes_accuracy(channel: &ChannelModel) -> f64 {
    channel
        .observations()
        .iter()
        .map(|y| {
            channel
                .vocabulary
                .iter()
                .map(|x| channel.emission(x, y) * channel.prior[x])
                .fold(0.0, f64::max)
        })
        .sum()
}

/// Estimates a context-free channel from observed pairs with add-one
/// smoothing over the observed output alphabet.
pub fn estimate_channel(
    pairs: &[(Utterance, String)],
    vocabulary: &BTreeSet<String>,
) -> Result<ChannelModel, AttackError> {
    if vocabulary.is_empty() {
        return Err(AttackError::InvalidChannel("empty vocabulary".into()));
    }
    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut outputs: BTreeSet<String> = vocabulary.clone();
    outputs.insert(GAP_TOKEN.to_string());
    for (utt, rewritten) in pairs {
        for (o, r) in align_tokens(utt.tokens(), &tokenize(rewritten)) {
            let Some(x) = o.filter(|x| vocabulary.contains(x)) else { continue };
            let y = r.unwrap_or_else(|| GAP_TOKEN.to_string());
            outputs.insert(y.clone());
            *counts.entry(x).or_default().entry(y).or_default() += 1;
        }
    }
    let total: usize = counts.values().flat_map(|r| r.values()).sum();
    let mut prior = Distribution::new();
    let mut emission = BTreeMap::new();
    for x in vocabulary {
        let row_counts = counts.get(x);
        let row_total: usize = row_counts.map(|r| r.values().sum()).unwrap_or(0);
        prior.insert(x.clone(), (row_total + 1) as f64 / (total + vocabulary.len()) as f64);
        let denom = (row_total + outputs.len()) as f64;
        let row: Distribution = outputs
            .iter()
            .map(|y| {
                let c = row_counts.and_then(|r| r.get(y)).copied().unwrap_or(0);
                (y.clone(), (c + 1) as f64 / denom)
            })
            .collect();
        emission.insert(x.clone(), row);
    }
    ChannelModel::new(prior, emission, None)
}
