//! Privacy, utility and naturalness metrics.

use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

use crate::backends::{nli_entailment, score_logprob, BackendError, LogProbModel, NliModel};
use crate::text::{contains_phrase, normalize, tokenize};
use crate::types::PrivacySpec;

/// Entailment at or above this marks a document as leaking.
pub const DEFAULT_ENTAILMENT_CUTOFF: f64 = 0.5;

/// ROUGE-1 F1 over token multisets; 0 when either side is empty.
pub fn rouge1_f(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &refr {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &cand {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand.len() as f64;
    let r = overlap as f64 / refr.len() as f64;
    2.0 * p * r / (p + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiiScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set matching after normalization. An empty side counts as vacuously
/// perfect for the rate that divides by it.
pub fn pii_match_scores<S: AsRef<str>>(predicted: &[S], truth: &[S]) -> PiiScores {
    let p: HashSet<String> = predicted.iter().map(|s| normalize(s.as_ref())).collect();
    let t: HashSet<String> = truth.iter().map(|s| normalize(s.as_ref())).collect();
    let hit = p.intersection(&t).count() as f64;
    let precision = if p.is_empty() { 1.0 } else { hit / p.len() as f64 };
    let recall = if t.is_empty() { 1.0 } else { hit / t.len() as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PiiScores {
        precision,
        recall,
        f1,
    }
}

/// The spec's PII surfaces that still occur in `text`.
pub fn extract_pii(text: &str, spec: &PrivacySpec) -> Vec<String> {
    spec.pii_items()
        .iter()
        .filter(|p| contains_phrase(text, &p.surface))
        .map(|p| normalize(&p.surface))
        .collect()
}

/// Strongest entailment of any spec statement by `text`.
pub fn max_entailment(text: &str, spec: &PrivacySpec, nli: &dyn NliModel) -> Result<f64, BackendError> {
    let mut max = 0.0f64;
    for h in spec.statements() {
        max = max.max(nli_entailment(nli, text, &h)?);
    }
    Ok(max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NliRate {
    /// Percentage of scored documents that do not entail the spec; `None`
    /// when nothing could be scored.
    pub percentage: Option<f64>,
    pub scored: usize,
    pub failures: usize,
    pub max_entailments: Vec<Option<f64>>,
}

/// Share of rewrites whose strongest spec entailment stays below `cutoff`.
pub fn privacy_nli_rate(rewrites: &[(String, PrivacySpec)], nli: &dyn NliModel, cutoff: f64) -> NliRate {
    let max_entailments: Vec<Option<f64>> = rewrites
        .iter()
        .map(|(text, spec)| match max_entailment(text, spec, nli) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("privacy NLI failed for spec {}: {e}", spec.spec_id());
                None
            }
        })
        .collect();
    let scored: Vec<f64> = max_entailments.iter().flatten().copied().collect();
    let private = scored.iter().filter(|&&e| e < cutoff).count();
    NliRate {
        percentage: (!scored.is_empty()).then(|| 100.0 * private as f64 / scored.len() as f64),
        scored: scored.len(),
        failures: rewrites.len() - scored.len(),
        max_entailments,
    }
}

/// Unique-bigram ratio of one text; 1 for texts shorter than two tokens.
pub fn distinct2_single(text: &str) -> f64 {
    let toks = tokenize(text);
    if toks.len() < 2 {
        return 1.0;
    }
    let bigrams: Vec<(&str, &str)> = toks.windows(2).map(|w| (w[0].as_str(), w[1].as_str())).collect();
    let unique: HashSet<&(&str, &str)> = bigrams.iter().collect();
    unique.len() as f64 / bigrams.len() as f64
}

/// Mean per-text Distinct-2; 0 for an empty list.
pub fn distinct2<S: AsRef<str>>(texts: &[S]) -> f64 {
    if texts.is_empty() {
        log::warn!("distinct2 over an empty list");
        return 0.0;
    }
    texts.iter().map(|t| distinct2_single(t.as_ref())).sum::<f64>() / texts.len() as f64
}

/// exp(−total log-prob / token count). Capability errors propagate so the
/// caller can report the metric as unavailable.
pub fn perplexity(text: &str, model: &dyn LogProbModel) -> Result<f64, BackendError> {
    let lp = score_logprob(model, text)?;
    Ok((-lp.total / lp.token_count as f64).exp())
}

/// One column of a token alignment; `None` is a gap.
pub type AlignedPair = (Option<String>, Option<String>);

fn edit_table(a: &[String], b: &[String]) -> Vec<Vec<usize>> {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d
}

/// Token-level Levenshtein distance.
pub fn token_edit_distance(a: &[String], b: &[String]) -> usize {
    edit_table(a, b)[a.len()][b.len()]
}

/// Minimum-edit global alignment. On the traceback, substitutions/matches
/// win over gaps and a gap in the rewritten side wins over one in the
/// original, which places gaps as far left as possible.
pub fn align_tokens(original: &[String], rewritten: &[String]) -> Vec<AlignedPair> {
    let d = edit_table(original, rewritten);
    let (mut i, mut j) = (original.len(), rewritten.len());
    let mut out = Vec::with_capacity(i.max(j));
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let cost = usize::from(original[i - 1] != rewritten[j - 1]);
            if d[i][j] == d[i - 1][j - 1] + cost {
                out.push((Some(original[i - 1].clone()), Some(rewritten[j - 1].clone())));
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            out.push((Some(original[i - 1].clone()), None));
            i -= 1;
        } else {
            out.push((None, Some(rewritten[j - 1].clone())));
            j -= 1;
        }
    }
    out.reverse();
    out
}

/// Edit cost of an alignment: gaps and mismatched columns cost 1.
pub fn alignment_cost(pairs: &[AlignedPair]) -> usize {
    pairs
        .iter()
        .filter(|(a, b)| match (a, b) {
            (Some(x), Some(y)) => x != y,
            _ => true,
        })
        .count()
}
