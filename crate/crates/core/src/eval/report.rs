//! Per-document metric rows, their aggregates and plain-text rendering.

use serde::{Deserialize, Serialize};

use super::attack::AttackReport;
use super::metrics::{
    distinct2_single, extract_pii, max_entailment, perplexity, pii_match_scores, rouge1_f, PiiScores,
};
use crate::backends::{BackendError, LogProbModel, NliModel};
use crate::types::PrivacySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentMetrics {
    pub doc_id: String,
    /// Strongest spec entailment; `None` when the NLI backend failed.
    pub max_entailment: Option<f64>,
    pub private: Option<bool>,
    pub rouge1_f: f64,
    /// Only for documents whose spec lists PII.
    pub pii: Option<PiiScores>,
    pub distinct2: f64,
    pub perplexity: Option<f64>,
}

/// Inputs needed to score one rewritten document.
pub struct DocumentInput<'a> {
    pub doc_id: &'a str,
    pub original: &'a str,
    pub rewrite: &'a str,
    pub reference: Option<&'a str>,
    pub spec: &'a PrivacySpec,
}

pub fn evaluate_document(
    input: &DocumentInput<'_>,
    nli: &dyn NliModel,
    logprob: Option<&dyn LogProbModel>,
    cutoff: f64,
) -> DocumentMetrics {
    let max_entailment = match max_entailment(input.rewrite, input.spec, nli) {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("{}: NLI unavailable: {e}", input.doc_id);
            None
        }
    };
    let pii = (!input.spec.pii_items().is_empty()).then(|| {
        let truth: Vec<String> = input.spec.pii_items().iter().map(|p| p.surface.clone()).collect();
        pii_match_scores(&extract_pii(input.rewrite, input.spec), &truth)
    });
    let perplexity = logprob.and_then(|m| match perplexity(input.rewrite, m) {
        Ok(p) => Some(p),
        Err(BackendError::Unsupported { .. }) => None,
        Err(e) => {
            log::warn!("{}: perplexity unavailable: {e}", input.doc_id);
            None
        }
    });
    DocumentMetrics {
        doc_id: input.doc_id.to_string(),
        max_entailment,
        private: max_entailment.map(|e| e < cutoff),
        rouge1_f: rouge1_f(input.rewrite, input.reference.unwrap_or(input.original)),
        pii,
        distinct2: distinct2_single(input.rewrite),
        perplexity,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub documents: usize,
    /// Percentage of NLI-scored documents judged private.
    pub privacy_nli_rate: Option<f64>,
    pub nli_failures: usize,
    pub rouge1_f: Option<f64>,
    pub pii_precision: Option<f64>,
    pub pii_f1: Option<f64>,
    pub distinct2: Option<f64>,
    /// `None` when no document could be scored.
    pub perplexity: Option<f64>,
    pub per_document: Vec<DocumentMetrics>,
}

fn mean<I: Iterator<Item = f64>>(it: I) -> Option<f64> {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricReport {
    /// Aggregates are means over the rows where each metric is available.
    pub fn aggregate(per_document: Vec<DocumentMetrics>) -> Self {
        let rows = &per_document;
        Self {
            documents: rows.len(),
            privacy_nli_rate: mean(rows.iter().filter_map(|r| r.private).map(|p| if p { 100.0 } else { 0.0 })),
            nli_failures: rows.iter().filter(|r| r.private.is_none()).count(),
            rouge1_f: mean(rows.iter().map(|r| r.rouge1_f)),
            pii_precision: mean(rows.iter().filter_map(|r| r.pii).map(|p| p.precision)),
            pii_f1: mean(rows.iter().filter_map(|r| r.pii).map(|p| p.f1)),
            distinct2: mean(rows.iter().map(|r| r.distinct2)),
            perplexity: mean(rows.iter().filter_map(|r| r.perplexity)),
            per_document,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric report serializes")
    }

    pub fn render_table(&self) -> String {
        let fmt_opt = |v: Option<f64>, digits: usize| match v {
            Some(x) => format!("{x:.digits$}"),
            None => "n/a".to_string(),
        };
        let headers = ["doc_id", "private", "max_entail", "rouge1_f", "pii_prec", "pii_f1", "distinct2", "ppl"];
        let mut rows: Vec<Vec<String>> = self
            .per_document
            .iter()
            .map(|r| {
                vec![
                    r.doc_id.clone(),
                    r.private.map(|p| if p { "yes" } else { "no" }.to_string()).unwrap_or_else(|| "n/a".into()),
                    fmt_opt(r.max_entailment, 4),
                    format!("{:.4}", r.rouge1_f),
                    fmt_opt(r.pii.map(|p| p.precision), 4),
                    fmt_opt(r.pii.map(|p| p.f1), 4),
                    format!("{:.4}", r.distinct2),
                    fmt_opt(r.perplexity, 2),
                ]
            })
            .collect();
        rows.push(vec![
            "MEAN".to_string(),
            fmt_opt(self.privacy_nli_rate, 2) + "%",
            String::new(),
            fmt_opt(self.rouge1_f, 4),
            fmt_opt(self.pii_precision, 4),
            fmt_opt(self.pii_f1, 4),
            fmt_opt(self.distinct2, 4),
            fmt_opt(self.perplexity, 2),
        ]);
        let mut out = render_table(&headers, &rows);
        if self.nli_failures > 0 {
            out.push_str(&format!("NLI failures: {}\n", self.nli_failures));
        }
        out
    }
}

impl AttackReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("attack report serializes")
    }

    pub fn render_table(&self) -> String {
        let asr = |v: Option<f64>| v.map(|x| format!("{:.2}%", 100.0 * x)).unwrap_or_else(|| "undefined".into());
        let rows = vec![
            vec!["asr_context_free".to_string(), asr(self.asr_context_free)],
            vec!["asr_contextual".to_string(), asr(self.asr_contextual)],
            vec!["aligned_pairs".to_string(), self.aligned_pairs.to_string()],
            vec!["differing_pairs".to_string(), self.differing_pairs.to_string()],
            vec!["sensitive_positions".to_string(), self.sensitive_positions.to_string()],
            vec!["unreachable".to_string(), self.unreachable.to_string()],
        ];
        render_table(&["metric", "value"], &rows)
    }
}

/// Left-aligned text table with a dashed header rule.
pub fn render_table<H: AsRef<str>>(headers: &[H], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.as_ref().chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i < widths.len() {
                widths[i] = widths[i].max(cell.chars().count());
            }
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(headers.iter().map(|h| h.as_ref()).collect());
    out.push_str(&line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect()));
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}
