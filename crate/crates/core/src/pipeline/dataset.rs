//! Line-delimited JSON datasets.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::PipelineError;
use crate::seed::sha256_hex;
use crate::types::{PiiItem, PrivacySpec};

/// Largest share of rejected lines a dataset may have before ingestion aborts.
pub const MAX_REJECT_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetRecord {
    pub doc_id: String,
    pub utterance: String,
    pub privacy_spec: PrivacySpec,
    pub reference_rewrite: Option<String>,
    pub masked_form: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    doc_id: Option<String>,
    utterance: Option<String>,
    persona: Option<String>,
    #[serde(default)]
    pii: Vec<PiiItem>,
    reference: Option<String>,
    masked: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub path: PathBuf,
    pub sha256: String,
    pub records: Vec<DatasetRecord>,
    pub rejects: Vec<Reject>,
}

fn parse_line(line: &str) -> Result<DatasetRecord, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))?;
    let doc_id = raw
        .doc_id
        .filter(|d| !d.trim().is_empty())
        .ok_or("missing doc_id")?;
    let utterance = raw
        .utterance
        .filter(|u| !u.trim().is_empty())
        .ok_or("missing utterance")?;
    let privacy_spec = PrivacySpec::new(doc_id.clone(), raw.persona, raw.pii).map_err(|e| e.to_string())?;
    Ok(DatasetRecord {
        doc_id,
        utterance,
        privacy_spec,
        reference_rewrite: raw.reference,
        masked_form: raw.masked,
    })
}

/// Parses dataset text. Rejected lines are collected with their 1-based line
/// numbers; too many of them abort the whole parse.
pub fn parse_dataset(text: &str) -> Result<(Vec<DatasetRecord>, Vec<Reject>), PipelineError> {
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let line_no = i + 1;
        match parse_line(line) {
            Ok(r) if !seen.insert(r.doc_id.clone()) => rejects.push(Reject {
                line: line_no,
                reason: format!("duplicate doc_id {:?}", r.doc_id),
            }),
            Ok(r) => records.push(r),
            Err(reason) => rejects.push(Reject { line: line_no, reason }),
        }
    }
    for r in &rejects {
        log::warn!("dataset line {}: {}", r.line, r.reason);
    }
    if total > 0 && rejects.len() as f64 > MAX_REJECT_FRACTION * total as f64 {
        return Err(PipelineError::TooManyRejects {
            rejected: rejects.len(),
            total,
            first: rejects
                .iter()
                .take(5)
                .map(|r| format!("line {}: {}", r.line, r.reason))
                .collect::<Vec<_>>()
                .join("; "),
        });
    }
    Ok((records, rejects))
}

pub fn ingest_dataset(path: &Path) -> Result<Dataset, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| PipelineError::Validation(format!("{} is not UTF-8", path.display())))?;
    let (records, rejects) = parse_dataset(&text)?;
    Ok(Dataset {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
        records,
        rejects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_lines_become_records() {
        let text = r#"{"doc_id":"a","utterance":"i drink scotch","persona":"I drink scotch."}
{"doc_id":"b","utterance":"hello","pii":[{"surface":"Ohio","category":"LOC"}]}

{"doc_id":"c","utterance":"x","persona":"p","reference":"r","masked":"[LOC]"}
"#;
        let (recs, rejects) = parse_dataset(text).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(rejects.is_empty());
        assert_eq!(recs[1].privacy_spec.pii_items()[0].category, "LOC");
        assert_eq!(recs[2].reference_rewrite.as_deref(), Some("r"));
        assert_eq!(recs[2].masked_form.as_deref(), Some("[LOC]"));
    }

    #[test]
    fn persona_and_pii_both_kept() {
        let text = r#"{"doc_id":"a","utterance":"u","persona":"I live in Ohio.","pii":[{"surface":"Ohio","category":"LOC"}]}"#;
        let (recs, _) = parse_dataset(text).unwrap();
        let spec = &recs[0].privacy_spec;
        assert_eq!(spec.persona_text(), Some("I live in Ohio."));
        assert_eq!(spec.pii_items().len(), 1);
        assert_eq!(spec.statements(), vec!["i live in ohio", "ohio"]);
    }

    #[test]
    fn rejects_carry_line_numbers() {
        let mut text = String::new();
        for i in 0..10 {
            text.push_str(&format!("{{\"doc_id\":\"d{i}\",\"utterance\":\"u\",\"persona\":\"p\"}}\n"));
        }
        text.push_str("{\"doc_id\":\"x\",\"persona\":\"p\"}\n");
        let (recs, rejects) = parse_dataset(&text).unwrap();
        assert_eq!(recs.len(), 10);
        assert_eq!(rejects, vec![Reject { line: 11, reason: "missing utterance".into() }]);
    }

    #[test]
    fn too_many_rejects_abort() {
        let text = "{\"doc_id\":\"a\",\"utterance\":\"u\",\"persona\":\"p\"}\n{\"doc_id\":\"a\",\"utterance\":\"u\",\"persona\":\"p\"}\nnot json\n";
        let err = parse_dataset(text).unwrap_err();
        assert!(matches!(err, PipelineError::TooManyRejects { rejected: 2, total: 3, .. }), "{err}");
        assert!(err.to_string().contains("line 2: duplicate doc_id"));
    }

    #[test]
    fn spec_is_required() {
        let mut text = "{\"doc_id\":\"a\",\"utterance\":\"u\"}\n".to_string();
        for i in 0..10 {
            text.push_str(&format!("{{\"doc_id\":\"b{i}\",\"utterance\":\"u\",\"persona\":\"p\"}}\n"));
        }
        let (recs, rejects) = parse_dataset(&text).unwrap();
        assert_eq!(recs.len(), 10);
        assert_eq!(rejects[0].line, 1);
        assert!(rejects[0].reason.contains("neither persona"));
    }
}
