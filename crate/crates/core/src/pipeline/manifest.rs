//! Run manifests, self-audit and report emission.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::PipelineError;
use crate::eval::cost::CostInputs;
use crate::eval::report::render_table;
use crate::eval::{AttackReport, MetricReport};
use crate::seed::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub strategy: String,
    /// Every setting that influences outputs, as canonical strings.
    pub config: BTreeMap<String, String>,
    pub config_hash: String,
    pub dataset_path: String,
    pub dataset_hash: String,
    pub backends: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: String,
    pub documents: usize,
    pub skipped: usize,
    pub skipped_ids: Vec<String>,
    pub rewrites_file: String,
    pub metrics_file: String,
    #[serde(default)]
    pub attack_file: Option<String>,
    /// doc_id → trace path, relative to the run directory.
    pub trace_files: BTreeMap<String, String>,
    /// Relative path → SHA-256 of every output file.
    pub files: BTreeMap<String, String>,
    #[serde(default)]
    pub cost: Option<CostInputs>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Validation(format!("{}: invalid manifest: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

/// Accepts either a manifest file or the run directory holding one.
pub fn resolve_manifest(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join(MANIFEST_FILE), path.to_path_buf())
    } else {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (path.to_path_buf(), dir)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AuditIssue {
    Missing { path: String },
    Mismatch { path: String, expected: String, actual: String },
}

/// Recomputes every recorded hash.
pub fn audit(manifest_path: &Path) -> Result<Vec<AuditIssue>, PipelineError> {
    let (manifest_path, dir) = resolve_manifest(manifest_path);
    let manifest = RunManifest::load(&manifest_path)?;
    let mut issues = Vec::new();
    let referenced = manifest
        .trace_files
        .values()
        .chain([&manifest.rewrites_file, &manifest.metrics_file])
        .chain(manifest.attack_file.iter());
    for rel in referenced {
        if !manifest.files.contains_key(rel) {
            issues.push(AuditIssue::Mismatch {
                path: rel.clone(),
                expected: "a recorded hash".into(),
                actual: "none".into(),
            });
        }
    }
    for (rel, expected) in &manifest.files {
        match std::fs::read(dir.join(rel)) {
            Ok(bytes) => {
                let actual = sha256_hex(&bytes);
                if &actual != expected {
                    issues.push(AuditIssue::Mismatch {
                        path: rel.clone(),
                        expected: expected.clone(),
                        actual,
                    });
                }
            }
            Err(_) => issues.push(AuditIssue::Missing { path: rel.clone() }),
        }
    }
    Ok(issues)
}

#[derive(Debug, Clone, Serialize)]
pub struct CostSection {
    pub inputs: CostInputs,
    /// `None` when both costs are equal.
    pub efficiency: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmittedReport {
    pub strategy: String,
    pub documents: usize,
    pub skipped: usize,
    pub metrics: MetricReport,
    pub attack: Option<AttackReport>,
    pub cost: Option<CostSection>,
    #[serde(skip)]
    pub text: String,
}

impl EmittedReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingFile(path.display().to_string()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))
}

/// Renders the reports of a finished run. `cost` overrides the cost inputs
/// recorded in the manifest.
pub fn emit_report(manifest_path: &Path, cost: Option<CostInputs>) -> Result<EmittedReport, PipelineError> {
    let (manifest_path, dir) = resolve_manifest(manifest_path);
    let manifest = RunManifest::load(&manifest_path)?;
    if manifest.documents == 0 {
        return Err(PipelineError::NoDocuments);
    }
    for rel in manifest.trace_files.values() {
        let p = dir.join(rel);
        if !p.exists() {
            return Err(PipelineError::MissingFile(p.display().to_string()));
        }
    }
    let metrics: MetricReport = read_json(&dir.join(&manifest.metrics_file))?;
    let attack: Option<AttackReport> = match &manifest.attack_file {
        Some(rel) => Some(read_json(&dir.join(rel))?),
        None => None,
    };
    let cost = cost.or(manifest.cost).map(|inputs| CostSection {
        inputs,
        efficiency: inputs.efficiency().ok(),
    });

    let mut text = format!(
        "strategy: {}\ndocuments: {} (skipped {})\n\n{}",
        manifest.strategy,
        manifest.documents,
        manifest.skipped,
        metrics.render_table()
    );
    if let Some(a) = &attack {
        text.push_str("\nreconstruction attack\n");
        text.push_str(&a.render_table());
    }
    if let Some(c) = &cost {
        let eff = c
            .efficiency
            .map(|e| format!("{e:.1}"))
            .unwrap_or_else(|| "undefined".into());
        let rows = vec![vec![
            format!("{:.2}", c.inputs.p_ours),
            format!("{:.2}", c.inputs.p_base),
            format!("{:.3}", c.inputs.c_ours),
            format!("{:.3}", c.inputs.c_base),
            eff,
        ]];
        text.push_str("\ncost efficiency (points per unit cost)\n");
        text.push_str(&render_table(&["p_ours", "p_base", "c_ours", "c_base", "efficiency"], &rows));
    }
    Ok(EmittedReport {
        strategy: manifest.strategy,
        documents: manifest.documents,
        skipped: manifest.skipped,
        metrics,
        attack,
        cost,
        text,
    })
}
