use serde::{Deserialize, Serialize};
use std::fmt;

use crate::text::{normalize, split_sentences, tokenize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TypeError {
    #[error("privacy spec {0:?} has neither persona text nor PII items")]
    EmptySpec(String),
    #[error("privacy spec {0:?} contains a blank PII surface")]
    BlankPii(String),
    #[error("utterance {0:?} is empty")]
    EmptyUtterance(String),
}

/// One entry of a user's PII list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiItem {
    pub surface: String,
    #[serde(default)]
    pub category: String,
}

impl PiiItem {
    pub fn new(surface: impl Into<String>, category: impl Into<String>) -> Self {
        Self {
            surface: surface.into(),
            category: category.into(),
        }
    }
}

/// What must not leak: persona sentences and/or a PII list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrivacySpec {
    spec_id: String,
    persona_text: Option<String>,
    pii_items: Vec<PiiItem>,
}

impl PrivacySpec {
    pub fn new(
        spec_id: impl Into<String>,
        persona_text: Option<String>,
        pii_items: Vec<PiiItem>,
    ) -> Result<Self, TypeError> {
        let spec_id = spec_id.into();
        let persona_text = persona_text.filter(|p| !p.trim().is_empty());
        if pii_items.iter().any(|p| p.surface.trim().is_empty()) {
            return Err(TypeError::BlankPii(spec_id));
        }
        if persona_text.is_none() && pii_items.is_empty() {
            return Err(TypeError::EmptySpec(spec_id));
        }
        Ok(Self {
            spec_id,
            persona_text,
            pii_items,
        })
    }

    pub fn from_persona(spec_id: impl Into<String>, persona: impl Into<String>) -> Result<Self, TypeError> {
        Self::new(spec_id, Some(persona.into()), Vec::new())
    }

    pub fn from_pii<S: AsRef<str>>(spec_id: impl Into<String>, surfaces: &[S]) -> Result<Self, TypeError> {
        let items = surfaces
            .iter()
            .map(|s| PiiItem::new(s.as_ref(), ""))
            .collect();
        Self::new(spec_id, None, items)
    }

    pub fn spec_id(&self) -> &str {
        &self.spec_id
    }

    pub fn persona_text(&self) -> Option<&str> {
        self.persona_text.as_deref()
    }

    pub fn pii_items(&self) -> &[PiiItem] {
        &self.pii_items
    }

    /// The individual statements of the spec: each persona sentence followed
    /// by each PII surface, normalized. Alignment scores against these and
    /// NLI uses them as hypotheses.
    pub fn statements(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .persona_text
            .as_deref()
            .map(split_sentences)
            .unwrap_or_default()
            .iter()
            .map(|s| normalize(s))
            .filter(|s| !s.is_empty())
            .collect();
        out.extend(
            self.pii_items
                .iter()
                .map(|p| normalize(&p.surface))
                .filter(|s| !s.is_empty()),
        );
        out
    }
}

/// A piece of user text together with its tokenization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Utterance {
    doc_id: String,
    text: String,
    tokens: Vec<String>,
}

impl Utterance {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Result<Self, TypeError> {
        let doc_id = doc_id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TypeError::EmptyUtterance(doc_id));
        }
        let tokens = tokenize(&text);
        Ok(Self {
            doc_id,
            text,
            tokens,
        })
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// The two rewrite moves available at every search node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewriteAction {
    Delete,
    Obscure,
}

impl RewriteAction {
    /// Canonical order; also the tie-break order during selection.
    pub const ALL: [RewriteAction; 2] = [RewriteAction::Delete, RewriteAction::Obscure];

    pub fn index(self) -> usize {
        match self {
            RewriteAction::Delete => 0,
            RewriteAction::Obscure => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RewriteAction::Delete => "delete",
            RewriteAction::Obscure => "obscure",
        }
    }
}

impl fmt::Display for RewriteAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
