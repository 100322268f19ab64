//! Privacy-aware rewriting of user text by tree search over delete/obscure edits.

pub mod alignment;
pub mod backends;
pub mod config;
pub mod eval;
pub mod rewriter;
pub mod search;
pub mod pipeline;
pub mod seed;
pub mod text;
pub mod types;

pub use alignment::{align_segments, AlignedSegment, AlignmentResult};
pub use backends::{Backends, ScorerSpec};
pub use config::{GateDirection, SearchConfig};
pub use search::{rewrite_document, StrategyKind};
pub use types::{PiiItem, PrivacySpec, RewriteAction, Utterance};
