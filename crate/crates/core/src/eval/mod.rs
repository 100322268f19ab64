//! Evaluation: text metrics, the reconstruction attack and cost analysis.

pub mod attack;
pub mod cost;
pub mod metrics;
pub mod report;

pub use attack::{attack_success_rate, AttackMode, AttackReport, ChannelModel};
pub use cost::{cost_efficiency, CostInputs};
pub use metrics::{align_tokens, distinct2, perplexity, pii_match_scores, privacy_nli_rate, rouge1_f};
pub use report::{DocumentMetrics, MetricReport};
