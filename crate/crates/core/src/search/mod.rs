//! Per-segment tree search over delete/obscure rewrites, sequential chaining
//! across segments, and the ablation strategies that remove one ingredient
//! each.

pub mod tree;

use rand::Rng;
use serde::Serialize;
use std::fmt;
use std::str::FromStr;

use crate::alignment::{AlignedSegment, AlignmentResult};
use crate::eval::metrics::token_edit_distance;
use crate::rewriter::{one_step_rewrite, RewriteContext, RewriteError};
use crate::text::{contains_phrase, tokenize};
use crate::types::RewriteAction;
pub use tree::{backpropagate, select_leaf, uct_score, NodeId, RewriteNode, RewriteTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    /// UCT-guided tree search per segment.
    Tree,
    /// One rewrite of the whole sentence covering every segment.
    OneStep,
    /// Tree search with uniform instead of UCT node selection.
    Random,
    /// A single route, always extending the newest node.
    Greedy,
    /// One rewrite per segment, no refinement.
    Chain,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Tree,
        StrategyKind::OneStep,
        StrategyKind::Random,
        StrategyKind::Greedy,
        StrategyKind::Chain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Tree => "tree",
            StrategyKind::OneStep => "one-step",
            StrategyKind::Random => "random",
            StrategyKind::Greedy => "greedy",
            StrategyKind::Chain => "chain",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown strategy {s:?} (expected tree|one-step|random|greedy|chain)"))
    }
}

/// One successful expansion. Serialized field names are part of the trace
/// file format.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Expansion {
    /// Root-to-new-node path.
    pub path: Vec<NodeId>,
    pub action: RewriteAction,
    pub text: String,
    pub reward: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionFailure {
    pub path: Vec<NodeId>,
    pub action: RewriteAction,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchTrace {
    /// Targets of this search; one segment except for one-step rewrites.
    pub segments: Vec<AlignedSegment>,
    pub root_sentence: String,
    pub expansions: Vec<Expansion>,
    pub failures: Vec<ExpansionFailure>,
    pub terminated_early: bool,
    pub best_leaf_text: String,
    pub best_leaf_reward: Option<f64>,
    /// Every attempted expansion failed; the root sentence is passed through.
    pub degraded: bool,
    /// The segment no longer occurs in the working sentence.
    pub skipped: bool,
}

impl SearchTrace {
    fn passthrough(segments: Vec<AlignedSegment>, sentence: &str, skipped: bool) -> Self {
        Self {
            segments,
            root_sentence: sentence.to_string(),
            expansions: Vec::new(),
            failures: Vec::new(),
            terminated_early: false,
            best_leaf_text: sentence.to_string(),
            best_leaf_reward: None,
            degraded: false,
            skipped,
        }
    }
}

/// How the next node to expand is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    Uct,
    Uniform,
    Route,
}

fn failure_is_structural(e: &RewriteError) -> bool {
    matches!(e, RewriteError::SegmentNotFound(_) | RewriteError::NoSegments)
}

/// Runs tree search for one segment and returns the trace and the final tree.
pub fn search_segment_with_tree<R: Rng + ?Sized>(
    ctx: &RewriteContext<'_>,
    sentence: &str,
    segment: &AlignedSegment,
    selection: Selection,
    rng: &mut R,
) -> (SearchTrace, RewriteTree) {
    let cfg = ctx.cfg;
    let segments = std::slice::from_ref(segment);
    let mut tree = RewriteTree::new(sentence);
    let mut trace = SearchTrace::passthrough(segments.to_vec(), sentence, false);
    // Failed expansions do not consume budget but are capped.
    let max_attempts = cfg.tree_budget * 2;
    let mut attempts = 0;
    let mut tip = tree.root();
    // Per-action (sum, count) of oriented rewards along the greedy route.
    let mut route_stats = [(0.0f64, 0u32); 2];

    while trace.expansions.len() < cfg.tree_budget && attempts < max_attempts {
        if tree.is_closed(tree.root()) {
            break;
        }
        attempts += 1;
        let (mut path, action) = match selection {
            Selection::Uct => {
                let path = select_leaf(&tree, cfg.uct_constant);
                let leaf = tree.node(*path.last().expect("path has the root"));
                match leaf.unexpanded_actions().first() {
                    Some(&a) if !leaf.is_terminal() => (path, a),
                    _ => break,
                }
            }
            Selection::Uniform => {
                let open = tree.expandable();
                if open.is_empty() {
                    break;
                }
                let node = open[rng.random_range(0..open.len())];
                let actions = tree.node(node).unexpanded_actions();
                let a = actions[rng.random_range(0..actions.len())];
                (tree.path_to(node), a)
            }
            Selection::Route => {
                if tree.node(tip).is_terminal() {
                    break;
                }
                // Untried actions first, then the best mean reward so far.
                let a = RewriteAction::ALL
                    .into_iter()
                    .find(|a| route_stats[a.index()].1 == 0)
                    .unwrap_or_else(|| {
                        let mean = |a: RewriteAction| {
                            let (s, n) = route_stats[a.index()];
                            s / f64::from(n)
                        };
                        if mean(RewriteAction::Obscure) > mean(RewriteAction::Delete) {
                            RewriteAction::Obscure
                        } else {
                            RewriteAction::Delete
                        }
                    });
                (tree.path_to(tip), a)
            }
        };
        let leaf = *path.last().expect("path has the root");
        let state = tree.node(leaf).sentence_state.clone();
        match one_step_rewrite(ctx, &state, segments, action, rng) {
            Err(e) => {
                if failure_is_structural(&e) {
                    tree.mark_terminal(leaf);
                }
                log::debug!("expansion of {leaf:?} with {action} failed: {e}");
                trace.failures.push(ExpansionFailure {
                    path,
                    action,
                    error: e.to_string(),
                });
            }
            Ok(set) => {
                let chosen = set.chosen();
                let reward = chosen.gate_score;
                let child = tree
                    .add_child(leaf, action, chosen.text.clone())
                    .expect("selected action slot is free");
                tree.set_last_reward(child, reward);
                path.push(child);
                backpropagate(&mut tree, &path, cfg.gate_direction.orient(reward))
                    .expect("path starts at the root");
                if !contains_phrase(&chosen.text, segment.surface()) {
                    tree.mark_terminal(child);
                }
                let slot = &mut route_stats[action.index()];
                slot.0 += cfg.gate_direction.orient(reward);
                slot.1 += 1;
                tip = child;
                let accepted = cfg.accepts(reward);
                trace.expansions.push(Expansion {
                    path,
                    action,
                    text: chosen.text.clone(),
                    reward,
                    accepted,
                });
                if accepted {
                    trace.terminated_early = true;
                    break;
                }
            }
        }
    }

    if trace.expansions.is_empty() {
        trace.degraded = !trace.failures.is_empty();
        return (trace, tree);
    }
    let root_tokens = tokenize(sentence);
    let mut best: Option<(f64, usize, NodeId)> = None;
    for id in tree.leaves() {
        let node = tree.node(id);
        let Some(r) = node.last_reward else { continue };
        let edits = token_edit_distance(&root_tokens, &tokenize(&node.sentence_state));
        let better = match best {
            None => true,
            Some((br, be, _)) => {
                cfg.gate_direction.better(r, br) || (r == br && edits < be)
            }
        };
        if better {
            best = Some((r, edits, id));
        }
    }
    if let Some((r, _, id)) = best {
        trace.best_leaf_text = tree.node(id).sentence_state.clone();
        trace.best_leaf_reward = Some(r);
    }
    (trace, tree)
}

/// UCT tree search for one segment.
pub fn search_segment<R: Rng + ?Sized>(
    ctx: &RewriteContext<'_>,
    sentence: &str,
    segment: &AlignedSegment,
    rng: &mut R,
) -> SearchTrace {
    search_segment_with_tree(ctx, sentence, segment, Selection::Uct, rng).0
}

/// A single rewrite call over `segments`, wrapped as a one-expansion trace.
fn single_rewrite<R: Rng + ?Sized>(
    ctx: &RewriteContext<'_>,
    sentence: &str,
    segments: &[AlignedSegment],
    rng: &mut R,
) -> SearchTrace {
    let action = RewriteAction::Delete;
    let mut trace = SearchTrace::passthrough(segments.to_vec(), sentence, false);
    match one_step_rewrite(ctx, sentence, segments, action, rng) {
        Ok(set) => {
            let chosen = set.chosen();
            trace.expansions.push(Expansion {
                path: vec![NodeId(0), NodeId(1)],
                action,
                text: chosen.text.clone(),
                reward: chosen.gate_score,
                accepted: ctx.cfg.accepts(chosen.gate_score),
            });
            trace.best_leaf_text = chosen.text.clone();
            trace.best_leaf_reward = Some(chosen.gate_score);
        }
        Err(e) => {
            trace.failures.push(ExpansionFailure {
                path: vec![NodeId(0)],
                action,
                error: e.to_string(),
            });
            trace.degraded = true;
        }
    }
    trace
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocumentRewrite {
    pub final_text: String,
    pub traces: Vec<SearchTrace>,
}

/// Rewrites one sentence-level utterance segment by segment, left to right.
/// Each segment's accepted rewrite becomes the input for the next.
pub fn rewrite_document<R: Rng + ?Sized>(
    ctx: &RewriteContext<'_>,
    text: &str,
    alignment: &AlignmentResult,
    strategy: StrategyKind,
    rng: &mut R,
) -> DocumentRewrite {
    let segments = &alignment.segments;
    if segments.is_empty() {
        return DocumentRewrite {
            final_text: text.to_string(),
            traces: Vec::new(),
        };
    }
    if strategy == StrategyKind::OneStep {
        let trace = single_rewrite(ctx, text, segments, rng);
        return DocumentRewrite {
            final_text: trace.best_leaf_text.clone(),
            traces: vec![trace],
        };
    }
    let mut working = text.to_string();
    let mut traces = Vec::with_capacity(segments.len());
    for seg in segments {
        let trace = if !contains_phrase(&working, seg.surface()) {
            SearchTrace::passthrough(vec![seg.clone()], &working, true)
        } else {
            match strategy {
                StrategyKind::Tree => search_segment(ctx, &working, seg, rng),
                StrategyKind::Random => {
                    search_segment_with_tree(ctx, &working, seg, Selection::Uniform, rng).0
                }
                StrategyKind::Greedy => {
                    search_segment_with_tree(ctx, &working, seg, Selection::Route, rng).0
                }
                StrategyKind::Chain => single_rewrite(ctx, &working, std::slice::from_ref(seg), rng),
                StrategyKind::OneStep => unreachable!("handled above"),
            }
        };
        working = trace.best_leaf_text.clone();
        traces.push(trace);
    }
    DocumentRewrite {
        final_text: working,
        traces,
    }
}

/// One JSON object per expansion with fields `path`, `action`, `text`,
/// `reward`, `accepted`.
pub fn traces_to_jsonl(traces: &[SearchTrace]) -> String {
    let mut out = String::new();
    for t in traces {
        for e in &t.expansions {
            out.push_str(&serde_json::to_string(e).expect("expansions serialize"));
            out.push('\n');
        }
    }
    out
}
