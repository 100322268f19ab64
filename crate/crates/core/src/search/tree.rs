//! Arena-backed rewrite tree with UCT selection and running-mean backpropagation.

use serde::Serialize;

use crate::types::RewriteAction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewriteNode {
    pub id: NodeId,
    pub sentence_state: String,
    pub action_taken: Option<RewriteAction>,
    /// Running mean of backpropagated rewards (Q).
    pub mean_reward: f64,
    /// Number of backpropagations through this node (N).
    pub visit_count: u64,
    pub parent: Option<NodeId>,
    pub last_reward: Option<f64>,
    pub depth: usize,
    children: [Option<NodeId>; 2],
    /// No further rewrite of the current segment is possible from here.
    terminal: bool,
}

impl RewriteNode {
    pub fn child(&self, action: RewriteAction) -> Option<NodeId> {
        self.children[action.index()]
    }

    pub fn children(&self) -> impl Iterator<Item = (RewriteAction, NodeId)> + '_ {
        RewriteAction::ALL
            .into_iter()
            .filter_map(|a| self.children[a.index()].map(|c| (a, c)))
    }

    pub fn unexpanded_actions(&self) -> Vec<RewriteAction> {
        RewriteAction::ALL
            .into_iter()
            .filter(|a| self.children[a.index()].is_none())
            .collect()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.iter().all(Option::is_none)
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TreeError {
    #[error("node {0:?} already has a {1} child")]
    Occupied(NodeId, RewriteAction),
    #[error("path does not start at the root")]
    BadPath,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewriteTree {
    nodes: Vec<RewriteNode>,
}

impl RewriteTree {
    pub fn new(root_sentence: impl Into<String>) -> Self {
        Self {
            nodes: vec![RewriteNode {
                id: NodeId(0),
                sentence_state: root_sentence.into(),
                action_taken: None,
                mean_reward: 0.0,
                visit_count: 0,
                parent: None,
                last_reward: None,
                depth: 0,
                children: [None, None],
                terminal: false,
            }],
        }
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, id: NodeId) -> &RewriteNode {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[RewriteNode] {
        &self.nodes
    }

    pub fn add_child(
        &mut self,
        parent: NodeId,
        action: RewriteAction,
        sentence: impl Into<String>,
    ) -> Result<NodeId, TreeError> {
        if self.nodes[parent.0].children[action.index()].is_some() {
            return Err(TreeError::Occupied(parent, action));
        }
        let id = NodeId(self.nodes.len());
        let depth = self.nodes[parent.0].depth + 1;
        self.nodes.push(RewriteNode {
            id,
            sentence_state: sentence.into(),
            action_taken: Some(action),
            mean_reward: 0.0,
            visit_count: 0,
            parent: Some(parent),
            last_reward: None,
            depth,
            children: [None, None],
            terminal: false,
        });
        self.nodes[parent.0].children[action.index()] = Some(id);
        Ok(id)
    }

    pub fn set_last_reward(&mut self, id: NodeId, reward: f64) {
        self.nodes[id.0].last_reward = Some(reward);
    }

    /// Overwrites a node's statistics; for constructing trees in tests.
    pub fn set_stats(&mut self, id: NodeId, mean_reward: f64, visit_count: u64) {
        let n = &mut self.nodes[id.0];
        n.mean_reward = mean_reward;
        n.visit_count = visit_count;
    }

    pub fn mark_terminal(&mut self, id: NodeId) {
        self.nodes[id.0].terminal = true;
    }

    /// A node is closed when it is terminal or both of its children are closed.
    pub fn is_closed(&self, id: NodeId) -> bool {
        let n = &self.nodes[id.0];
        n.terminal
            || (n.children.iter().all(Option::is_some)
                && n.children.iter().flatten().all(|&c| self.is_closed(c)))
    }

    /// Root-to-node path.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur.0].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Non-root nodes without children; just the root when nothing was expanded.
    pub fn leaves(&self) -> Vec<NodeId> {
        let leaves: Vec<NodeId> = self
            .nodes
            .iter()
            .skip(1)
            .filter(|n| n.is_leaf())
            .map(|n| n.id)
            .collect();
        if leaves.is_empty() {
            vec![self.root()]
        } else {
            leaves
        }
    }

    /// Nodes that still have an unexpanded action and are not closed, in id order.
    pub fn expandable(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| !n.terminal && n.children.iter().any(Option::is_none))
            .map(|n| n.id)
            .collect()
    }
}

/// X̄ + c·sqrt(ln(parent_visits) / child_visits); +∞ for unvisited children.
pub fn uct_score(child_mean_reward: f64, child_visits: u64, parent_visits: u64, c: f64) -> f64 {
    if child_visits == 0 {
        return f64::INFINITY;
    }
    let parent = parent_visits.max(1) as f64;
    child_mean_reward + c * (parent.ln() / child_visits as f64).sqrt()
}

/// Walks from the root along argmax-UCT children until reaching a node with
/// an unexpanded action. Ties go to the earlier action (Delete before
/// Obscure). Closed subtrees are never entered.
pub fn select_leaf(tree: &RewriteTree, c: f64) -> Vec<NodeId> {
    let mut path = vec![tree.root()];
    let mut cur = tree.root();
    loop {
        let node = tree.node(cur);
        if !node.unexpanded_actions().is_empty() || node.terminal {
            return path;
        }
        let mut best: Option<(f64, NodeId)> = None;
        for (_, child) in node.children() {
            if tree.is_closed(child) {
                continue;
            }
            let ch = tree.node(child);
            let score = uct_score(ch.mean_reward, ch.visit_count, node.visit_count, c);
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, child));
            }
        }
        match best {
            Some((_, child)) => {
                path.push(child);
                cur = child;
            }
            None => return path,
        }
    }
}

/// Adds one visit with `reward` to every node on `path`.
pub fn backpropagate(tree: &mut RewriteTree, path: &[NodeId], reward: f64) -> Result<(), TreeError> {
    if path.first() != Some(&tree.root()) {
        return Err(TreeError::BadPath);
    }
    for id in path {
        let n = &mut tree.nodes[id.0];
        n.visit_count += 1;
        n.mean_reward += (reward - n.mean_reward) / n.visit_count as f64;
    }
    Ok(())
}
