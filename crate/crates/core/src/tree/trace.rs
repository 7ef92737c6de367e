//! Structured per-search export and a plain-text tree rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{SearchOutcome, SearchTree, StopReason, TerminalReason, Trajectory};
use crate::{actions::ActionKind, eval::Budget, text::digest};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTrace {
    pub id: usize,
    pub parent: Option<usize>,
    pub action: Option<ActionKind>,
    pub depth: usize,
    pub q_value: f64,
    pub visits: u64,
    pub terminal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_reason: Option<TerminalReason>,
    pub output_digest: String,
    pub output: String,
    pub children: Vec<usize>,
}

/// Everything one search produced: the whole tree and the candidate
/// trajectories with their scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub schema_version: u32,
    pub question: String,
    pub rollouts_completed: u32,
    pub stop: StopReason,
    pub budget: Budget,
    pub nodes: Vec<NodeTrace>,
    pub trajectories: Vec<Trajectory>,
}

impl SearchOutcome {
    pub fn trace(&self) -> SearchTrace {
        let nodes = self
            .tree
            .nodes()
            .iter()
            .map(|n| {
                let output = n.state.last_output().unwrap_or_default().to_owned();
                NodeTrace {
                    id: n.id,
                    parent: n.parent,
                    action: n.incoming_action,
                    depth: n.state.depth(),
                    q_value: n.q_value,
                    visits: n.visits,
                    terminal: n.terminal,
                    terminal_reason: n.terminal_reason,
                    output_digest: digest(&output),
                    output,
                    children: n.children.clone(),
                }
            })
            .collect();
        SearchTrace {
            schema_version: TRACE_SCHEMA_VERSION,
            question: self.tree.question.clone(),
            rollouts_completed: self.rollouts_completed,
            stop: self.stop,
            budget: self.budget,
            nodes,
            trajectories: self.trajectories.clone(),
        }
    }
}

const OUTPUT_WIDTH: usize = 72;

/// One line per node: action, Q, N and the output truncated to one line.
pub fn render_tree(tree: &SearchTree) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "ROOT  Q={:.3} N={}  {}",
        tree.root().q_value,
        tree.root().visits,
        truncate(&tree.question)
    );
    let mut stack: Vec<(usize, usize)> = tree.root().children.iter().rev().map(|c| (*c, 1)).collect();
    while let Some((id, indent)) = stack.pop() {
        let node = tree.node(id);
        let action = node.incoming_action.map(|a| a.name()).unwrap_or("ROOT");
        let marker = if node.terminal { " *" } else { "" };
        let _ = writeln!(
            out,
            "{}{action:<4} Q={:.3} N={}{marker}  {}",
            "  ".repeat(indent),
            node.q_value,
            node.visits,
            truncate(node.state.last_output().unwrap_or_default())
        );
        stack.extend(node.children.iter().rev().map(|c| (*c, indent + 1)));
    }
    out
}

fn truncate(text: &str) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= OUTPUT_WIDTH {
        flat
    } else {
        let cut: String = flat.chars().take(OUTPUT_WIDTH - 3).collect();
        format!("{cut}...")
    }
}
