//! Monte Carlo Tree Search over reasoning states.
//!
//! Each rollout descends from the root with UCT, expanding every frontier
//! node it meets (all legal actions, all sampled outputs, duplicates pruned)
//! until it reaches a terminal node. The leaf reward is then added to every
//! node on the path. `Q` is cumulative, so the exploitation term is `Q / N`.

mod state;
mod trace;

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use state::{normalize_state_text, ReasoningState, Step};
pub use trace::{render_tree, NodeTrace, SearchTrace, TRACE_SCHEMA_VERSION};

use crate::{
    actions::{execute_action, is_terminal, legal_actions, ActionConfig, ActionError, ActionKind, Mode},
    clients::{ClientError, Clients},
    eval::{Budget, BudgetExhausted},
    verify::{leaf_reward, training_reward, Verifier},
};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    /// The path ends in an SA step.
    Answered,
    /// The depth cap was reached without SA.
    DepthLimit,
    /// Expansion produced no children (every sample was empty or declined).
    DeadEnd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    pub state: ReasoningState,
    pub incoming_action: Option<ActionKind>,
    /// Cumulative reward.
    pub q_value: f64,
    pub visits: u64,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
    pub terminal: bool,
    pub terminal_reason: Option<TerminalReason>,
    pub expanded: bool,
    /// Reward assigned when the node was created as (or became) terminal.
    pub leaf_reward: Option<f64>,
}

impl TreeNode {
    /// Monte Carlo value estimate `Q / N`, zero for unvisited nodes.
    pub fn mean_value(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.q_value / self.visits as f64
        }
    }
}

/// Arena of nodes for one question. Node ids are indices and increase in
/// creation order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchTree {
    pub question: String,
    nodes: Vec<TreeNode>,
}

impl SearchTree {
    pub fn new(question: impl Into<String>) -> Self {
        let root = TreeNode {
            id: 0,
            state: ReasoningState::root(),
            incoming_action: None,
            q_value: 0.0,
            visits: 0,
            children: Vec::new(),
            parent: None,
            terminal: false,
            terminal_reason: None,
            expanded: false,
            leaf_reward: None,
        };
        Self {
            question: question.into(),
            nodes: vec![root],
        }
    }

    pub const ROOT: NodeId = 0;

    pub fn root(&self) -> &TreeNode {
        &self.nodes[Self::ROOT]
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut TreeNode {
        &mut self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids from the root down to `id`, inclusive.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(parent) = self.nodes[cur].parent {
            path.push(parent);
            cur = parent;
        }
        path.reverse();
        path
    }

    pub fn add_child(
        &mut self,
        parent: NodeId,
        state: ReasoningState,
        terminal_reason: Option<TerminalReason>,
        leaf_reward: Option<f64>,
    ) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            id,
            incoming_action: state.last_action(),
            state,
            q_value: 0.0,
            visits: 0,
            children: Vec::new(),
            parent: Some(parent),
            terminal: terminal_reason.is_some(),
            terminal_reason,
            expanded: false,
            leaf_reward,
        });
        self.nodes[parent].children.push(id);
        id
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("UCT is undefined for an unvisited node")]
    UnvisitedNode,
    #[error("parent visit count must be at least 1")]
    InvalidParentVisits,
    #[error("node {0} has no children to select from")]
    Leaf(NodeId),
    #[error("node {0} is not terminal")]
    NotTerminal(NodeId),
}

/// `q / visits + w * sqrt(ln(parent_visits) / visits)`.
pub fn uct_value(q: f64, visits: u64, parent_visits: u64, w: f64) -> Result<f64, TreeError> {
    if visits == 0 {
        return Err(TreeError::UnvisitedNode);
    }
    if parent_visits == 0 {
        return Err(TreeError::InvalidParentVisits);
    }
    let n = visits as f64;
    Ok(q / n + w * ((parent_visits as f64).ln() / n).sqrt())
}

/// Picks a child of `node`: a uniformly random unvisited child if any exist,
/// otherwise the UCT maximiser with exact ties going to the lowest id.
pub fn select(
    tree: &SearchTree,
    node: NodeId,
    w: f64,
    rng: &mut impl Rng,
) -> Result<NodeId, TreeError> {
    let parent = tree.node(node);
    if parent.children.is_empty() {
        return Err(TreeError::Leaf(node));
    }
    let unvisited: Vec<NodeId> = parent
        .children
        .iter()
        .copied()
        .filter(|c| tree.node(*c).visits == 0)
        .collect();
    if !unvisited.is_empty() {
        return Ok(unvisited[rng.gen_range(0..unvisited.len())]);
    }
    let mut best: Option<(NodeId, f64)> = None;
    for &child in &parent.children {
        let c = tree.node(child);
        let value = uct_value(c.q_value, c.visits, parent.visits.max(1), w)?;
        let better = match best {
            None => true,
            Some((best_id, best_value)) => value > best_value || (value == best_value && child < best_id),
        };
        if better {
            best = Some((child, value));
        }
    }
    Ok(best.map(|(id, _)| id).expect("children is nonempty"))
}

/// Adds `reward` to Q and one to N for every node from the root to `leaf`.
pub fn backpropagate(tree: &mut SearchTree, leaf: NodeId, reward: f64) -> Result<(), TreeError> {
    if !tree.node(leaf).terminal {
        return Err(TreeError::NotTerminal(leaf));
    }
    for id in tree.path_to(leaf) {
        let node = tree.node_mut(id);
        node.q_value += reward;
        node.visits += 1;
    }
    Ok(())
}

/// Keeps the first state for each normalised final output text.
pub fn prune_duplicate_states(children: Vec<ReasoningState>) -> Vec<ReasoningState> {
    let mut seen = HashSet::new();
    children
        .into_iter()
        .filter(|s| seen.insert(normalize_state_text(s.last_output().unwrap_or_default())))
        .collect()
}

/// Keeps the first trajectory for each normalised state sequence.
pub fn dedup_trajectories(trajs: Vec<Trajectory>) -> Vec<Trajectory> {
    let mut seen = HashSet::new();
    trajs
        .into_iter()
        .filter(|t| seen.insert(t.state_key()))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub rollouts: u32,
    pub exploration_weight: f64,
    pub actions: ActionConfig,
    /// Input-token budget across all rollouts of one question.
    pub l_max: u64,
    pub rng_seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            rollouts: 4,
            exploration_weight: std::f64::consts::SQRT_2,
            actions: ActionConfig::default(),
            l_max: 128_000,
            rng_seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn max_depth(&self) -> usize {
        self.actions.max_depth
    }

    pub fn mode(&self) -> Mode {
        self.actions.mode
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.rollouts == 0 {
            return Err("rollouts must be at least 1".into());
        }
        if !(self.exploration_weight > 0.0 && self.exploration_weight.is_finite()) {
            return Err(format!(
                "exploration_weight must be positive, got {}",
                self.exploration_weight
            ));
        }
        if self.l_max == 0 {
            return Err("l_max must be positive".into());
        }
        self.actions.validate()
    }
}

/// How terminal nodes are rewarded.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum RewardSource {
    /// 1.0 for a single SA sample, Jaccard consensus across several.
    #[default]
    SelfConsistency,
    /// 1.0 if the answer covers a gold answer, else 0.0 (synthesis mode).
    Gold(Vec<String>),
}

impl RewardSource {
    fn rewards(&self, answers: &[String]) -> Vec<f64> {
        match self {
            Self::SelfConsistency => leaf_reward(answers, answers.len()),
            Self::Gold(gold) => answers.iter().map(|a| training_reward(a, gold)).collect(),
        }
    }
}

/// A root-to-terminal path with its answer and verification scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Index of the rollout that produced it.
    pub id: usize,
    pub node_ids: Vec<NodeId>,
    pub steps: Vec<Step>,
    pub answer: String,
    pub terminal_reason: TerminalReason,
    pub reward: f64,
    /// `Q / N` of each non-root node on the path, taken when the search ended.
    #[serde(default)]
    pub node_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jcd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rm: Option<f64>,
}

impl Trajectory {
    /// Normalised output of every step, in order.
    pub fn state_key(&self) -> Vec<String> {
        self.steps
            .iter()
            .map(|s| normalize_state_text(&s.output))
            .collect()
    }

    pub fn actions(&self) -> Vec<ActionKind> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Budget(#[from] BudgetExhausted),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("action failed: {0}")]
    Action(String),
}

impl From<ActionError> for RolloutError {
    fn from(err: ActionError) -> Self {
        match err {
            ActionError::Budget(e) => Self::Budget(e),
            ActionError::Client(e) => Self::Client(e),
            other => Self::Action(other.to_string()),
        }
    }
}

/// Creates the children of `node`: every legal action, every non-empty
/// sample, siblings deduplicated on normalised output text. Children are
/// ordered by action (A1..A5) then sample index. On error the node is left
/// unexpanded with no children.
pub fn expand(
    tree: &mut SearchTree,
    node: NodeId,
    config: &SearchConfig,
    clients: &Clients,
    budget: &mut Budget,
    reward: &RewardSource,
) -> Result<Vec<NodeId>, RolloutError> {
    let state = tree.node(node).state.clone();
    let question = tree.question.clone();
    let mut candidates: Vec<ReasoningState> = Vec::new();
    let mut rewards: Vec<Option<f64>> = Vec::new();
    for action in legal_actions(&state, &config.actions)? {
        let outputs = match execute_action(action, &state, &question, &config.actions, clients, budget) {
            Ok(outputs) => outputs,
            Err(ActionError::MissingContext(kind)) => {
                log::debug!("skipping {kind}: no context available");
                continue;
            }
            Err(err) => return Err(err.into()),
        };
        let children: Vec<ReasoningState> = outputs
            .into_iter()
            .map(|out| {
                let step = Step {
                    action: out.action,
                    query: out.query,
                    prompt_digest: out.prompt_digest,
                    output: out.output,
                    doc_ids: out.doc_ids,
                };
                state.extend(step, out.tokens_in)
            })
            .collect();
        let group_rewards = if children.iter().any(|c| is_terminal(c, &config.actions)) {
            let answers: Vec<String> = children.iter().map(ReasoningState::extract_answer).collect();
            reward.rewards(&answers).into_iter().map(Some).collect()
        } else {
            vec![None; children.len()]
        };
        candidates.extend(children);
        rewards.extend(group_rewards);
    }

    let mut seen = HashSet::new();
    let mut created = Vec::new();
    for (child, reward_value) in candidates.into_iter().zip(rewards) {
        if !seen.insert(normalize_state_text(child.last_output().unwrap_or_default())) {
            continue;
        }
        let reason = terminal_reason(&child, &config.actions);
        created.push(tree.add_child(node, child, reason, reward_value));
    }
    tree.node_mut(node).expanded = true;
    Ok(created)
}

fn terminal_reason(state: &ReasoningState, config: &ActionConfig) -> Option<TerminalReason> {
    if state.last_action() == Some(ActionKind::Sa) {
        Some(TerminalReason::Answered)
    } else if state.depth() >= config.max_depth {
        Some(TerminalReason::DepthLimit)
    } else {
        None
    }
}

/// One rollout: select/expand from the root to a terminal node, then
/// backpropagate that node's reward.
pub fn run_rollout(
    tree: &mut SearchTree,
    rollout_id: usize,
    config: &SearchConfig,
    clients: &Clients,
    budget: &mut Budget,
    rng: &mut impl Rng,
    reward: &RewardSource,
) -> Result<Trajectory, RolloutError> {
    let mut node = SearchTree::ROOT;
    loop {
        if tree.node(node).terminal {
            break;
        }
        if !tree.node(node).expanded {
            let children = expand(tree, node, config, clients, budget, reward)?;
            if children.is_empty() && tree.node(node).children.is_empty() {
                let answer = tree.node(node).state.extract_answer();
                let value = reward.rewards(&[answer])[0];
                let n = tree.node_mut(node);
                n.terminal = true;
                n.terminal_reason = Some(TerminalReason::DeadEnd);
                n.leaf_reward = Some(value);
                break;
            }
        }
        node = select(tree, node, config.exploration_weight, rng)?;
    }
    let leaf = tree.node(node);
    let reward_value = leaf.leaf_reward.unwrap_or(0.0);
    let trajectory = Trajectory {
        id: rollout_id,
        node_ids: tree.path_to(node),
        steps: leaf.state.steps.clone(),
        answer: leaf.state.extract_answer(),
        terminal_reason: leaf.terminal_reason.unwrap_or(TerminalReason::DeadEnd),
        reward: reward_value,
        node_values: Vec::new(),
        jcd: None,
        emb: None,
        rm: None,
    };
    backpropagate(tree, node, reward_value)?;
    Ok(trajectory)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    BudgetExhausted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub tree: SearchTree,
    /// Deduplicated candidate trajectories in rollout order.
    pub trajectories: Vec<Trajectory>,
    pub rollouts_completed: u32,
    pub stop: StopReason,
    pub budget: Budget,
    /// Rollouts abandoned because a backend failed.
    pub errors: Vec<String>,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("question is empty")]
    EmptyQuestion,
    #[error("first rollout failed: {0}")]
    FirstRollout(ClientError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("{0}")]
    Action(String),
}

/// Runs `config.rollouts` rollouts with self-consistency rewards and attaches
/// verification scores to the deduplicated trajectories.
pub fn search(
    question: &str,
    config: &SearchConfig,
    clients: &Clients,
    verifier: &Verifier,
) -> Result<SearchOutcome, SearchError> {
    search_with_reward(question, config, clients, verifier, &RewardSource::SelfConsistency)
}

pub fn search_with_reward(
    question: &str,
    config: &SearchConfig,
    clients: &Clients,
    verifier: &Verifier,
    reward: &RewardSource,
) -> Result<SearchOutcome, SearchError> {
    config.validate().map_err(SearchError::Config)?;
    if question.trim().is_empty() {
        return Err(SearchError::EmptyQuestion);
    }
    let mut tree = SearchTree::new(question);
    let mut budget = Budget::new(config.l_max);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut collected = Vec::new();
    let mut errors = Vec::new();
    let mut stop = StopReason::Completed;
    let mut completed = 0;
    for rollout in 0..config.rollouts as usize {
        match run_rollout(&mut tree, rollout, config, clients, &mut budget, &mut rng, reward) {
            Ok(trajectory) => {
                collected.push(trajectory);
                completed += 1;
            }
            Err(RolloutError::Budget(e)) => {
                log::debug!("stopping after {completed} rollouts: {e}");
                stop = StopReason::BudgetExhausted;
                break;
            }
            Err(RolloutError::Client(e)) => {
                if rollout == 0 {
                    return Err(SearchError::FirstRollout(e));
                }
                log::warn!("rollout {rollout} aborted: {e}");
                errors.push(format!("rollout {rollout}: {e}"));
            }
            Err(RolloutError::Tree(e)) => return Err(e.into()),
            Err(RolloutError::Action(e)) => return Err(SearchError::Action(e)),
        }
    }
    let mut trajectories = dedup_trajectories(collected);
    for t in &mut trajectories {
        t.node_values = t.node_ids[1..]
            .iter()
            .map(|id| tree.node(*id).mean_value())
            .collect();
    }
    verifier.attach_scores(&mut trajectories, clients);
    Ok(SearchOutcome {
        tree,
        trajectories,
        rollouts_completed: completed,
        stop,
        budget,
        errors,
    })
}
