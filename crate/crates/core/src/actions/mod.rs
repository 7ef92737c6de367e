//! The five reasoning actions, the rules for which may follow which, and
//! their execution against the model and retrieval backends.

mod prompts;
mod sampling;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use prompts::{
    render_context_texts, render_contexts, render_history, template_header, PromptSlots,
    PromptTemplates,
};
pub use sampling::{NPreset, SamplingPolicy};

use crate::{
    clients::{ClientError, Clients, GenerationRequest, RetrievedDoc},
    eval::{count_tokens, Budget, BudgetExhausted},
    text::digest,
    tree::ReasoningState,
};

/// The action space, in A1..A5 order. The derived `Ord` is that order and is
/// what makes child creation deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    /// System analysis: rephrase or decompose the question.
    #[serde(rename = "SAY")]
    Say,
    /// Direct answer from parametric knowledge.
    #[serde(rename = "DA")]
    Da,
    /// Retrieve documents for the current query and answer it.
    #[serde(rename = "RA")]
    Ra,
    /// Query transformation.
    #[serde(rename = "QT")]
    Qt,
    /// Summary answer over the whole transcript.
    #[serde(rename = "SA")]
    Sa,
}

impl ActionKind {
    pub const ALL: [ActionKind; 5] = [Self::Say, Self::Da, Self::Ra, Self::Qt, Self::Sa];

    pub fn name(self) -> &'static str {
        match self {
            Self::Say => "SAY",
            Self::Da => "DA",
            Self::Ra => "RA",
            Self::Qt => "QT",
            Self::Sa => "SA",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// All five actions.
    #[default]
    Full,
    /// Only RA, QT and SA.
    Lite,
    /// Full search followed by an SA refinement over candidate answers from
    /// several sources.
    Blender,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "lite" => Ok(Self::Lite),
            "blender" => Ok(Self::Blender),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Successors of each action, before mode, repetition, iteration and depth
/// filters are applied. `None` is the root question.
const TRANSITIONS: &[(Option<ActionKind>, &[ActionKind])] = &[
    (None, &[ActionKind::Say, ActionKind::Da]),
    (Some(ActionKind::Say), &[ActionKind::Ra, ActionKind::Qt]),
    (Some(ActionKind::Da), &[ActionKind::Sa]),
    (Some(ActionKind::Ra), &[ActionKind::Qt, ActionKind::Sa]),
    (Some(ActionKind::Qt), &[ActionKind::Ra]),
    (Some(ActionKind::Sa), &[]),
];

/// Root actions in lite mode.
const LITE_ROOT: &[ActionKind] = &[ActionKind::Ra, ActionKind::Qt];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionConfig {
    pub per_action_sampling: std::collections::BTreeMap<ActionKind, SamplingPolicy>,
    /// Raise top-p and temperature to 1.0 for the query actions (SAY, QT).
    pub q_div: bool,
    pub mode: Mode,
    pub docs_per_retrieval: usize,
    /// RA steps allowed on one path; once reached QT is no longer offered.
    pub max_qt_ra_iterations: usize,
    pub max_depth: usize,
    #[serde(skip)]
    pub templates: PromptTemplates,
}

impl Default for ActionConfig {
    fn default() -> Self {
        Self {
            per_action_sampling: NPreset::UniformN1.policies(),
            q_div: false,
            mode: Mode::Full,
            docs_per_retrieval: 5,
            max_qt_ra_iterations: 4,
            max_depth: 10,
            templates: PromptTemplates::default(),
        }
    }
}

impl ActionConfig {
    pub fn with_preset(preset: NPreset, q_div: bool) -> Self {
        Self {
            per_action_sampling: preset.policies(),
            q_div,
            ..Self::default()
        }
    }

    /// Sets the temperature of every per-action policy. The q_div override
    /// still applies on top.
    pub fn with_temperature(mut self, temperature: f64) -> Self {
        for policy in self.per_action_sampling.values_mut() {
            policy.temperature = temperature;
        }
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_depth < 2 {
            return Err(format!("max_depth must be at least 2, got {}", self.max_depth));
        }
        if self.docs_per_retrieval == 0 {
            return Err("docs_per_retrieval must be positive".into());
        }
        if self.max_qt_ra_iterations == 0 {
            return Err("max_qt_ra_iterations must be positive".into());
        }
        for (kind, policy) in &self.per_action_sampling {
            policy.validate().map_err(|e| format!("{kind}: {e}"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ActionError {
    #[error("{0} is not legal in this state")]
    Illegal(ActionKind),
    #[error("state is terminal")]
    Terminal,
    #[error("{0} needs retrieved documents or history, found neither")]
    MissingContext(ActionKind),
    #[error(transparent)]
    Budget(#[from] BudgetExhausted),
    #[error(transparent)]
    Client(#[from] ClientError),
}

pub fn is_terminal(state: &ReasoningState, config: &ActionConfig) -> bool {
    state.last_action() == Some(ActionKind::Sa) || state.depth() >= config.max_depth
}

/// Actions that may extend `state`, in A1..A5 order.
pub fn legal_actions(
    state: &ReasoningState,
    config: &ActionConfig,
) -> Result<Vec<ActionKind>, ActionError> {
    if is_terminal(state, config) {
        return Err(ActionError::Terminal);
    }
    if state.depth() + 1 >= config.max_depth {
        return Ok(vec![ActionKind::Sa]);
    }
    let last = state.last_action();
    let successors: &[ActionKind] = match (last, config.mode) {
        (None, Mode::Lite) => LITE_ROOT,
        _ => TRANSITIONS
            .iter()
            .find(|(from, _)| *from == last)
            .map(|(_, to)| *to)
            .unwrap_or(&[]),
    };
    let ra_done = state.count(ActionKind::Ra);
    let mut legal: Vec<ActionKind> = successors
        .iter()
        .copied()
        .filter(|a| config.mode != Mode::Lite || !matches!(a, ActionKind::Say | ActionKind::Da))
        .filter(|a| !matches!(a, ActionKind::Say | ActionKind::Sa) || state.count(*a) == 0)
        .filter(|a| *a != ActionKind::Qt || ra_done < config.max_qt_ra_iterations)
        .collect();
    legal.sort();
    Ok(legal)
}

/// The policy for `action`, with the q_div override applied.
pub fn sampling_params_for(action: ActionKind, config: &ActionConfig) -> SamplingPolicy {
    let mut policy = config
        .per_action_sampling
        .get(&action)
        .copied()
        .unwrap_or_default();
    if config.q_div && matches!(action, ActionKind::Say | ActionKind::Qt) {
        policy.top_p = 1.0;
        policy.temperature = 1.0;
    }
    policy
}

pub fn render_prompt(
    action: ActionKind,
    state: &ReasoningState,
    docs: &[RetrievedDoc],
    question: &str,
    config: &ActionConfig,
) -> Result<String, ActionError> {
    let history = state.history();
    let current = state.current_query(question);
    let current = current.as_deref().unwrap_or(question);
    if matches!(action, ActionKind::Ra | ActionKind::Sa) && docs.is_empty() && history.is_empty() {
        return Err(ActionError::MissingContext(action));
    }
    let history = render_history(&history);
    let contexts = render_contexts(docs);
    let slots = match action {
        ActionKind::Say | ActionKind::Da => PromptSlots { question, ..Default::default() },
        ActionKind::Qt => PromptSlots {
            question,
            this_question: current,
            history: &history,
            ..Default::default()
        },
        ActionKind::Ra => PromptSlots {
            question: current,
            contexts: &contexts,
            ..Default::default()
        },
        ActionKind::Sa => PromptSlots {
            question,
            history: &history,
            contexts: &contexts,
            ..Default::default()
        },
    };
    Ok(config.templates.fill(action, &slots))
}

/// One sampled sequence of an executed action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionOutput {
    pub action: ActionKind,
    /// The query the action addressed.
    pub query: String,
    /// Output text. For QT this is the parsed sub-queries, one per line.
    pub output: String,
    pub doc_ids: Vec<String>,
    pub prompt_digest: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

/// Parses a SAY/QT output into sub-queries, one per line. `None` (any case)
/// means no transformation and yields `None`.
pub fn parse_subqueries(text: &str) -> Option<Vec<String>> {
    let trimmed = text.trim();
    if trimmed.eq_ignore_ascii_case("none") || trimmed.trim_matches('"').eq_ignore_ascii_case("none") {
        return None;
    }
    let queries: Vec<String> = trimmed
        .lines()
        .map(strip_list_marker)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect();
    Some(queries)
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    if let Some(rest) = line.strip_prefix("- ").or_else(|| line.strip_prefix("* ")) {
        return rest.trim();
    }
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return rest.trim();
        }
    }
    line
}

/// Runs `action` on `state`, charging the prompt's input tokens to `budget`
/// before each model call. Empty outputs are dropped, as are QT outputs that
/// decline to transform the query.
pub fn execute_action(
    action: ActionKind,
    state: &ReasoningState,
    question: &str,
    config: &ActionConfig,
    clients: &Clients,
    budget: &mut Budget,
) -> Result<Vec<ActionOutput>, ActionError> {
    if !legal_actions(state, config)?.contains(&action) {
        return Err(ActionError::Illegal(action));
    }
    let current = state.current_query(question);
    let query = match action {
        ActionKind::Ra | ActionKind::Qt => match current {
            Some(q) => q,
            // Every sub-query is answered; nothing left to retrieve or rewrite.
            None => return Ok(Vec::new()),
        },
        _ => question.to_owned(),
    };
    let docs = match action {
        ActionKind::Ra => clients.retriever.retrieve(&query, config.docs_per_retrieval)?,
        ActionKind::Sa => clients.retriever.retrieve(question, config.docs_per_retrieval)?,
        _ => Vec::new(),
    };
    let prompt = render_prompt(action, state, &docs, question, config)?;
    budget.charge(count_tokens(&prompt))?;
    let request = GenerationRequest {
        prompt,
        sampling: sampling_params_for(action, config),
        stop: None,
    };
    let generations = clients.model.generate(&request)?;
    let prompt_digest = digest(&request.prompt);
    let doc_ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
    let outputs = generations
        .into_iter()
        .filter_map(|g| {
            let text = g.text.trim();
            if text.is_empty() {
                return None;
            }
            let output = match action {
                ActionKind::Qt => match parse_subqueries(text) {
                    Some(qs) if !qs.is_empty() => qs.join("\n"),
                    _ => return None,
                },
                _ => text.to_owned(),
            };
            Some(ActionOutput {
                action,
                query: query.clone(),
                output,
                doc_ids: doc_ids.clone(),
                prompt_digest: prompt_digest.clone(),
                tokens_in: g.tokens_in,
                tokens_out: g.tokens_out,
            })
        })
        .collect();
    Ok(outputs)
}
