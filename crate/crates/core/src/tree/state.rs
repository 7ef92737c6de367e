use serde::{Deserialize, Serialize};

use crate::{
    actions::{parse_subqueries, ActionKind},
    text::collapse_whitespace,
    verify::is_valid_answer,
};

/// One executed action in a reasoning transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub action: ActionKind,
    /// The query this step addressed (the question itself for SAY, DA, SA).
    pub query: String,
    pub prompt_digest: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub doc_ids: Vec<String>,
}

impl Step {
    pub fn new(action: ActionKind, query: impl Into<String>, output: impl Into<String>) -> Self {
        Self {
            action,
            query: query.into(),
            prompt_digest: String::new(),
            output: output.into(),
            doc_ids: Vec::new(),
        }
    }
}

/// Ordered transcript from the root question to a node.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningState {
    pub steps: Vec<Step>,
    /// Input tokens reported for the calls along this path.
    pub input_tokens_used: u64,
}

/// Lowercase, trim and collapse whitespace. Used for sibling and path
/// deduplication.
pub fn normalize_state_text(text: &str) -> String {
    collapse_whitespace(&text.to_lowercase())
}

impl ReasoningState {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn depth(&self) -> usize {
        self.steps.len()
    }

    pub fn last_action(&self) -> Option<ActionKind> {
        self.steps.last().map(|s| s.action)
    }

    pub fn last_output(&self) -> Option<&str> {
        self.steps.last().map(|s| s.output.as_str())
    }

    pub fn count(&self, kind: ActionKind) -> usize {
        self.steps.iter().filter(|s| s.action == kind).count()
    }

    pub fn extend(&self, step: Step, tokens_in: u64) -> Self {
        let mut steps = self.steps.clone();
        steps.push(step);
        Self {
            steps,
            input_tokens_used: self.input_tokens_used + tokens_in,
        }
    }

    /// Normalised concatenation of the step outputs.
    pub fn identity(&self) -> String {
        self.steps
            .iter()
            .map(|s| normalize_state_text(&s.output))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Sub-queries still to be answered, first one next. SAY replaces the
    /// queue with its decomposition (or the question when it declines), QT
    /// rewrites the head, and a valid RA answer pops the head.
    pub fn pending_queries(&self, question: &str) -> Vec<String> {
        let mut queue = vec![question.to_owned()];
        for step in &self.steps {
            match step.action {
                ActionKind::Say => {
                    queue = parse_subqueries(&step.output)
                        .filter(|qs| !qs.is_empty())
                        .unwrap_or_else(|| vec![question.to_owned()]);
                }
                ActionKind::Qt => {
                    let rewritten: Vec<String> = step.output.lines().map(str::to_owned).collect();
                    if queue.is_empty() {
                        queue = rewritten;
                    } else {
                        queue.splice(0..1, rewritten);
                    }
                }
                ActionKind::Ra => {
                    if is_valid_answer(&step.output) && !queue.is_empty() {
                        queue.remove(0);
                    }
                }
                ActionKind::Da => {
                    if is_valid_answer(&step.output) {
                        queue.clear();
                    }
                }
                ActionKind::Sa => queue.clear(),
            }
        }
        queue
    }

    pub fn current_query(&self, question: &str) -> Option<String> {
        self.pending_queries(question).into_iter().next()
    }

    /// (query, answer) pairs from the RA and DA steps.
    pub fn history(&self) -> Vec<(String, String)> {
        self.steps
            .iter()
            .filter(|s| matches!(s.action, ActionKind::Ra | ActionKind::Da))
            .map(|s| (s.query.clone(), s.output.clone()))
            .collect()
    }

    /// Final answer carried by this state: the SA output when the path ends
    /// in SA, otherwise the last RA or DA output.
    pub fn extract_answer(&self) -> String {
        if let Some(last) = self.steps.last().filter(|s| s.action == ActionKind::Sa) {
            return last.output.clone();
        }
        self.steps
            .iter()
            .rev()
            .find(|s| matches!(s.action, ActionKind::Ra | ActionKind::Da))
            .map(|s| s.output.clone())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ActionKind::*;

    fn st(steps: &[(ActionKind, &str, &str)]) -> ReasoningState {
        steps.iter().fold(ReasoningState::root(), |s, (a, q, o)| s.extend(Step::new(*a, *q, *o), 1))
    }

    #[test]
    fn queue_follows_decomposition() {
        let s = st(&[(Say, "Q", "q1\nq2")]);
        assert_eq!(s.pending_queries("Q"), ["q1", "q2"]);
        let s = st(&[(Say, "Q", "q1\nq2"), (Ra, "q1", "B")]);
        assert_eq!(s.current_query("Q").as_deref(), Some("q2"));
        let s = st(&[(Say, "Q", "q1\nq2"), (Ra, "q1", "B"), (Qt, "q2", "q2 about B")]);
        assert_eq!(s.current_query("Q").as_deref(), Some("q2 about B"));
        let s = st(&[(Say, "Q", "q1\nq2"), (Ra, "q1", "B"), (Qt, "q2", "q2b"), (Ra, "q2b", "C")]);
        assert_eq!(s.current_query("Q"), None);
        assert_eq!(s.depth(), 4);
        assert_eq!(s.input_tokens_used, 4);
    }

    #[test]
    fn failed_answers_keep_the_query() {
        let s = st(&[(Say, "Q", "q1\nq2"), (Ra, "q1", "unknown")]);
        assert_eq!(s.current_query("Q").as_deref(), Some("q1"));
        let s = st(&[(Say, "Q", "None")]);
        assert_eq!(s.pending_queries("Q"), ["Q"]);
    }

    #[test]
    fn answers_and_identity() {
        let s = st(&[(Say, "Q", "q1"), (Ra, "q1", "B"), (Sa, "Q", "The  B")]);
        assert_eq!(s.extract_answer(), "The  B");
        assert_eq!(s.identity(), "q1\nb\nthe b");
        let s = st(&[(Say, "Q", "q1"), (Ra, "q1", "B"), (Qt, "q", "x")]);
        assert_eq!(s.extract_answer(), "B");
        assert_eq!(st(&[]).extract_answer(), "");
        assert_eq!(s.history(), vec![("q1".to_string(), "B".to_string())]);
    }
}
