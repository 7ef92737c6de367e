//! Prompt templates with named `{placeholder}` slots.
//!
//! The shipped templates live in `templates/*.txt`. A line consisting only of
//! `{examples}` marks where few-shot exemplars go; exemplars are supplied by
//! the user and the line is dropped when none are configured.

use std::{collections::BTreeMap, fs, io, path::Path};

use serde::{Deserialize, Serialize};

use super::ActionKind;
use crate::clients::RetrievedDoc;

const SAY_TEMPLATE: &str = include_str!("../../templates/say.txt");
const QT_TEMPLATE: &str = include_str!("../../templates/qt.txt");
const RA_TEMPLATE: &str = include_str!("../../templates/ra.txt");
const SA_TEMPLATE: &str = include_str!("../../templates/sa.txt");

/// Fixed first line of each template; used by scripted backends to tell the
/// prompt kinds apart.
pub fn template_header(kind: ActionKind) -> Option<&'static str> {
    let text = match kind {
        ActionKind::Say => SAY_TEMPLATE,
        ActionKind::Qt => QT_TEMPLATE,
        ActionKind::Ra => RA_TEMPLATE,
        ActionKind::Sa => SA_TEMPLATE,
        ActionKind::Da => return None,
    };
    text.lines().next()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub say: String,
    pub qt: String,
    pub ra: String,
    pub sa: String,
    /// Few-shot exemplar text per action, keyed by action.
    #[serde(default)]
    pub examples: BTreeMap<ActionKind, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            say: trim_file(SAY_TEMPLATE),
            qt: trim_file(QT_TEMPLATE),
            ra: trim_file(RA_TEMPLATE),
            sa: trim_file(SA_TEMPLATE),
            examples: BTreeMap::new(),
        }
    }
}

fn trim_file(text: &str) -> String {
    text.trim_end_matches(['\n', '\r']).to_owned()
}

impl PromptTemplates {
    /// Loads `say.txt`, `qt.txt`, `ra.txt` and `sa.txt` from `dir`, falling
    /// back to the shipped text for any missing file. Optional exemplar files
    /// are named `<action>.examples.txt`.
    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        let mut templates = Self::default();
        for (kind, slot) in [
            (ActionKind::Say, &mut templates.say),
            (ActionKind::Qt, &mut templates.qt),
            (ActionKind::Ra, &mut templates.ra),
            (ActionKind::Sa, &mut templates.sa),
        ] {
            let name = kind.name().to_lowercase();
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = trim_file(&fs::read_to_string(path)?);
            }
        }
        for kind in ActionKind::ALL {
            let path = dir.join(format!("{}.examples.txt", kind.name().to_lowercase()));
            if path.exists() {
                templates
                    .examples
                    .insert(kind, trim_file(&fs::read_to_string(path)?));
            }
        }
        Ok(templates)
    }

    fn template(&self, kind: ActionKind) -> Option<&str> {
        match kind {
            ActionKind::Say => Some(&self.say),
            ActionKind::Qt => Some(&self.qt),
            ActionKind::Ra => Some(&self.ra),
            ActionKind::Sa => Some(&self.sa),
            ActionKind::Da => None,
        }
    }

    /// Fills the template for `kind`. DA has no template and returns the
    /// question text unchanged.
    pub fn fill(&self, kind: ActionKind, slots: &PromptSlots<'_>) -> String {
        let Some(template) = self.template(kind) else {
            return slots.question.to_owned();
        };
        let examples = self.examples.get(&kind).map(String::as_str).unwrap_or("");
        let lines: Vec<&str> = template
            .split('\n')
            .filter(|line| !(line.trim() == "{examples}" && examples.is_empty()))
            .collect();
        substitute(&lines.join("\n"), |name| match name {
            "question" => Some(slots.question.to_owned()),
            "this_question" => Some(slots.this_question.to_owned()),
            "history" => Some(slots.history.to_owned()),
            "contexts" => Some(slots.contexts.to_owned()),
            "examples" => Some(examples.to_owned()),
            _ => None,
        })
    }
}

/// Values for the template placeholders.
#[derive(Debug, Clone, Copy, Default)]
pub struct PromptSlots<'a> {
    pub question: &'a str,
    pub this_question: &'a str,
    pub history: &'a str,
    pub contexts: &'a str,
}

/// Single pass over `template`; substituted values are never rescanned, and
/// unknown `{names}` are left as written.
fn substitute(template: &str, lookup: impl Fn(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close)
                if after[..close]
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_') =>
            {
                let name = &after[..close];
                match lookup(name) {
                    Some(value) => out.push_str(&value),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// `[1] first doc` style listing.
pub fn render_contexts(docs: &[RetrievedDoc]) -> String {
    render_context_texts(docs.iter().map(|d| d.content.as_str()))
}

pub fn render_context_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| format!("[{}] {}", i + 1, t))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Sub-query / answer pairs, numbered from 1.
pub fn render_history(pairs: &[(String, String)]) -> String {
    pairs
        .iter()
        .enumerate()
        .map(|(i, (q, a))| format!("Sub-query {n}: {q}\nAnswer {n}: {a}", n = i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn say_prompt_carries_query() {
        let t = PromptTemplates::default();
        let p = t.fill(ActionKind::Say, &PromptSlots { question: "Q", ..Default::default() });
        assert!(p.contains("Query: Q"));
        assert!(p.contains("decompose it into multiple sub-queries"));
        assert!(p.contains("return \"None\""));
        assert!(!p.contains("{examples}"));
        assert!(p.ends_with("Output: "));
    }

    #[test]
    fn examples_slot_is_filled_when_configured() {
        let mut t = PromptTemplates::default();
        t.examples.insert(ActionKind::Say, "Query: x\nOutput: y".into());
        let p = t.fill(ActionKind::Say, &PromptSlots { question: "Q", ..Default::default() });
        assert!(p.contains("Query: x\nOutput: y\nQuery: Q"));
    }

    #[test]
    fn da_is_the_raw_question() {
        let t = PromptTemplates::default();
        let p = t.fill(ActionKind::Da, &PromptSlots { question: "Who?", ..Default::default() });
        assert_eq!(p, "Who?");
    }

    #[test]
    fn substitution_is_single_pass() {
        let out = substitute("a {x} {y} {z", |n| (n == "x").then(|| "{y}".to_string()));
        assert_eq!(out, "a {y} {y} {z");
    }

    #[test]
    fn headers_are_distinct() {
        let heads: Vec<_> = ActionKind::ALL.iter().filter_map(|k| template_header(*k)).collect();
        assert_eq!(heads.len(), 4);
        for (i, a) in heads.iter().enumerate() {
            for b in &heads[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn load_dir_overrides_and_falls_back() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ra.txt"), "CTX {contexts} Q {question}\n").unwrap();
        std::fs::write(dir.path().join("sa.examples.txt"), "ex\n").unwrap();
        let t = PromptTemplates::load_dir(dir.path()).unwrap();
        assert_eq!(t.ra, "CTX {contexts} Q {question}");
        assert_eq!(t.say, PromptTemplates::default().say);
        assert_eq!(t.examples.get(&ActionKind::Sa).map(String::as_str), Some("ex"));
    }
}
