//! Predicates and their phrasings.
//!
//! Every phrasing owns one distinctive keyword that appears in its question
//! form, its nested noun form, its fact sentence and its distractor
//! sentence. A predicate's shared words appear in all of its documents. So a
//! single-hop question retrieves the fact document first exactly when it is
//! phrased the way the fact is written; otherwise the distractor written in
//! the question's phrasing outranks it.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Phrasing {
    /// Question with one `{}` slot for the subject.
    pub question: &'static str,
    /// Noun phrase denoting the object, for nesting inside another question.
    pub noun: &'static str,
    /// Document stating the relation, with `{s}` and `{o}` slots.
    pub fact: &'static str,
    /// Distractor about the subject that names no object, with `{s}`.
    pub hint: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Predicate {
    pub name: &'static str,
    pub phrasings: [Phrasing; PHRASINGS],
}

/// Phrasings per predicate.
pub const PHRASINGS: usize = 3;

pub const PREDICATES: &[Predicate] = &[
    Predicate {
        name: "located_on",
        phrasings: [
            Phrasing {
                question: "Where is {} located?",
                noun: "the body of water where {} is located",
                fact: "{s} is located on the body of water {o}.",
                hint: "{s} is located beside a body of water with no recorded name.",
            },
            Phrasing {
                question: "Which body of water is {} near?",
                noun: "the body of water near {}",
                fact: "{s} stands near the body of water {o}.",
                hint: "{s} stands near a body of water with no recorded name.",
            },
            Phrasing {
                question: "Which body of water is {} adjacent to?",
                noun: "the body of water adjacent to {}",
                fact: "{s} is adjacent to the body of water {o}.",
                hint: "{s} is adjacent to a body of water with no recorded name.",
            },
        ],
    },
    Predicate {
        name: "flows_into",
        phrasings: [
            Phrasing {
                question: "What is the mouth of watercourse for {}?",
                noun: "the mouth of watercourse for {}",
                fact: "The mouth of watercourse for {s} is {o}.",
                hint: "The mouth of watercourse for {s} is an unnamed marsh.",
            },
            Phrasing {
                question: "What is the outlet of {}?",
                noun: "the outlet of {}",
                fact: "The mouth of {s} is its outlet into {o}.",
                hint: "The mouth of {s} is its outlet into an unnamed marsh.",
            },
            Phrasing {
                question: "What is the confluence of {}?",
                noun: "the confluence of {}",
                fact: "The mouth of {s} is its confluence with {o}.",
                hint: "The mouth of {s} is its confluence with an unnamed marsh.",
            },
        ],
    },
    Predicate {
        name: "directed_by",
        phrasings: [
            Phrasing {
                question: "Who directed {}?",
                noun: "the person who directed {}",
                fact: "{s} was directed by {o}.",
                hint: "{s} was directed by an uncredited stranger.",
            },
            Phrasing {
                question: "Which filmmaker made {}?",
                noun: "the filmmaker behind {}",
                fact: "The filmmaker of {s} was {o}.",
                hint: "The filmmaker of {s} was an uncredited stranger.",
            },
            Phrasing {
                question: "Who helmed {}?",
                noun: "the person who helmed {}",
                fact: "{s} was helmed by {o}.",
                hint: "{s} was helmed by an uncredited stranger.",
            },
        ],
    },
    Predicate {
        name: "founded_by",
        phrasings: [
            Phrasing {
                question: "Who founded {}?",
                noun: "the person who founded {}",
                fact: "{s} was founded by {o}.",
                hint: "{s} was founded by a forgotten stranger.",
            },
            Phrasing {
                question: "Who is the founder of {}?",
                noun: "the founder of {}",
                fact: "The founder of {s} was {o}.",
                hint: "The founder of {s} was a forgotten stranger.",
            },
            Phrasing {
                question: "Who established {}?",
                noun: "the person who established {}",
                fact: "{s} was established by {o}.",
                hint: "{s} was established by a forgotten stranger.",
            },
        ],
    },
    Predicate {
        name: "born_in",
        phrasings: [
            Phrasing {
                question: "Where was {} born?",
                noun: "the place where {} was born",
                fact: "{s} was born in {o}.",
                hint: "{s} was born in a village lost to history.",
            },
            Phrasing {
                question: "What is the hometown of {}?",
                noun: "the hometown of {}",
                fact: "The hometown of {s} is {o}.",
                hint: "The hometown of {s} is a village lost to history.",
            },
            Phrasing {
                question: "Where is {} a native of?",
                noun: "the place {} is a native of",
                fact: "{s} is a native of {o}.",
                hint: "{s} is a native of a village lost to history.",
            },
        ],
    },
];

pub fn predicate_index(name: &str) -> Option<usize> {
    PREDICATES.iter().position(|p| p.name == name)
}

/// One relation application inside a query: which predicate, phrased how.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hop {
    pub predicate: usize,
    pub phrasing: usize,
}

impl Hop {
    fn phrasing_text(self) -> &'static Phrasing {
        &PREDICATES[self.predicate].phrasings[self.phrasing]
    }
}

/// Renders a question applying `hops` (innermost first) to `subject`.
pub fn render_query(subject: &str, hops: &[Hop]) -> String {
    let (last, inner) = hops.split_last().expect("a query has at least one hop");
    let mut text = subject.to_owned();
    for hop in inner {
        text = hop.phrasing_text().noun.replace("{}", &text);
    }
    last.phrasing_text().question.replace("{}", &text)
}

pub fn render_fact(subject: &str, hop: Hop, object: &str) -> String {
    hop.phrasing_text().fact.replace("{s}", subject).replace("{o}", object)
}

pub fn render_hint(subject: &str, hop: Hop) -> String {
    hop.phrasing_text().hint.replace("{s}", subject)
}

/// A parsed query: the subject entity and the hops applied to it,
/// innermost first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryForm {
    pub subject: String,
    pub hops: Vec<Hop>,
}

impl QueryForm {
    pub fn predicates(&self) -> Vec<usize> {
        self.hops.iter().map(|h| h.predicate).collect()
    }
}

fn strip_frame<'a>(text: &'a str, frame: &str) -> Option<&'a str> {
    let (prefix, suffix) = frame.split_once("{}")?;
    if text.len() < prefix.len() + suffix.len() {
        return None;
    }
    text.strip_prefix(prefix)?.strip_suffix(suffix)
}

fn parse_nested(text: &str, is_entity: &dyn Fn(&str) -> bool) -> Option<(String, Vec<Hop>)> {
    if is_entity(text) {
        return Some((text.to_owned(), Vec::new()));
    }
    for (predicate, p) in PREDICATES.iter().enumerate() {
        for (phrasing, ph) in p.phrasings.iter().enumerate() {
            if let Some(inner) = strip_frame(text, ph.noun) {
                if let Some((subject, mut hops)) = parse_nested(inner, is_entity) {
                    hops.push(Hop { predicate, phrasing });
                    return Some((subject, hops));
                }
            }
        }
    }
    None
}

/// Parses a question rendered by [`render_query`]. `is_entity` decides which
/// strings are entity names.
pub fn parse_query(text: &str, is_entity: &dyn Fn(&str) -> bool) -> Option<QueryForm> {
    let text = text.trim();
    for (predicate, p) in PREDICATES.iter().enumerate() {
        for (phrasing, ph) in p.phrasings.iter().enumerate() {
            if let Some(inner) = strip_frame(text, ph.question) {
                if let Some((subject, mut hops)) = parse_nested(inner, is_entity) {
                    hops.push(Hop { predicate, phrasing });
                    return Some(QueryForm { subject, hops });
                }
            }
        }
    }
    None
}

/// Every lowercase word used by any template, for keeping entity names
/// disjoint from template vocabulary.
pub fn template_words() -> std::collections::HashSet<String> {
    PREDICATES
        .iter()
        .flat_map(|p| p.phrasings.iter())
        .flat_map(|ph| [ph.question, ph.noun, ph.fact, ph.hint])
        .flat_map(crate::text::word_tokens)
        .collect()
}
