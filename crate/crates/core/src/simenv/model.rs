//! The scripted model for a [`World`].
//!
//! The prompt kind is recognised by the template's fixed first line; a
//! prompt that is itself a world question is a direct answer (DA) request.
//! Behaviour per kind:
//!
//! - SAY: splits a multi-hop question into cumulative per-hop sub-queries;
//!   declines (`None`) on single-hop questions unless paraphrasing.
//! - QT: substitutes intermediates resolved in the history, decomposes an
//!   unresolved multi-hop query, or paraphrases a single-hop one.
//! - RA: answers from the fact documents among the contexts only, else
//!   `unknown`.
//! - SA: resolves the main question from history answers plus fact
//!   documents in the contexts; failing that, returns the most common
//!   non-document context line (the refinement case); else `unknown`.
//! - DA: answers only when every relation on the chain is in the world's
//!   parametric memory.
//!
//! Sampling temperature only affects SAY and QT: with probability
//! `min(temperature, 1)` each hop is re-phrased with a random phrasing.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{lexicon::{parse_query, predicate_index, render_query, Hop, QueryForm}, World, PHRASINGS};
use crate::{
    actions::{template_header, ActionKind},
    clients::{ClientError, ScriptedModel},
    eval::normalize_answer,
    verify::is_valid_answer,
};

const UNKNOWN: &str = "unknown";
const NONE: &str = "None";

/// Everything `respond` needs, precomputed from a world.
#[derive(Debug, Clone)]
pub struct SimResponder {
    entities: HashSet<String>,
    /// Fact document text -> (subject, predicate, object).
    facts: HashMap<String, (String, usize, String)>,
    docs: HashSet<String>,
    /// (subject, predicate) -> object, for the relations in memory.
    memory: HashMap<(String, usize), String>,
    phrasings: usize,
}

/// Facts known while answering one prompt: (subject, predicate chain,
/// object). A sub-query answer may cover several hops at once.
#[derive(Default)]
struct Facts(Vec<(String, Vec<usize>, String)>);

impl Facts {
    fn resolve(&self, subject: &str, predicates: &[usize]) -> Option<String> {
        if predicates.is_empty() {
            return Some(subject.to_owned());
        }
        self.0
            .iter()
            .filter(|(s, chain, _)| s == subject && predicates.starts_with(chain))
            .find_map(|(_, chain, object)| self.resolve(object, &predicates[chain.len()..]))
    }
}

impl SimResponder {
    pub fn new(world: &World) -> Self {
        let mut facts = HashMap::new();
        let mut memory = HashMap::new();
        let known: HashSet<usize> = world.known.iter().copied().collect();
        for (i, r) in world.relations.iter().enumerate() {
            let predicate = predicate_index(&r.predicate).expect("validated predicate");
            let text = super::lexicon::render_fact(&r.subject, Hop { predicate, phrasing: r.phrasing }, &r.object);
            facts.insert(text, (r.subject.clone(), predicate, r.object.clone()));
            if known.contains(&i) {
                memory.insert((r.subject.clone(), predicate), r.object.clone());
            }
        }
        Self {
            entities: world.entities.iter().cloned().collect(),
            facts,
            docs: world.docs.iter().map(|d| d.content.clone()).collect(),
            memory,
            phrasings: world.phrasings.clamp(1, PHRASINGS),
        }
    }

    fn parse(&self, text: &str) -> Option<QueryForm> {
        parse_query(text, &|s| self.entities.contains(s))
    }

    /// One sampled completion for `prompt`.
    pub fn respond(&self, prompt: &str, temperature: f64, rng: &mut ChaCha8Rng) -> Result<String, ClientError> {
        let first = prompt.lines().next().unwrap_or_default();
        let kind = [ActionKind::Say, ActionKind::Qt, ActionKind::Ra, ActionKind::Sa]
            .into_iter()
            .find(|k| template_header(*k) == Some(first));
        Ok(match kind {
            Some(ActionKind::Say) => self.say(field(prompt, "Query: ").unwrap_or_default(), temperature, rng),
            Some(ActionKind::Qt) => {
                let main = field(prompt, "Main Query: ").unwrap_or_default();
                let this = field(prompt, "This Query: ").unwrap_or(main);
                self.qt(this, &history_pairs(prompt), temperature, rng)
            }
            Some(ActionKind::Ra) => self.ra(field(prompt, "Question: ").unwrap_or_default(), &context_lines(prompt)),
            Some(ActionKind::Sa) => self.sa(
                field(prompt, "User Query: ").unwrap_or_default(),
                &history_pairs(prompt),
                &context_lines(prompt),
            ),
            _ => match self.parse(prompt) {
                Some(form) => self.da(&form),
                None => {
                    return Err(ClientError::UnrecognizedTemplate(
                        first.chars().take(60).collect(),
                    ))
                }
            },
        })
    }

    fn rephrase(&self, hops: &[Hop], temperature: f64, rng: &mut ChaCha8Rng) -> Vec<Hop> {
        hops.iter()
            .map(|&h| {
                if temperature > 0.0 && rng.gen_bool(temperature.min(1.0)) {
                    Hop { phrasing: rng.gen_range(0..self.phrasings), ..h }
                } else {
                    h
                }
            })
            .collect()
    }

    fn decompose(subject: &str, hops: &[Hop]) -> String {
        (1..=hops.len())
            .map(|k| render_query(subject, &hops[..k]))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn say(&self, question: &str, temperature: f64, rng: &mut ChaCha8Rng) -> String {
        let Some(form) = self.parse(question) else {
            return NONE.into();
        };
        let hops = self.rephrase(&form.hops, temperature, rng);
        if hops.len() == 1 {
            if hops == form.hops {
                NONE.into()
            } else {
                render_query(&form.subject, &hops)
            }
        } else {
            Self::decompose(&form.subject, &hops)
        }
    }

    fn history_facts(&self, history: &[(String, String)]) -> Facts {
        let mut facts = Facts::default();
        for (query, answer) in history {
            let answer = answer.trim();
            if !is_valid_answer(answer) {
                continue;
            }
            if let Some(form) = self.parse(query) {
                facts.0.push((form.subject.clone(), form.predicates(), answer.to_owned()));
            }
        }
        facts
    }

    fn add_doc_facts(&self, facts: &mut Facts, contexts: &[String]) {
        for c in contexts {
            if let Some((s, p, o)) = self.facts.get(c) {
                facts.0.push((s.clone(), vec![*p], o.clone()));
            }
        }
    }

    fn qt(&self, query: &str, history: &[(String, String)], temperature: f64, rng: &mut ChaCha8Rng) -> String {
        let Some(form) = self.parse(query) else {
            return NONE.into();
        };
        let facts = self.history_facts(history);
        let predicates = form.predicates();
        let resolved = (1..=predicates.len())
            .rev()
            .find_map(|j| facts.resolve(&form.subject, &predicates[..j]).map(|e| (j, e)));
        match resolved {
            Some((j, _)) if j == form.hops.len() => NONE.into(),
            Some((j, entity)) => render_query(&entity, &self.rephrase(&form.hops[j..], temperature, rng)),
            None if form.hops.len() > 1 => {
                Self::decompose(&form.subject, &self.rephrase(&form.hops, temperature, rng))
            }
            None => {
                let hops = self.rephrase(&form.hops, temperature, rng);
                if hops == form.hops {
                    NONE.into()
                } else {
                    render_query(&form.subject, &hops)
                }
            }
        }
    }

    fn ra(&self, query: &str, contexts: &[String]) -> String {
        let Some(form) = self.parse(query) else {
            return UNKNOWN.into();
        };
        let mut facts = Facts::default();
        self.add_doc_facts(&mut facts, contexts);
        facts
            .resolve(&form.subject, &form.predicates())
            .unwrap_or_else(|| UNKNOWN.into())
    }

    fn sa(&self, question: &str, history: &[(String, String)], contexts: &[String]) -> String {
        if let Some(form) = self.parse(question) {
            let mut facts = self.history_facts(history);
            self.add_doc_facts(&mut facts, contexts);
            if let Some(answer) = facts.resolve(&form.subject, &form.predicates()) {
                return answer;
            }
        }
        majority_candidate(contexts.iter().filter(|c| !self.docs.contains(*c)))
            .unwrap_or_else(|| UNKNOWN.into())
    }

    fn da(&self, form: &QueryForm) -> String {
        let mut entity = form.subject.clone();
        for p in form.predicates() {
            match self.memory.get(&(entity.clone(), p)) {
                Some(next) => entity = next.clone(),
                None => return UNKNOWN.into(),
            }
        }
        entity
    }
}

/// Most frequent valid candidate by normalised text; the first one seen
/// wins ties and is returned as written.
fn majority_candidate<'a>(candidates: impl Iterator<Item = &'a String>) -> Option<String> {
    let mut counts: Vec<(String, &'a String, usize)> = Vec::new();
    for c in candidates.filter(|c| is_valid_answer(c)) {
        let key = normalize_answer(c);
        match counts.iter_mut().find(|(k, _, _)| *k == key) {
            Some(entry) => entry.2 += 1,
            None => counts.push((key, c, 1)),
        }
    }
    let best = counts.iter().map(|e| e.2).max()?;
    counts.into_iter().find(|e| e.2 == best).map(|e| e.1.clone())
}

/// Text after the last line starting with `prefix`.
fn field<'a>(prompt: &'a str, prefix: &str) -> Option<&'a str> {
    prompt.lines().rev().find_map(|l| l.strip_prefix(prefix)).map(str::trim)
}

/// `[n] text` lines (the first may follow `Contexts: `).
fn context_lines(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .map(|l| l.strip_prefix("Contexts: ").unwrap_or(l))
        .filter_map(|l| {
            let rest = l.strip_prefix('[')?;
            let (num, text) = rest.split_once("] ")?;
            num.chars().all(|c| c.is_ascii_digit()).then(|| text.trim().to_owned())
        })
        .collect()
}

/// `Sub-query n: q` / `Answer n: a` pairs (the first may follow `History: `).
fn history_pairs(prompt: &str) -> Vec<(String, String)> {
    let mut queries: HashMap<String, String> = HashMap::new();
    let mut pairs = Vec::new();
    for line in prompt.lines() {
        let line = line.strip_prefix("History: ").unwrap_or(line);
        if let Some((n, q)) = line.strip_prefix("Sub-query ").and_then(|r| r.split_once(": ")) {
            queries.insert(n.to_owned(), q.to_owned());
        } else if let Some((n, a)) = line.strip_prefix("Answer ").and_then(|r| r.split_once(": ")) {
            if let Some(q) = queries.remove(n) {
                pairs.push((q, a.to_owned()));
            }
        }
    }
    pairs
}

/// A [`ScriptedModel`] answering with [`SimResponder`].
pub fn scripted_model(world: &World, seed: u64) -> ScriptedModel {
    let responder = SimResponder::new(world);
    ScriptedModel::new(seed, move |req, _, rng| {
        responder.respond(&req.prompt, req.sampling.temperature, rng)
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::{
        actions::{render_context_texts, render_history, PromptSlots, PromptTemplates},
        simenv::{bartram_world, generate_world, BARTRAM_QUESTION},
    };

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    fn prompt(kind: ActionKind, question: &str, this: &str, history: &[(String, String)], contexts: &[&str]) -> String {
        PromptTemplates::default().fill(
            kind,
            &PromptSlots {
                question,
                this_question: this,
                history: &render_history(history),
                contexts: &render_context_texts(contexts.iter().copied()),
            },
        )
    }

    fn pair(q: &str, a: &str) -> (String, String) {
        (q.into(), a.into())
    }

    #[test]
    fn say_decomposes_multi_hop() {
        let w = bartram_world();
        let r = SimResponder::new(&w);
        let out = r.respond(&prompt(ActionKind::Say, BARTRAM_QUESTION, "", &[], &[]), 0.0, &mut rng()).unwrap();
        assert_eq!(
            out.lines().collect::<Vec<_>>(),
            [
                "Where is Bartram's Covered Bridge located?",
                "What is the mouth of watercourse for the body of water where Bartram's Covered Bridge is located?",
            ]
        );
        let single = "Where is Bartram's Covered Bridge located?";
        assert_eq!(r.respond(&prompt(ActionKind::Say, single, "", &[], &[]), 0.0, &mut rng()).unwrap(), "None");
    }

    #[test]
    fn ra_reads_contexts_only() {
        let w = bartram_world();
        let r = SimResponder::new(&w);
        let fact = "Bartram's Covered Bridge is located on the body of water Crum Creek.";
        let hint = "Bartram's Covered Bridge stands near a body of water with no recorded name.";
        let q = "Where is Bartram's Covered Bridge located?";
        assert_eq!(r.respond(&prompt(ActionKind::Ra, q, "", &[], &[hint, fact]), 0.0, &mut rng()).unwrap(), "Crum Creek");
        assert_eq!(r.respond(&prompt(ActionKind::Ra, q, "", &[], &[hint]), 0.0, &mut rng()).unwrap(), "unknown");
    }

    #[test]
    fn qt_substitutes_resolved_intermediates() {
        let w = bartram_world();
        let r = SimResponder::new(&w);
        let history = [pair("Where is Bartram's Covered Bridge located?", "Crum Creek")];
        let p = prompt(ActionKind::Qt, BARTRAM_QUESTION, BARTRAM_QUESTION, &history, &[]);
        assert_eq!(r.respond(&p, 0.0, &mut rng()).unwrap(), "What is the mouth of watercourse for Crum Creek?");
        let unresolved = [pair("Where is Bartram's Covered Bridge located?", "unknown")];
        let p = prompt(ActionKind::Qt, BARTRAM_QUESTION, BARTRAM_QUESTION, &unresolved, &[]);
        assert_eq!(r.respond(&p, 0.0, &mut rng()).unwrap().lines().count(), 2);
        let single = "Where is Bartram's Covered Bridge located?";
        let p = prompt(ActionKind::Qt, BARTRAM_QUESTION, single, &[], &[]);
        assert_eq!(r.respond(&p, 0.0, &mut rng()).unwrap(), "None");
    }

    #[test]
    fn sa_combines_history_and_contexts() {
        let w = bartram_world();
        let r = SimResponder::new(&w);
        let history = [pair("Where is Bartram's Covered Bridge located?", "Crum Creek")];
        let creek_fact = "The mouth of watercourse for Crum Creek is Delaware River.";
        let p = prompt(ActionKind::Sa, BARTRAM_QUESTION, "", &history, &[creek_fact]);
        assert_eq!(r.respond(&p, 0.0, &mut rng()).unwrap(), "Delaware River");
        let p = prompt(ActionKind::Sa, BARTRAM_QUESTION, "", &history, &[]);
        assert_eq!(r.respond(&p, 0.0, &mut rng()).unwrap(), "unknown");
        // Refinement: candidates are not documents, the majority wins.
        let p = prompt(ActionKind::Sa, BARTRAM_QUESTION, "", &[], &["Mohawk River", "Delaware River", "delaware river"]);
        assert_eq!(r.respond(&p, 0.0, &mut rng()).unwrap(), "Delaware River");
    }

    #[test]
    fn da_uses_memory_and_rejects_unknown_prompts() {
        let mut w = generate_world(2, 6, 2);
        w.known = vec![0];
        let r = SimResponder::new(&w);
        let one = w.questions.iter().find(|q| q.chain == [0]).unwrap();
        assert_eq!(r.respond(&one.sample.question, 0.0, &mut rng()).unwrap(), one.sample.gold_answers[0]);
        let two = w.questions.iter().find(|q| q.chain == [0, 1]).unwrap();
        assert_eq!(r.respond(&two.sample.question, 0.0, &mut rng()).unwrap(), "unknown");
        assert!(matches!(r.respond("Tell me a joke", 0.0, &mut rng()), Err(ClientError::UnrecognizedTemplate(_))));
    }

    #[test]
    fn paraphrase_noise_only_with_temperature() {
        let w = generate_world(3, 6, 1);
        let r = SimResponder::new(&w);
        let q = &w.questions[0].sample.question;
        let p = prompt(ActionKind::Say, q, "", &[], &[]);
        assert_eq!(r.respond(&p, 0.0, &mut rng()).unwrap(), "None");
        let outputs: HashSet<String> = (0..40)
            .map(|i| r.respond(&p, 1.0, &mut ChaCha8Rng::seed_from_u64(i)).unwrap())
            .collect();
        assert!(outputs.len() >= 3, "{outputs:?}");
    }
}
