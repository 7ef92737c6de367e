//! A synthetic multi-hop QA world used as an end-to-end oracle.
//!
//! Entities form one chain `e0 -> e1 -> ...`, each link a relation with a
//! randomly chosen predicate (never the same as the previous link's). Each
//! relation is written up in exactly one fact document using one of the
//! predicate's phrasings; every other phrasing gets a distractor document
//! about the same subject that names no object. Questions cover every chain
//! segment of every length up to `max_hops`, each hop phrased at random.
//!
//! [`scripted_clients`] wires a deterministic model that reads the world's
//! documents, an in-memory retriever over them and a hashing embedder.

mod fixture;
pub mod lexicon;
mod model;

use std::{collections::HashSet, fs, io, path::Path, sync::Arc};

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixture::{bartram_world, BARTRAM_QUESTION};
pub use lexicon::{parse_query, predicate_index, render_query, Hop, QueryForm, PHRASINGS, PREDICATES};
pub use model::{scripted_model, SimResponder};

use crate::{
    clients::{Clients, HashingEmbedder, InMemoryRetriever, RetrievedDoc},
    eval::QASample,
    text::fnv1a,
};

/// The longest supported question chain.
pub const MAX_HOPS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    /// The phrasing the fact document is written in.
    pub phrasing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimQuestion {
    pub sample: QASample,
    pub hops: usize,
    /// Indices into `World::relations`, in the order they are applied.
    pub chain: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    /// Phrasings in use per predicate.
    #[serde(default = "default_phrasings")]
    pub phrasings: usize,
    pub entities: Vec<String>,
    pub relations: Vec<Relation>,
    pub docs: Vec<RetrievedDoc>,
    pub questions: Vec<SimQuestion>,
    /// Relations the scripted model can answer without retrieval.
    #[serde(default)]
    pub known: Vec<usize>,
}

fn default_phrasings() -> usize {
    PHRASINGS
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("max_hops must be in 1..={MAX_HOPS}, got {0}")]
    Hops(usize),
    #[error("need at least max_hops + 1 = {needed} entities, got {got}")]
    TooFewEntities { needed: usize, got: usize },
    #[error("phrasings must be in 1..={PHRASINGS}, got {0}")]
    Phrasings(usize),
    #[error("question {0} has a broken chain")]
    BrokenChain(String),
    #[error("question {0} is not part of this world")]
    UnknownQuestion(String),
    #[error("invalid world: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Generation knobs beyond the seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldOptions {
    pub n_entities: usize,
    pub max_hops: usize,
    /// Phrasings in use per predicate; 1 means no distractor documents.
    pub phrasings: usize,
    /// Share of relations in the scripted model's parametric memory.
    pub known_fraction: f64,
}

impl WorldOptions {
    pub fn new(n_entities: usize, max_hops: usize) -> Self {
        Self {
            n_entities,
            max_hops,
            phrasings: PHRASINGS,
            known_fraction: 1.0 / 3.0,
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if !(1..=MAX_HOPS).contains(&self.max_hops) {
            return Err(WorldError::Hops(self.max_hops));
        }
        if self.n_entities < self.max_hops + 1 {
            return Err(WorldError::TooFewEntities {
                needed: self.max_hops + 1,
                got: self.n_entities,
            });
        }
        if !(1..=PHRASINGS).contains(&self.phrasings) {
            return Err(WorldError::Phrasings(self.phrasings));
        }
        Ok(())
    }
}

/// Deterministic world with the default options.
///
/// # Panics
/// If `max_hops` is outside `1..=4` or `n_entities < max_hops + 1`.
pub fn generate_world(seed: u64, n_entities: usize, max_hops: usize) -> World {
    generate_world_with(seed, &WorldOptions::new(n_entities, max_hops)).unwrap_or_else(|e| panic!("{e}"))
}

pub fn generate_world_with(seed: u64, options: &WorldOptions) -> Result<World, WorldError> {
    options.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entities = entity_names(&mut rng, options.n_entities);

    let mut relations = Vec::with_capacity(entities.len() - 1);
    let mut previous: Option<usize> = None;
    for pair in entities.windows(2) {
        let choices: Vec<usize> = (0..PREDICATES.len()).filter(|p| Some(*p) != previous).collect();
        let predicate = *choices.choose(&mut rng).expect("at least two predicates");
        previous = Some(predicate);
        relations.push(Relation {
            subject: pair[0].clone(),
            predicate: PREDICATES[predicate].name.to_owned(),
            object: pair[1].clone(),
            phrasing: rng.gen_range(0..options.phrasings),
        });
    }

    let mut questions = Vec::new();
    for hops in 1..=options.max_hops {
        for start in 0..=relations.len() - hops {
            let chain: Vec<usize> = (start..start + hops).collect();
            let query_hops: Vec<Hop> = chain
                .iter()
                .map(|&r| Hop {
                    predicate: predicate_index(&relations[r].predicate).expect("generated predicate"),
                    phrasing: rng.gen_range(0..options.phrasings),
                })
                .collect();
            let text = render_query(&relations[start].subject, &query_hops);
            let gold = relations[start + hops - 1].object.clone();
            questions.push(SimQuestion {
                sample: QASample::new(format!("h{hops}-{start:03}"), text, vec![gold]),
                hops,
                chain,
            });
        }
    }

    let known = (0..relations.len())
        .filter(|_| rng.gen_bool(options.known_fraction.clamp(0.0, 1.0)))
        .collect();
    let docs = build_docs(seed, &relations, options.phrasings, &[]);
    Ok(World {
        seed,
        phrasings: options.phrasings,
        entities,
        relations,
        docs,
        questions,
        known,
    })
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "st", "tr"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou", "ei"];
const CODAS: &[&str] = &["", "n", "r", "l", "s", "m", "x", "nd", "rk"];

fn pseudo_word(rng: &mut impl Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut word = String::new();
    for _ in 0..syllables {
        word.push_str(ONSETS.choose(rng).expect("nonempty"));
        word.push_str(VOWELS.choose(rng).expect("nonempty"));
    }
    word.push_str(CODAS.choose(rng).expect("nonempty"));
    let mut chars = word.chars();
    let first = chars.next().expect("nonempty").to_ascii_uppercase();
    std::iter::once(first).chain(chars).collect()
}

/// Two-word names whose words are pairwise distinct and disjoint from the
/// template vocabulary, so retrieval overlap on a name identifies one entity.
fn entity_names(rng: &mut impl Rng, n: usize) -> Vec<String> {
    let mut used = lexicon::template_words();
    for w in crate::clients::scripted::STOPWORDS {
        used.insert((*w).to_owned());
    }
    let mut fresh = |rng: &mut _| loop {
        let w = pseudo_word(rng);
        if used.insert(w.to_lowercase()) {
            return w;
        }
    };
    (0..n).map(|_| format!("{} {}", fresh(rng), fresh(rng))).collect()
}

fn doc_id(seed: u64, content: &str) -> String {
    format!("d{:016x}", fnv1a(content.as_bytes(), seed))
}

/// Fact documents, distractors for every other phrasing in use, and any
/// extra free-text documents, sorted by id.
fn build_docs(seed: u64, relations: &[Relation], phrasings: usize, extra: &[&str]) -> Vec<RetrievedDoc> {
    let mut texts = Vec::new();
    for r in relations {
        let predicate = predicate_index(&r.predicate).expect("known predicate");
        let hop = |phrasing| Hop { predicate, phrasing };
        texts.push(lexicon::render_fact(&r.subject, hop(r.phrasing), &r.object));
        for p in (0..phrasings).filter(|p| *p != r.phrasing) {
            texts.push(lexicon::render_hint(&r.subject, hop(p)));
        }
    }
    texts.extend(extra.iter().map(|t| (*t).to_owned()));
    let mut ids = HashSet::new();
    let mut docs: Vec<RetrievedDoc> = texts
        .into_iter()
        .map(|t| {
            let mut id = doc_id(seed, &t);
            while !ids.insert(id.clone()) {
                id.push('x');
            }
            RetrievedDoc::new(id, t, 0.0)
        })
        .collect();
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    docs
}

impl World {
    /// All question samples, in generation order.
    pub fn dataset(&self) -> Vec<QASample> {
        self.questions.iter().map(|q| q.sample.clone()).collect()
    }

    /// Questions whose hop count lies in `hops`.
    pub fn dataset_with_hops(&self, hops: impl std::ops::RangeBounds<usize>) -> Vec<QASample> {
        self.questions
            .iter()
            .filter(|q| hops.contains(&q.hops))
            .map(|q| q.sample.clone())
            .collect()
    }

    pub fn question(&self, id: &str) -> Option<&SimQuestion> {
        self.questions.iter().find(|q| q.sample.id == id)
    }

    /// Checks internal consistency, e.g. after import.
    pub fn validate(&self) -> Result<(), WorldError> {
        let names: HashSet<&str> = self.entities.iter().map(String::as_str).collect();
        for (i, r) in self.relations.iter().enumerate() {
            if predicate_index(&r.predicate).is_none() {
                return Err(WorldError::Invalid(format!("relation {i}: unknown predicate {}", r.predicate)));
            }
            if !names.contains(r.subject.as_str()) || !names.contains(r.object.as_str()) {
                return Err(WorldError::Invalid(format!("relation {i}: unknown entity")));
            }
            if r.phrasing >= self.phrasings || self.phrasings > PHRASINGS {
                return Err(WorldError::Invalid(format!("relation {i}: phrasing {}", r.phrasing)));
            }
        }
        if self.known.iter().any(|k| *k >= self.relations.len()) {
            return Err(WorldError::Invalid("known relation out of range".into()));
        }
        for q in &self.questions {
            oracle_answer(&q.sample, self)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let world: World = serde_json::from_str(text)?;
        world.validate()?;
        Ok(world)
    }

    pub fn save(&self, path: &Path) -> Result<(), WorldError> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// The corpus as `doc_id<TAB>text` lines.
    pub fn corpus_tsv(&self) -> String {
        self.docs.iter().map(|d| format!("{}\t{}\n", d.doc_id, d.content)).collect()
    }

    /// The questions as dataset JSONL.
    pub fn dataset_jsonl(&self) -> String {
        self.questions
            .iter()
            .map(|q| serde_json::to_string(&q.sample).expect("sample serialises") + "\n")
            .collect()
    }
}

/// Follows the question's gold chain through the world's relations and
/// returns the final object.
pub fn oracle_answer(question: &QASample, world: &World) -> Result<String, WorldError> {
    let q = world
        .questions
        .iter()
        .find(|q| q.sample.id == question.id && q.sample.question == question.question)
        .ok_or_else(|| WorldError::UnknownQuestion(question.id.clone()))?;
    let broken = || WorldError::BrokenChain(question.id.clone());
    let first = q.chain.first().ok_or_else(broken)?;
    let mut entity = &world.relations.get(*first).ok_or_else(broken)?.subject;
    for &r in &q.chain {
        let relation = world.relations.get(r).ok_or_else(broken)?;
        if &relation.subject != entity {
            return Err(broken());
        }
        entity = &relation.object;
    }
    Ok(entity.clone())
}

/// Scripted model, in-memory retriever over the world's documents and a
/// hashing embedder, all seeded from `seed`.
pub fn scripted_clients(world: &World, seed: u64) -> Clients {
    let retriever = InMemoryRetriever::new(world.docs.iter().map(|d| (d.doc_id.clone(), d.content.clone())));
    Clients::new(
        Arc::new(scripted_model(world, seed)),
        Arc::new(retriever),
        Arc::new(HashingEmbedder::new(seed)),
    )
}
