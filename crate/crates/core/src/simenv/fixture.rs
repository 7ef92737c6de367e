//! A hand-built world around a two-hop bridge/river question, with a
//! free-text distractor naming a different river.

use super::{build_docs, predicate_index, render_query, Hop, Relation, SimQuestion, World, PHRASINGS};
use crate::eval::QASample;

pub const BARTRAM_QUESTION: &str =
    "What is the mouth of watercourse for the body of water where Bartram's Covered Bridge is located?";

const BRIDGE: &str = "Bartram's Covered Bridge";
const CREEK: &str = "Crum Creek";
const RIVER: &str = "Delaware River";

const DISTRACTOR: &str =
    "Crum Creek (also called Cathatachua Creek) in East Creek, New York, flows into the Mohawk River.";

pub fn bartram_world() -> World {
    let relations = vec![
        Relation {
            subject: BRIDGE.into(),
            predicate: "located_on".into(),
            object: CREEK.into(),
            phrasing: 0,
        },
        Relation {
            subject: CREEK.into(),
            predicate: "flows_into".into(),
            object: RIVER.into(),
            phrasing: 0,
        },
    ];
    let hop = |name: &str| Hop {
        predicate: predicate_index(name).expect("lexicon predicate"),
        phrasing: 0,
    };
    let main = render_query(BRIDGE, &[hop("located_on"), hop("flows_into")]);
    debug_assert_eq!(main, BARTRAM_QUESTION);
    let question = |id: &str, text: String, chain: Vec<usize>, gold: &str| SimQuestion {
        sample: QASample::new(id, text, vec![gold.to_owned()]),
        hops: chain.len(),
        chain,
    };
    let questions = vec![
        question("bartram-2hop", main, vec![0, 1], RIVER),
        question("bartram-bridge", render_query(BRIDGE, &[hop("located_on")]), vec![0], CREEK),
        question("bartram-creek", render_query(CREEK, &[hop("flows_into")]), vec![1], RIVER),
    ];
    World {
        seed: 0,
        phrasings: PHRASINGS,
        entities: vec![BRIDGE.into(), CREEK.into(), RIVER.into()],
        docs: build_docs(0, &relations, PHRASINGS, &[DISTRACTOR]),
        relations,
        questions,
        known: Vec::new(),
    }
}
