//! Answer normalisation and the EM / F1 / Acc metrics. All three reduce over
//! multiple gold aliases by taking the maximum.

use std::collections::HashMap;

use crate::text::{collapse_whitespace, strip_punctuation, word_tokens};

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, drop punctuation and the articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = strip_punctuation(&text.to_lowercase());
    let kept: Vec<&str> = lowered
        .split_whitespace()
        .filter(|w| !ARTICLES.contains(w))
        .collect();
    collapse_whitespace(&kept.join(" "))
}

/// 1 iff the normalised prediction equals any normalised gold answer.
pub fn exact_match(pred: &str, gold: &[String]) -> u8 {
    let pred = normalize_answer(pred);
    u8::from(gold.iter().any(|g| normalize_answer(g) == pred))
}

/// Token-level F1, maximised over gold answers. Tokens are lowercased words
/// with punctuation removed; articles are kept, so "the delaware river"
/// against "delaware river" scores 0.8.
pub fn f1(pred: &str, gold: &[String]) -> f64 {
    gold.iter()
        .map(|g| token_f1(pred, g))
        .fold(0.0, f64::max)
}

fn token_f1(pred: &str, gold: &str) -> f64 {
    let pred_tokens = word_tokens(pred);
    let gold_tokens = word_tokens(gold);
    match (pred_tokens.is_empty(), gold_tokens.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *gold_counts.entry(t.as_str()).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred_tokens {
        if let Some(c) = gold_counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred_tokens.len() as f64;
    let recall = common as f64 / gold_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// 1 iff any normalised gold answer is a substring of the normalised
/// prediction.
pub fn accuracy_covered(pred: &str, gold: &[String]) -> u8 {
    let pred = normalize_answer(pred);
    u8::from(gold.iter().any(|g| pred.contains(&normalize_answer(g))))
}

/// Model-free token estimate: whitespace pieces, each split into chunks of at
/// most four characters.
pub fn count_tokens(text: &str) -> u64 {
    text.split_whitespace()
        .map(|piece| piece.chars().count().div_ceil(4) as u64)
        .sum()
}
