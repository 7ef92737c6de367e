//! QA metrics, token accounting, datasets and batch evaluation.

mod budget;
mod metrics;

use std::{
    fs,
    io::{self, BufRead},
    path::Path,
};

use rand::{seq::index, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use budget::{Budget, BudgetExhausted};
pub use metrics::{accuracy_covered, count_tokens, exact_match, f1, normalize_answer};

use crate::{
    clients::Clients,
    exec::{map_ordered, ExecPolicy},
    text::fnv1a,
    tree::{search, SearchConfig, SearchError, SearchOutcome},
    verify::{is_valid_answer, Selection, VerificationMethod, Verifier, VerifyError},
};

/// One question with its gold answers. In JSONL the gold list is the
/// `answers` field; `candidates` optionally carries external answers for
/// blender mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QASample {
    pub id: String,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<String>,
}

impl QASample {
    pub fn new(id: impl Into<String>, question: impl Into<String>, gold: Vec<String>) -> Self {
        Self {
            id: id.into(),
            question: question.into(),
            gold_answers: gold,
            candidates: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading dataset: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
}

/// Parses JSONL (one [`QASample`] per line, blank lines ignored).
pub fn parse_dataset(reader: impl BufRead) -> Result<Vec<QASample>, DatasetError> {
    let mut samples = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: QASample =
            serde_json::from_str(&line).map_err(|source| DatasetError::Parse { line: i + 1, source })?;
        if !ids.insert(sample.id.clone()) {
            return Err(DatasetError::DuplicateId { line: i + 1, id: sample.id });
        }
        samples.push(sample);
    }
    Ok(samples)
}

pub fn load_dataset(path: &Path) -> Result<Vec<QASample>, DatasetError> {
    parse_dataset(io::BufReader::new(fs::File::open(path)?))
}

/// A fixed-seed subset of `n` samples, kept in dataset order. Returns all
/// samples when `n` covers the dataset.
pub fn subset(samples: &[QASample], n: usize, seed: u64) -> Vec<QASample> {
    if n >= samples.len() {
        return samples.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, samples.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| samples[i].clone()).collect()
}

/// Everything needed to answer one question.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub method: VerificationMethod,
    /// Base seed; each question derives its own from this and its id.
    #[serde(default)]
    pub seed: u64,
    /// External candidates added to every question in blender mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<String>,
}

impl PipelineConfig {
    pub fn question_seed(&self, sample_id: &str) -> u64 {
        fnv1a(sample_id.as_bytes(), self.seed)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

#[derive(Debug, Clone)]
pub struct QuestionResult {
    pub selection: Selection,
    pub outcome: SearchOutcome,
}

/// Searches one question and picks its final answer.
pub fn answer_question(
    sample: &QASample,
    pipeline: &PipelineConfig,
    clients: &Clients,
) -> Result<QuestionResult, PipelineError> {
    let seed = pipeline.question_seed(&sample.id);
    let mut config = pipeline.search.clone();
    config.rng_seed = seed;
    let verifier = Verifier::new(pipeline.method, seed);
    let outcome = search(&sample.question, &config, clients, &verifier)?;
    let mut external = sample.candidates.clone();
    external.extend(pipeline.candidates.iter().cloned());
    let selection = verifier.choose(&outcome, &sample.question, clients, &config.actions, &external)?;
    Ok(QuestionResult { selection, outcome })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: String,
    pub answer: String,
    pub em: f64,
    pub f1: f64,
    pub acc: f64,
    pub tokens_used: u64,
    pub rollouts_used: u32,
    pub trajectories: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub em: f64,
    pub f1: f64,
    pub acc: f64,
    pub mean_tokens: f64,
    pub failures: usize,
}

/// Results of one evaluation run. Contains no timing or host data, so equal
/// inputs give byte-identical serialisations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// The effective configuration the run used.
    pub config: serde_json::Value,
    pub summary: EvalSummary,
    pub per_sample: Vec<SampleResult>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// One row per sample with the columns of [`SampleResult`].
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record([
            "id", "answer", "em", "f1", "acc", "tokens_used", "rollouts_used", "trajectories", "error",
        ])?;
        for r in &self.per_sample {
            writer.write_record([
                r.id.clone(),
                r.answer.clone(),
                r.em.to_string(),
                r.f1.to_string(),
                r.acc.to_string(),
                r.tokens_used.to_string(),
                r.rollouts_used.to_string(),
                r.trajectories.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        let bytes = writer.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_json(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_json() + "\n")
    }

    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        let text = self.to_csv().map_err(io::Error::other)?;
        fs::write(path, text)
    }
}

fn score(sample: &QASample, result: &QuestionResult, method: VerificationMethod, blender: bool) -> (f64, f64, f64) {
    let gold = &sample.gold_answers;
    let one = |a: &str| {
        (
            f64::from(exact_match(a, gold)),
            f1(a, gold),
            f64::from(accuracy_covered(a, gold)),
        )
    };
    if method != VerificationMethod::Average || blender {
        return one(&result.selection.answer);
    }
    // The average baseline reports the expected score of a uniform pick.
    let trajs = &result.outcome.trajectories;
    let valid: Vec<&str> = trajs
        .iter()
        .map(|t| t.answer.as_str())
        .filter(|a| is_valid_answer(a))
        .collect();
    let pool: Vec<&str> = if valid.is_empty() {
        trajs.iter().map(|t| t.answer.as_str()).collect()
    } else {
        valid
    };
    if pool.is_empty() {
        return one(&result.selection.answer);
    }
    let n = pool.len() as f64;
    let (em, f, acc) = pool.iter().map(|a| one(a)).fold((0.0, 0.0, 0.0), |s, x| (s.0 + x.0, s.1 + x.1, s.2 + x.2));
    (em / n, f / n, acc / n)
}

/// Evaluates `pipeline` on every sample. A failing question scores zero and
/// records its error; it does not stop the run.
pub fn evaluate(
    dataset: &[QASample],
    pipeline: &PipelineConfig,
    clients: &Clients,
    policy: ExecPolicy,
) -> EvalReport {
    let blender = pipeline.search.mode() == crate::actions::Mode::Blender;
    let per_sample = map_ordered(dataset, policy, |_, sample| {
        match answer_question(sample, pipeline, clients) {
            Ok(result) => {
                let (em, f1, acc) = score(sample, &result, pipeline.method, blender);
                SampleResult {
                    id: sample.id.clone(),
                    answer: result.selection.answer.clone(),
                    em,
                    f1,
                    acc,
                    tokens_used: result.outcome.budget.used,
                    rollouts_used: result.outcome.rollouts_completed,
                    trajectories: result.outcome.trajectories.len(),
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("question {} failed: {e}", sample.id);
                SampleResult {
                    id: sample.id.clone(),
                    answer: String::new(),
                    em: 0.0,
                    f1: 0.0,
                    acc: 0.0,
                    tokens_used: 0,
                    rollouts_used: 0,
                    trajectories: 0,
                    error: Some(e.to_string()),
                }
            }
        }
    });
    EvalReport {
        config: serde_json::to_value(pipeline).expect("config serialises"),
        summary: summarize(&per_sample),
        per_sample,
    }
}

pub fn summarize(results: &[SampleResult]) -> EvalSummary {
    let n = results.len();
    let mean = |f: fn(&SampleResult) -> f64| {
        if n == 0 {
            0.0
        } else {
            results.iter().map(f).sum::<f64>() / n as f64
        }
    };
    EvalSummary {
        n,
        em: mean(|r| r.em),
        f1: mean(|r| r.f1),
        acc: mean(|r| r.acc),
        mean_tokens: mean(|r| r.tokens_used as f64),
        failures: results.iter().filter(|r| r.error.is_some()).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_parsing() {
        let text = r#"{"id":"a","question":"Q1?","answers":["x","y"]}

{"id":"b","question":"Q2?","answers":["z"],"candidates":["c"]}
"#;
        let ds = parse_dataset(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[0].gold_answers, ["x", "y"]);
        assert_eq!(ds[1].candidates, ["c"]);
        let bad = "{\"id\":\"a\",\"question\":\"q\"}\n";
        assert!(matches!(parse_dataset(bad.as_bytes()), Err(DatasetError::Parse { line: 1, .. })));
        let dup = "{\"id\":\"a\",\"question\":\"q\",\"answers\":[]}\n{\"id\":\"a\",\"question\":\"q\",\"answers\":[]}\n";
        assert!(matches!(parse_dataset(dup.as_bytes()), Err(DatasetError::DuplicateId { line: 2, .. })));
    }

    #[test]
    fn subsets_are_fixed_and_ordered() {
        let ds: Vec<QASample> = (0..100).map(|i| QASample::new(format!("{i}"), "q", vec![])).collect();
        let a = subset(&ds, 10, 3);
        assert_eq!(a, subset(&ds, 10, 3));
        assert_ne!(a, subset(&ds, 10, 4));
        let ids: Vec<usize> = a.iter().map(|s| s.id.parse().unwrap()).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subset(&ds, 500, 0).len(), 100);
    }

    #[test]
    fn summary_means() {
        let r = |em: f64, err: bool| SampleResult {
            id: "x".into(),
            answer: String::new(),
            em,
            f1: em,
            acc: em,
            tokens_used: 10,
            rollouts_used: 1,
            trajectories: 1,
            error: err.then(|| "boom".into()),
        };
        let s = summarize(&[r(1.0, false), r(0.0, true)]);
        assert_eq!((s.n, s.em, s.failures, s.mean_tokens), (2, 0.5, 1, 10.0));
        assert_eq!(summarize(&[]).em, 0.0);
    }

    #[test]
    fn csv_quotes_fields() {
        let report = EvalReport {
            config: serde_json::json!({}),
            summary: summarize(&[]),
            per_sample: vec![SampleResult {
                id: "a".into(),
                answer: "Delaware River, PA".into(),
                em: 1.0,
                f1: 1.0,
                acc: 1.0,
                tokens_used: 3,
                rollouts_used: 2,
                trajectories: 1,
                error: None,
            }],
        };
        let csv = report.to_csv().unwrap();
        assert_eq!(
            csv,
            "id,answer,em,f1,acc,tokens_used,rollouts_used,trajectories,error\na,\"Delaware River, PA\",1,1,1,3,2,1,\n"
        );
    }
}
