//! Choosing among candidate answers, and the rewards that drive the search.
//!
//! Consensus scores follow the self-consistency idea: an answer is scored by
//! its mean similarity to every valid answer (itself included), measured
//! either as word-set Jaccard overlap or embedding cosine.

use std::{collections::BTreeSet, io::Write, sync::Arc};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{
    actions::{
        render_context_texts, sampling_params_for, ActionConfig, ActionKind, Mode, PromptSlots,
    },
    clients::{ClientError, Clients, Embedder, GenerationRequest},
    eval::{accuracy_covered, normalize_answer},
    text::word_tokens,
    tree::{SearchOutcome, Trajectory},
};

/// Normalised answers that mean "no answer".
const ABSTENTIONS: &[&str] = &["unknown", "none", "no answer", "i don t know", "not found"];

/// An answer counts toward consensus unless it is empty or an abstention.
pub fn is_valid_answer(text: &str) -> bool {
    let norm = normalize_answer(text);
    !norm.is_empty() && !ABSTENTIONS.contains(&norm.as_str())
}

/// Lowercased words with punctuation removed.
pub fn answer_word_set(text: &str) -> BTreeSet<String> {
    word_tokens(text).into_iter().collect()
}

/// |A ∩ B| / |A ∪ B|, with J(∅, ∅) = 1 and J(∅, X) = 0.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Mean Jaccard similarity of each answer to all answers, self included.
pub fn jcd_scores(answers: &[String]) -> Vec<f64> {
    let sets: Vec<_> = answers.iter().map(|a| answer_word_set(a)).collect();
    let n = sets.len() as f64;
    sets.iter()
        .map(|a| sets.iter().map(|b| jaccard(a, b)).sum::<f64>() / n)
        .collect()
}

/// Mean embedding cosine of each answer to all answers, self included.
pub fn emb_scores(answers: &[String], embedder: &dyn Embedder) -> Result<Vec<f64>, ClientError> {
    if answers.is_empty() {
        return Ok(Vec::new());
    }
    let vectors = embedder.embed(answers)?;
    let n = vectors.len() as f64;
    Ok(vectors
        .iter()
        .map(|a| vectors.iter().map(|b| a.cosine(b)).sum::<f64>() / n)
        .collect())
}

/// Rewards for the `n_all` answers sampled at one leaf: 1.0 for a single
/// sample, otherwise each answer's Jaccard consensus score.
pub fn leaf_reward(answers: &[String], n_all: usize) -> Vec<f64> {
    debug_assert_eq!(answers.len(), n_all);
    if n_all <= 1 {
        vec![1.0; answers.len()]
    } else {
        jcd_scores(answers)
    }
}

/// 1.0 when the answer covers a gold answer. Only meaningful when gold
/// answers exist, i.e. for reward-data synthesis.
pub fn training_reward(answer: &str, gold: &[String]) -> f64 {
    if normalize_answer(answer).is_empty() {
        return 0.0;
    }
    f64::from(accuracy_covered(answer, gold))
}

/// Scores a whole trajectory, e.g. a trained process reward model.
pub trait RewardScorer: Send + Sync {
    fn score(&self, trajectory: &Trajectory) -> f64;
}

/// Heuristic stand-in for a trained reward model: the mean Monte Carlo value
/// of the nodes on the path. Not a learned verifier.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanValueScorer;

impl RewardScorer for MeanValueScorer {
    fn score(&self, trajectory: &Trajectory) -> f64 {
        if trajectory.node_values.is_empty() {
            0.0
        } else {
            trajectory.node_values.iter().sum::<f64>() / trajectory.node_values.len() as f64
        }
    }
}

/// `rm_score` with the shipped heuristic scorer.
pub fn rm_score(trajectory: &Trajectory) -> f64 {
    MeanValueScorer.score(trajectory)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VerificationMethod {
    #[default]
    Jcd,
    Emb,
    SaRefine,
    RewardModel,
    /// Evaluation baseline: a seeded uniform pick, whose expected score is
    /// the mean over all candidates.
    Average,
}

impl std::str::FromStr for VerificationMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jcd" => Ok(Self::Jcd),
            "emb" => Ok(Self::Emb),
            "sa_refine" => Ok(Self::SaRefine),
            "reward_model" => Ok(Self::RewardModel),
            "average" => Ok(Self::Average),
            other => Err(format!("unknown verification method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAnswer {
    pub trajectory_id: usize,
    pub answer_text: String,
    pub jcd: Option<f64>,
    pub emb: Option<f64>,
    pub rm: Option<f64>,
    pub reward: f64,
}

impl From<&Trajectory> for CandidateAnswer {
    fn from(t: &Trajectory) -> Self {
        Self {
            trajectory_id: t.id,
            answer_text: t.answer.clone(),
            jcd: t.jcd,
            emb: t.emb,
            rm: t.rm,
            reward: t.reward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub answer: String,
    pub score: Option<f64>,
    /// The trajectory the answer came from; `None` for refined answers.
    pub trajectory_id: Option<usize>,
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("no candidate answers")]
    NoCandidates,
    #[error("no candidate carries a {0:?} score")]
    MissingScore(VerificationMethod),
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// Renders the SA prompt with the nonempty candidates as contexts and
/// returns the model's answer verbatim (trimmed).
pub fn sa_refine(
    candidates: &[String],
    question: &str,
    history: &str,
    clients: &Clients,
    config: &ActionConfig,
) -> Result<String, VerifyError> {
    let kept: Vec<&str> = candidates
        .iter()
        .map(|c| c.trim())
        .filter(|c| !c.is_empty())
        .collect();
    if kept.is_empty() {
        return Err(VerifyError::NoCandidates);
    }
    let contexts = render_context_texts(kept);
    let prompt = config.templates.fill(
        ActionKind::Sa,
        &PromptSlots {
            question,
            history,
            contexts: &contexts,
            ..Default::default()
        },
    );
    let mut sampling = sampling_params_for(ActionKind::Sa, config);
    sampling.n = 1;
    let outputs = clients.model.generate(&GenerationRequest::new(prompt, sampling))?;
    outputs
        .into_iter()
        .next()
        .map(|g| g.text.trim().to_owned())
        .ok_or_else(|| ClientError::MalformedResponse("no refined answer returned".into()).into())
}

/// Picks a final answer from `candidates` with `method`. Score-based methods
/// take the argmax (first candidate wins ties) over candidates that carry
/// the score.
pub fn select_answer(
    candidates: &[CandidateAnswer],
    method: VerificationMethod,
    question: &str,
    clients: &Clients,
    config: &ActionConfig,
    seed: u64,
) -> Result<Selection, VerifyError> {
    if candidates.is_empty() {
        return Err(VerifyError::NoCandidates);
    }
    let by_score = |score: fn(&CandidateAnswer) -> Option<f64>| {
        let mut best: Option<(&CandidateAnswer, f64)> = None;
        for c in candidates {
            if let Some(s) = score(c) {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((c, s));
                }
            }
        }
        best.map(|(c, s)| Selection {
            answer: c.answer_text.clone(),
            score: Some(s),
            trajectory_id: Some(c.trajectory_id),
        })
        .ok_or(VerifyError::MissingScore(method))
    };
    match method {
        VerificationMethod::Jcd => by_score(|c| c.jcd),
        VerificationMethod::Emb => by_score(|c| c.emb),
        VerificationMethod::RewardModel => by_score(|c| c.rm),
        VerificationMethod::Average => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = &candidates[rng.gen_range(0..candidates.len())];
            Ok(Selection {
                answer: c.answer_text.clone(),
                score: None,
                trajectory_id: Some(c.trajectory_id),
            })
        }
        VerificationMethod::SaRefine => {
            let texts: Vec<String> = candidates.iter().map(|c| c.answer_text.clone()).collect();
            let answer = sa_refine(&texts, question, "", clients, config)?;
            Ok(Selection {
                answer,
                score: None,
                trajectory_id: None,
            })
        }
    }
}

/// The verification layer used by a search: consensus and reward-model
/// scoring of trajectories, and final answer choice.
#[derive(Clone)]
pub struct Verifier {
    pub method: VerificationMethod,
    pub scorer: Arc<dyn RewardScorer>,
    pub seed: u64,
}

impl Default for Verifier {
    fn default() -> Self {
        Self::new(VerificationMethod::Jcd, 0)
    }
}

impl std::fmt::Debug for Verifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Verifier")
            .field("method", &self.method)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

impl Verifier {
    pub fn new(method: VerificationMethod, seed: u64) -> Self {
        Self {
            method,
            scorer: Arc::new(MeanValueScorer),
            seed,
        }
    }

    pub fn with_scorer(mut self, scorer: Arc<dyn RewardScorer>) -> Self {
        self.scorer = scorer;
        self
    }

    /// Fills `jcd`, `emb` and `rm` on every trajectory. Consensus scores are
    /// computed over valid answers only (N is the valid-answer count); the
    /// others keep `None`. An embedding failure leaves `emb` unset.
    pub fn attach_scores(&self, trajectories: &mut [Trajectory], clients: &Clients) {
        let valid: Vec<usize> = (0..trajectories.len())
            .filter(|&i| is_valid_answer(&trajectories[i].answer))
            .collect();
        let answers: Vec<String> = valid.iter().map(|&i| trajectories[i].answer.clone()).collect();
        for (&i, s) in valid.iter().zip(jcd_scores(&answers)) {
            trajectories[i].jcd = Some(s);
        }
        if !answers.is_empty() {
            match emb_scores(&answers, clients.embedder.as_ref()) {
                Ok(scores) => {
                    for (&i, s) in valid.iter().zip(scores) {
                        trajectories[i].emb = Some(s);
                    }
                }
                Err(e) => log::warn!("embedding scores unavailable: {e}"),
            }
        }
        for t in trajectories.iter_mut() {
            t.rm = Some(self.scorer.score(t));
        }
    }

    /// Final answer for a finished search. Blender mode refines the valid
    /// trajectory answers together with `external` candidates through SA.
    /// Otherwise `method` picks among valid answers; with no valid answer the
    /// first trajectory's answer is returned unscored.
    pub fn choose(
        &self,
        outcome: &SearchOutcome,
        question: &str,
        clients: &Clients,
        config: &ActionConfig,
        external: &[String],
    ) -> Result<Selection, VerifyError> {
        let valid: Vec<CandidateAnswer> = outcome
            .trajectories
            .iter()
            .filter(|t| is_valid_answer(&t.answer))
            .map(CandidateAnswer::from)
            .collect();
        if config.mode == Mode::Blender {
            let mut texts: Vec<String> = valid.iter().map(|c| c.answer_text.clone()).collect();
            texts.extend(external.iter().cloned());
            let answer = sa_refine(&texts, question, "", clients, config)?;
            return Ok(Selection {
                answer,
                score: None,
                trajectory_id: None,
            });
        }
        if valid.is_empty() {
            let first = outcome.trajectories.first().ok_or(VerifyError::NoCandidates)?;
            return Ok(Selection {
                answer: first.answer.clone(),
                score: None,
                trajectory_id: Some(first.id),
            });
        }
        select_answer(&valid, self.method, question, clients, config, self.seed)
    }
}

pub const SYNTHESIS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisStep {
    pub node_id: usize,
    pub action: ActionKind,
    pub query: String,
    pub output: String,
    pub q_value: f64,
    pub visits: u64,
    /// Monte Carlo value estimate `q_value / visits`.
    pub value: f64,
}

/// One line of the reward-data export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    pub schema_version: u32,
    pub question_id: String,
    pub question: String,
    pub trajectory_id: usize,
    pub answer: String,
    /// 1 if the answer covers a gold answer.
    pub label: u8,
    pub reward: f64,
    pub steps: Vec<SynthesisStep>,
}

/// Writes one JSON line per trajectory of `outcome` and returns the count.
pub fn export_synthesis_data(
    outcome: &SearchOutcome,
    question_id: &str,
    gold: &[String],
    sink: &mut impl Write,
) -> std::io::Result<usize> {
    let tree = &outcome.tree;
    for t in &outcome.trajectories {
        let steps = t.node_ids[1..]
            .iter()
            .map(|&id| {
                let node = tree.node(id);
                let step = node.state.steps.last().expect("non-root node has a step");
                SynthesisStep {
                    node_id: id,
                    action: step.action,
                    query: step.query.clone(),
                    output: step.output.clone(),
                    q_value: node.q_value,
                    visits: node.visits,
                    value: node.mean_value(),
                }
            })
            .collect();
        let record = SynthesisRecord {
            schema_version: SYNTHESIS_SCHEMA_VERSION,
            question_id: question_id.to_owned(),
            question: tree.question.clone(),
            trajectory_id: t.id,
            answer: t.answer.clone(),
            label: training_reward(&t.answer, gold) as u8,
            reward: t.reward,
            steps,
        };
        serde_json::to_writer(&mut *sink, &record)?;
        sink.write_all(b"\n")?;
    }
    Ok(outcome.trajectories.len())
}
