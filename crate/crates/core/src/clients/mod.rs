//! Model, retrieval and embedding backends.
//!
//! Each backend is a trait object so searches can share one set of clients
//! across threads. [`scripted`] holds deterministic in-process
//! implementations; [`http`] talks to chat-completions style services.

pub mod http;
pub mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::SamplingPolicy;

pub use http::{ClientStats, HttpChatModel, HttpConfig, HttpEmbedder, HttpRetriever, RetryPolicy};
pub use scripted::{HashingEmbedder, InMemoryRetriever, ScriptedModel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("backend returned HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unrecognized prompt template: {0}")]
    UnrecognizedTemplate(String),
}

impl ClientError {
    /// Timeouts, transport failures, 429/5xx and unparsable bodies are worth
    /// another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Timeout(_) | Self::Transport(_) | Self::MalformedResponse(_) => true,
            Self::HttpStatus { status, .. } => *status == 429 || *status >= 500,
            Self::InvalidRequest(_) | Self::UnrecognizedTemplate(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub sampling: SamplingPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, sampling: SamplingPolicy) -> Self {
        Self {
            prompt: prompt.into(),
            sampling,
            stop: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.prompt.trim().is_empty() {
            return Err(ClientError::InvalidRequest("empty prompt".into()));
        }
        self.sampling.validate().map_err(ClientError::InvalidRequest)
    }
}

/// One sampled sequence with its token accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub doc_id: String,
    pub content: String,
    pub score: f64,
}

impl RetrievedDoc {
    pub fn new(doc_id: impl Into<String>, content: impl Into<String>, score: f64) -> Self {
        Self {
            doc_id: doc_id.into(),
            content: content.into(),
            score,
        }
    }
}

/// Sorts by descending score then ascending doc id, drops duplicate ids,
/// empty contents and non-finite scores, and keeps at most `k`.
pub fn rank_docs(mut docs: Vec<RetrievedDoc>, k: usize) -> Vec<RetrievedDoc> {
    docs.retain(|d| d.score.is_finite() && !d.content.trim().is_empty());
    docs.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    let mut seen = std::collections::HashSet::new();
    docs.retain(|d| seen.insert(d.doc_id.clone()));
    docs.truncate(k);
    docs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self { values, norm }
    }

    /// Cosine similarity. A zero vector is similar only to another zero
    /// vector, mirroring the empty-set Jaccard convention.
    pub fn cosine(&self, other: &Self) -> f64 {
        match (self.norm == 0.0, other.norm == 0.0) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ => {
                let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
                (dot / (self.norm * other.norm)).clamp(-1.0, 1.0)
            }
        }
    }
}

pub trait ChatModel: Send + Sync {
    /// Up to `req.sampling.n` sequences (exactly n for in-process models).
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<Generation>, ClientError>;
}

pub trait Retriever: Send + Sync {
    /// At most `k` documents, descending score, ties by doc id.
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievedDoc>, ClientError>;
}

pub trait Embedder: Send + Sync {
    /// One vector per input, in input order, all of the same length.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ClientError>;
}

/// The backend handles a search needs. Cheap to clone and shareable across
/// threads.
#[derive(Clone)]
pub struct Clients {
    pub model: Arc<dyn ChatModel>,
    pub retriever: Arc<dyn Retriever>,
    pub embedder: Arc<dyn Embedder>,
}

impl Clients {
    pub fn new(
        model: Arc<dyn ChatModel>,
        retriever: Arc<dyn Retriever>,
        embedder: Arc<dyn Embedder>,
    ) -> Self {
        Self {
            model,
            retriever,
            embedder,
        }
    }
}

impl std::fmt::Debug for Clients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Clients").finish_non_exhaustive()
    }
}
