//! Chat-completions style HTTP backends.
//!
//! The model client posts to `{base_url}/chat/completions`, the embedder to
//! `{base_url}/embeddings` and the retriever to `{base_url}/retrieve` with
//! `{"query": .., "k": ..}`, expecting `{"docs": [{"doc_id", "content",
//! "score"}]}`. All three retry transient failures with capped exponential
//! backoff.

use std::{
    sync::{
        atomic::{AtomicU64, Ordering},
        Arc,
    },
    thread,
    time::Duration,
};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    rank_docs, ChatModel, ClientError, Embedder, EmbeddingVector, Generation, GenerationRequest,
    RetrievedDoc, Retriever,
};
use crate::eval::count_tokens;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HttpConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
    pub model: String,
    pub embedding_model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            api_key_env: None,
            model: "default".into(),
            embedding_model: "default".into(),
            timeout_secs: 60,
            max_retries: 4,
            backoff_base_ms: 500,
            backoff_max_ms: 8_000,
        }
    }
}

impl HttpConfig {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: Duration::from_millis(self.backoff_base_ms),
            max_delay: Duration::from_millis(self.backoff_max_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): base * 2^retry, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(20)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Counters shared by the clones of one client.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClientStats {
    pub calls: u64,
    pub attempts: u64,
    pub retries: u64,
    pub failures: u64,
}

#[derive(Debug, Default)]
struct StatCounters {
    calls: AtomicU64,
    attempts: AtomicU64,
    retries: AtomicU64,
    failures: AtomicU64,
}

#[derive(Debug, Clone)]
struct Transport {
    http: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    stats: Arc<StatCounters>,
}

impl Transport {
    fn new(config: &HttpConfig) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok());
        Ok(Self {
            http,
            base_url: config.base_url.trim_end_matches('/').to_owned(),
            api_key,
            retry: config.retry_policy(),
            stats: Arc::default(),
        })
    }

    fn attempt(&self, path: &str, body: &Value) -> Result<Value, ClientError> {
        let mut request = self.http.post(format!("{}/{path}", self.base_url)).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                ClientError::Timeout(e.to_string())
            } else {
                ClientError::Transport(e.to_string())
            }
        })?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::HttpStatus {
                status: status.as_u16(),
                body: text.chars().take(512).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| ClientError::MalformedResponse(e.to_string()))
    }

    /// Posts `body` and parses the reply with `parse`, retrying retryable
    /// failures (including parse failures) up to the policy's cap.
    fn post<T>(
        &self,
        path: &str,
        body: &Value,
        parse: impl Fn(&Value) -> Result<T, ClientError>,
    ) -> Result<T, ClientError> {
        self.stats.calls.fetch_add(1, Ordering::Relaxed);
        let mut retry = 0;
        loop {
            self.stats.attempts.fetch_add(1, Ordering::Relaxed);
            let err = match self.attempt(path, body).and_then(|v| parse(&v)) {
                Ok(value) => return Ok(value),
                Err(err) => err,
            };
            if !err.is_retryable() || retry >= self.retry.max_retries {
                self.stats.failures.fetch_add(1, Ordering::Relaxed);
                return Err(err);
            }
            log::warn!("{path}: {err}; retry {} of {}", retry + 1, self.retry.max_retries);
            thread::sleep(self.retry.delay(retry));
            self.stats.retries.fetch_add(1, Ordering::Relaxed);
            retry += 1;
        }
    }

    fn stats(&self) -> ClientStats {
        ClientStats {
            calls: self.stats.calls.load(Ordering::Relaxed),
            attempts: self.stats.attempts.load(Ordering::Relaxed),
            retries: self.stats.retries.load(Ordering::Relaxed),
            failures: self.stats.failures.load(Ordering::Relaxed),
        }
    }
}

fn malformed(what: &str) -> ClientError {
    ClientError::MalformedResponse(format!("missing or invalid `{what}`"))
}

#[derive(Debug, Clone)]
pub struct HttpChatModel {
    transport: Transport,
    model: String,
}

impl HttpChatModel {
    pub fn new(config: &HttpConfig) -> Result<Self, ClientError> {
        Ok(Self {
            transport: Transport::new(config)?,
            model: config.model.clone(),
        })
    }

    pub fn stats(&self) -> ClientStats {
        self.transport.stats()
    }
}

fn parse_chat(value: &Value, prompt_tokens: u64) -> Result<Vec<Generation>, ClientError> {
    let choices = value
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("choices"))?;
    let usage_in = value
        .pointer("/usage/prompt_tokens")
        .and_then(Value::as_u64)
        .unwrap_or(prompt_tokens);
    choices
        .iter()
        .map(|choice| {
            let text = choice
                .pointer("/message/content")
                .or_else(|| choice.get("text"))
                .and_then(Value::as_str)
                .ok_or_else(|| malformed("choices[].message.content"))?;
            Ok(Generation {
                text: text.to_owned(),
                tokens_in: usage_in,
                tokens_out: count_tokens(text),
            })
        })
        .collect()
}

impl ChatModel for HttpChatModel {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<Generation>, ClientError> {
        req.validate()?;
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "n": req.sampling.n,
            "top_p": req.sampling.top_p,
            "top_k": req.sampling.top_k,
            "temperature": req.sampling.temperature,
        });
        if let Some(stop) = &req.stop {
            body["stop"] = json!(stop);
        }
        let prompt_tokens = count_tokens(&req.prompt);
        let mut generations = self
            .transport
            .post("chat/completions", &body, |v| parse_chat(v, prompt_tokens))?;
        generations.truncate(req.sampling.n as usize);
        Ok(generations)
    }
}

#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    transport: Transport,
    model: String,
}

impl HttpEmbedder {
    pub fn new(config: &HttpConfig) -> Result<Self, ClientError> {
        Ok(Self {
            transport: Transport::new(config)?,
            model: config.embedding_model.clone(),
        })
    }

    pub fn stats(&self) -> ClientStats {
        self.transport.stats()
    }
}

fn parse_embeddings(value: &Value, expected: usize) -> Result<Vec<EmbeddingVector>, ClientError> {
    let data = value
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("data"))?;
    let mut rows: Vec<(u64, Vec<f64>)> = data
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let index = row.get("index").and_then(Value::as_u64).unwrap_or(i as u64);
            let values = row
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed("data[].embedding"))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| malformed("data[].embedding[]")))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((index, values))
        })
        .collect::<Result<_, ClientError>>()?;
    rows.sort_by_key(|(i, _)| *i);
    if rows.len() != expected {
        return Err(ClientError::MalformedResponse(format!(
            "expected {expected} embeddings, got {}",
            rows.len()
        )));
    }
    let dim = rows.first().map(|(_, v)| v.len()).unwrap_or(0);
    if rows.iter().any(|(_, v)| v.len() != dim) {
        return Err(ClientError::MalformedResponse("ragged embedding batch".into()));
    }
    Ok(rows.into_iter().map(|(_, v)| EmbeddingVector::new(v)).collect())
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ClientError> {
        if texts.is_empty() {
            return Err(ClientError::InvalidRequest("nothing to embed".into()));
        }
        let body = json!({"model": self.model, "input": texts});
        self.transport
            .post("embeddings", &body, |v| parse_embeddings(v, texts.len()))
    }
}

#[derive(Debug, Clone)]
pub struct HttpRetriever {
    transport: Transport,
}

impl HttpRetriever {
    pub fn new(config: &HttpConfig) -> Result<Self, ClientError> {
        Ok(Self {
            transport: Transport::new(config)?,
        })
    }

    pub fn stats(&self) -> ClientStats {
        self.transport.stats()
    }
}

fn parse_docs(value: &Value) -> Result<Vec<RetrievedDoc>, ClientError> {
    let docs = value
        .get("docs")
        .or(Some(value))
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("docs"))?;
    docs.iter()
        .map(|d| serde_json::from_value(d.clone()).map_err(|e| ClientError::MalformedResponse(e.to_string())))
        .collect()
}

impl Retriever for HttpRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievedDoc>, ClientError> {
        if k == 0 {
            return Err(ClientError::InvalidRequest("k must be at least 1".into()));
        }
        let body = json!({"query": query, "k": k});
        let docs = self.transport.post("retrieve", &body, parse_docs)?;
        Ok(rank_docs(docs, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_retries: 5,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
        };
        assert_eq!(p.delay(0), Duration::from_millis(100));
        assert_eq!(p.delay(1), Duration::from_millis(200));
        assert_eq!(p.delay(2), Duration::from_millis(350));
        assert_eq!(p.delay(60), Duration::from_millis(350));
    }

    #[test]
    fn chat_parsing() {
        let v = json!({"choices": [{"message": {"content": "a b"}}, {"text": "c"}], "usage": {"prompt_tokens": 7}});
        let g = parse_chat(&v, 3).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!((g[0].text.as_str(), g[0].tokens_in, g[0].tokens_out), ("a b", 7, 2));
        assert!(parse_chat(&json!({"nope": 1}), 0).is_err());
    }

    #[test]
    fn embedding_parsing_orders_by_index() {
        let v = json!({"data": [{"index": 1, "embedding": [0.0, 1.0]}, {"index": 0, "embedding": [1.0, 0.0]}]});
        let e = parse_embeddings(&v, 2).unwrap();
        assert_eq!(e[0].values, vec![1.0, 0.0]);
        assert!(parse_embeddings(&v, 3).is_err());
    }

    #[test]
    fn docs_parsing_accepts_bare_arrays() {
        let v = json!([{"doc_id": "x", "content": "c", "score": 1.0}]);
        assert_eq!(parse_docs(&v).unwrap().len(), 1);
        let v = json!({"docs": [{"doc_id": "x", "content": "c", "score": 1.0}]});
        assert_eq!(parse_docs(&v).unwrap()[0].doc_id, "x");
    }
}
