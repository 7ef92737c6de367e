//! Deterministic in-process backends. Every output is a pure function of the
//! inputs and the construction seed.

use std::{collections::HashSet, fs, io, path::Path};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    rank_docs, ChatModel, ClientError, Embedder, EmbeddingVector, Generation, GenerationRequest,
    RetrievedDoc, Retriever,
};
use crate::{eval::count_tokens, text::{fnv1a, word_tokens}};

type SampleFn = dyn Fn(&GenerationRequest, usize, &mut ChaCha8Rng) -> Result<String, ClientError>
    + Send
    + Sync;

/// A chat model driven by a closure. Sample `i` of a request receives its own
/// RNG seeded from (model seed, prompt, i), so repeated calls are
/// byte-identical. Stop sequences are applied after the closure runs.
pub struct ScriptedModel {
    seed: u64,
    sample: Box<SampleFn>,
}

impl ScriptedModel {
    pub fn new(
        seed: u64,
        sample: impl Fn(&GenerationRequest, usize, &mut ChaCha8Rng) -> Result<String, ClientError>
            + Send
            + Sync
            + 'static,
    ) -> Self {
        Self {
            seed,
            sample: Box::new(sample),
        }
    }

    /// Always answers `text`.
    pub fn constant(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(0, move |_, _, _| Ok(text.clone()))
    }

    pub fn sample_rng(&self, prompt: &str, index: usize) -> ChaCha8Rng {
        let base = fnv1a(prompt.as_bytes(), self.seed);
        ChaCha8Rng::seed_from_u64(base ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

impl ChatModel for ScriptedModel {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<Generation>, ClientError> {
        req.validate()?;
        let tokens_in = count_tokens(&req.prompt);
        (0..req.sampling.n as usize)
            .map(|i| {
                let mut rng = self.sample_rng(&req.prompt, i);
                let raw = (self.sample)(req, i, &mut rng)?;
                let text = apply_stop(&raw, req.stop.as_deref());
                Ok(Generation {
                    tokens_out: count_tokens(&text),
                    text,
                    tokens_in,
                })
            })
            .collect()
    }
}

/// Truncates at the earliest stop sequence.
pub fn apply_stop(text: &str, stop: Option<&[String]>) -> String {
    let cut = stop
        .unwrap_or_default()
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_owned()
}

pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "did", "do", "does", "for", "from", "how",
    "in", "is", "it", "its", "of", "on", "or", "s", "that", "the", "this", "to", "was", "were",
    "what", "when", "where", "which", "who", "whom", "with",
];

/// Distinct content words of `text`.
pub fn content_tokens(text: &str) -> HashSet<String> {
    word_tokens(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Scores each document by the number of distinct query content words it
/// contains. A query matching no document returns nothing; otherwise every
/// document is ranked, zero-overlap ones last, so `k` at least the corpus
/// size yields the whole corpus.
pub struct InMemoryRetriever {
    docs: Vec<(RetrievedDoc, HashSet<String>)>,
}

impl InMemoryRetriever {
    /// Later documents reusing an earlier doc id are ignored.
    pub fn new(docs: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut seen = HashSet::new();
        let docs = docs
            .into_iter()
            .filter(|(id, content)| !content.trim().is_empty() && seen.insert(id.clone()))
            .map(|(id, content)| {
                let tokens = content_tokens(&content);
                (RetrievedDoc::new(id, content, 0.0), tokens)
            })
            .collect();
        Self { docs }
    }

    /// Parses a corpus with one `doc_id<TAB>text` document per line.
    pub fn parse_corpus(text: &str) -> io::Result<Self> {
        let mut docs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, content) = line.split_once('\t').ok_or_else(|| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("corpus line {} has no tab separator", lineno + 1),
                )
            })?;
            docs.push((id.trim().to_owned(), content.trim().to_owned()));
        }
        Ok(Self::new(docs))
    }

    pub fn load_corpus(path: &Path) -> io::Result<Self> {
        Self::parse_corpus(&fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

impl Retriever for InMemoryRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievedDoc>, ClientError> {
        if k == 0 {
            return Err(ClientError::InvalidRequest("k must be at least 1".into()));
        }
        let query = content_tokens(query);
        let scored: Vec<RetrievedDoc> = self
            .docs
            .iter()
            .map(|(doc, tokens)| RetrievedDoc {
                score: query.iter().filter(|t| tokens.contains(*t)).count() as f64,
                ..doc.clone()
            })
            .collect();
        if scored.iter().all(|d| d.score == 0.0) {
            return Ok(Vec::new());
        }
        Ok(rank_docs(scored, k))
    }
}

/// Feature-hashing embedder: every unigram and adjacent-word bigram adds its
/// weight to one seeded bucket. Weights are positive, so any nonempty text
/// has a positive norm, and texts whose features land in disjoint buckets
/// are exactly orthogonal.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    seed: u64,
}

impl HashingEmbedder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(seed: u64) -> Self {
        Self::with_dim(seed, Self::DEFAULT_DIM)
    }

    pub fn with_dim(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bucket(&self, feature: &str) -> usize {
        (fnv1a(feature.as_bytes(), self.seed) % self.dim as u64) as usize
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let words = word_tokens(text);
        let mut values = vec![0.0; self.dim];
        for w in &words {
            values[self.bucket(w)] += 1.0;
        }
        for pair in words.windows(2) {
            values[self.bucket(&format!("{} {}", pair[0], pair[1]))] += 0.5;
        }
        EmbeddingVector::new(values)
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ClientError> {
        if texts.is_empty() {
            return Err(ClientError::InvalidRequest("nothing to embed".into()));
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::SamplingPolicy;
    use rand::Rng;

    fn noisy_model() -> ScriptedModel {
        ScriptedModel::new(9, |req, i, rng| Ok(format!("{}#{i}#{}\nmore", req.prompt, rng.gen::<u32>())))
    }

    #[test]
    fn scripted_model_is_deterministic() {
        let req = GenerationRequest::new("hello", SamplingPolicy::with_n(2));
        let a = noisy_model().generate(&req).unwrap();
        let b = noisy_model().generate(&req).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a, b);
        assert_ne!(a[0].text, a[1].text);
    }

    #[test]
    fn stop_sequences_truncate() {
        let mut req = GenerationRequest::new("hello", SamplingPolicy::with_n(1));
        req.stop = Some(vec!["\n".into()]);
        let out = noisy_model().generate(&req).unwrap();
        assert_eq!(out.len(), 1);
        assert!(!out[0].text.contains('\n'));
        assert_eq!(apply_stop("abcXdefY", Some(&["Y".into(), "X".into()])), "abc");
    }

    #[test]
    fn empty_prompt_rejected() {
        let req = GenerationRequest::new("  ", SamplingPolicy::default());
        assert!(matches!(noisy_model().generate(&req), Err(ClientError::InvalidRequest(_))));
    }

    fn pets() -> InMemoryRetriever {
        InMemoryRetriever::parse_corpus("d1\tcats purr\nd2\tdogs bark\n").unwrap()
    }

    #[test]
    fn retrieval_examples() {
        let r = pets();
        let hits = r.retrieve("purr", 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc_id, "d1");
        let all = r.retrieve("cats or dogs", 10).unwrap();
        let ids: Vec<_> = all.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["d1", "d2"]);
        assert!(r.retrieve("parrots squawk", 3).unwrap().is_empty());
        let whole = r.retrieve("purr", 10).unwrap();
        let scores: Vec<_> = whole.iter().map(|d| (d.doc_id.as_str(), d.score)).collect();
        assert_eq!(scores, [("d1", 1.0), ("d2", 0.0)]);
        assert!(r.retrieve("purr", 0).is_err());
    }

    #[test]
    fn retrieval_matches_brute_force_overlap() {
        let r = pets();
        // cats purr: {cats, purr}; dogs bark: {dogs, bark}
        let hits = r.retrieve("do cats bark or purr", 2).unwrap();
        assert_eq!(hits[0].doc_id, "d1");
        assert_eq!(hits[0].score, 2.0);
        assert_eq!(hits[1].doc_id, "d2");
        assert_eq!(hits[1].score, 1.0);
    }

    #[test]
    fn corpus_requires_tabs() {
        assert!(InMemoryRetriever::parse_corpus("d1 no tab here").is_err());
        let r = InMemoryRetriever::parse_corpus("d1\ta\n\nd1\tb\n").unwrap();
        assert_eq!(r.len(), 1);
    }

    #[test]
    fn embedder_contract() {
        let e = HashingEmbedder::new(3);
        let texts: Vec<String> = ["delaware river", "delaware river", "mohawk"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let v = e.embed(&texts).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|x| x.values.len() == 64));
        assert_eq!(v[0], v[1]);
        assert!((v[0].cosine(&v[1]) - 1.0).abs() < 1e-12);
        assert_eq!(HashingEmbedder::new(3).embed_one("x y"), e.embed_one("x y"));
        assert!(e.embed_one("anything").norm > 0.0);
        assert!(e.embed(&[]).is_err());
    }
}
