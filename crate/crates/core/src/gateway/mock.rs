//! Deterministic offline backend.
//!
//! Embeddings are bags of per-token vectors: every lowercase alphanumeric
//! token maps to a seeded pseudo-random unit vector derived from its SHA-256
//! digest, the token vectors are summed and the sum is unit-normalized. A text
//! with a single token therefore gets exactly its own digest vector, and
//! lexical overlap shows up as cosine similarity.
//!
//! Entailment is `(1 + cos(premise, hypothesis)) / 2`.
//!
//! Generation tries, in order: an exact fixture keyed by the request digest,
//! the phrase vocabulary (most frequent vocabulary phrases found in the user
//! prompt), a fixed default response, and finally the first noun-like token of
//! the user prompt.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, EntailmentQuery, GenerationRequest};
use crate::error::{Error, Result};

pub const MOCK_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub seed: u64,
    pub dim: usize,
    /// Request digest (see [`GenerationRequest::digest`]) to response.
    pub fixtures: BTreeMap<String, String>,
    pub vocabulary: Vec<String>,
    pub max_phrases: usize,
    pub default_response: Option<String>,
    /// Explicit embeddings for specific texts; normalized before use.
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            seed: 0,
            dim: MOCK_DIM,
            fixtures: BTreeMap::new(),
            vocabulary: Vec::new(),
            max_phrases: 4,
            default_response: None,
            vectors: BTreeMap::new(),
        }
    }
}

impl MockConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&body)
            .map_err(|e| Error::Config(format!("mock fixture file {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    config: MockConfig,
    id: String,
    vocabulary: Vec<Vec<String>>,
    token_vectors: Arc<RwLock<HashMap<String, Arc<Vec<f64>>>>>,
}

impl MockBackend {
    pub fn new(config: MockConfig) -> Self {
        let digest = Sha256::digest(serde_json::to_vec(&config).expect("mock config serializes"));
        let id = format!("mock:{}:{}", config.seed, &hex::encode(digest)[..16]);
        let vocabulary = config.vocabulary.iter().map(|p| word_tokens(p)).collect();
        MockBackend {
            config,
            id,
            vocabulary,
            token_vectors: Arc::default(),
        }
    }

    pub fn with_seed(seed: u64) -> Self {
        MockBackend::new(MockConfig {
            seed,
            ..MockConfig::default()
        })
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        if let Some(v) = self.config.vectors.get(text) {
            return normalized(v.clone());
        }
        let tokens = word_tokens(text);
        if tokens.is_empty() {
            return token_vector(self.config.seed, text, self.config.dim);
        }
        let mut sum = vec![0.0; self.config.dim];
        for token in &tokens {
            let v = self.token_vector(token);
            for (s, x) in sum.iter_mut().zip(v.iter()) {
                *s += x;
            }
        }
        normalized(sum)
    }

    fn token_vector(&self, token: &str) -> Arc<Vec<f64>> {
        if let Some(v) = self
            .token_vectors
            .read()
            .expect("token memo poisoned")
            .get(token)
        {
            return v.clone();
        }
        let v = Arc::new(token_vector(self.config.seed, token, self.config.dim));
        self.token_vectors
            .write()
            .expect("token memo poisoned")
            .insert(token.to_string(), v.clone());
        v
    }

    fn vocabulary_response(&self, prompt: &str) -> Option<String> {
        if self.vocabulary.is_empty() {
            return None;
        }
        let tokens = word_tokens(prompt);
        let mut hits: Vec<(usize, usize)> = self
            .vocabulary
            .iter()
            .enumerate()
            .filter_map(|(i, phrase)| {
                let n = count_occurrences(&tokens, phrase);
                (n > 0).then_some((i, n))
            })
            .collect();
        if hits.is_empty() {
            return None;
        }
        hits.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let picked: Vec<&str> = hits
            .iter()
            .take(self.config.max_phrases.max(1))
            .map(|(i, _)| self.config.vocabulary[*i].as_str())
            .collect();
        Some(picked.join(", "))
    }
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<String> {
        if let Some(hit) = self.config.fixtures.get(&req.digest()) {
            return Ok(hit.clone());
        }
        if let Some(resp) = self.vocabulary_response(&req.user_prompt) {
            return Ok(resp);
        }
        if let Some(resp) = &self.config.default_response {
            return Ok(resp.clone());
        }
        Ok(first_noun_like(&req.user_prompt).unwrap_or_else(|| "unknown".to_string()))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn entail(&self, q: &EntailmentQuery) -> Result<f64> {
        let a = self.embed_one(&q.premise);
        let b = self.embed_one(&q.hypothesis);
        let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        Ok(((1.0 + cos) / 2.0).clamp(0.0, 1.0))
    }
}

/// Lowercase alphanumeric runs; everything else separates tokens.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn count_occurrences(haystack: &[String], needle: &[String]) -> usize {
    if needle.is_empty() || needle.len() > haystack.len() {
        return 0;
    }
    haystack
        .windows(needle.len())
        .filter(|w| w.iter().zip(needle).all(|(a, b)| a == b))
        .count()
}

fn token_vector(seed: u64, token: &str, dim: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(token.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalized(v)
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

const STOPWORDS: &[&str] = &[
    "about",
    "above",
    "after",
    "again",
    "also",
    "based",
    "been",
    "being",
    "below",
    "between",
    "both",
    "could",
    "does",
    "each",
    "following",
    "from",
    "have",
    "here",
    "into",
    "just",
    "more",
    "most",
    "only",
    "other",
    "over",
    "please",
    "return",
    "same",
    "some",
    "such",
    "than",
    "that",
    "their",
    "them",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "under",
    "very",
    "what",
    "when",
    "where",
    "which",
    "while",
    "will",
    "with",
    "would",
    "your",
];

fn first_noun_like(text: &str) -> Option<String> {
    text.split(|c: char| !c.is_alphabetic())
        .map(str::to_lowercase)
        .find(|w| w.chars().count() >= 4 && !STOPWORDS.contains(&w.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(user: &str) -> GenerationRequest {
        GenerationRequest::new("sys", user)
    }

    #[test]
    fn vectors_are_unit_and_deterministic() {
        let m = MockBackend::with_seed(3);
        let a = m.embed_one("gradient descent");
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(a.len(), MOCK_DIM);
        assert_eq!(a, MockBackend::with_seed(3).embed_one("gradient descent"));
        assert_ne!(a, MockBackend::with_seed(4).embed_one("gradient descent"));
        // case and punctuation do not change the bag of tokens
        assert_eq!(a, m.embed_one("Gradient, descent!"));
    }

    #[test]
    fn fixture_then_vocabulary_then_fallback() {
        let req = request("a chunk about gradient descent");
        let mut config = MockConfig::default();
        config
            .fixtures
            .insert(req.digest(), "machine learning".into());
        config.vocabulary = vec!["monetary policy".into(), "interest rates".into()];
        let m = MockBackend::new(config);
        assert_eq!(m.generate(&req).unwrap(), "machine learning");
        let r = m
            .generate(&request(
                "interest rates rose; monetary policy, monetary policy again",
            ))
            .unwrap();
        assert_eq!(r, "monetary policy, interest rates");
        assert_eq!(
            m.generate(&request("The quarterly report")).unwrap(),
            "quarterly"
        );
    }

    #[test]
    fn entailment_of_identical_texts_is_one() {
        let m = MockBackend::with_seed(1);
        let q = EntailmentQuery::new("sports news", "sports news");
        assert!((m.entail(&q).unwrap() - 1.0).abs() < 1e-12);
    }
}
