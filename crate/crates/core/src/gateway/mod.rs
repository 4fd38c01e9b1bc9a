//! Uniform access to text generation, embedding and entailment backends.
//!
//! A [`Gateway`] wraps one [`Backend`] with a content-addressed response
//! cache, call counters, coalescing of concurrent identical requests and a
//! bounded worker pool for batch calls.

mod cache;
mod http;
mod mock;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::{FlushScope, ResponseCache};
pub use http::{HttpBackend, HttpConfig};
pub use mock::{word_tokens, MockBackend, MockConfig, MOCK_DIM};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Generate,
    Embed,
    Entail,
}

impl Capability {
    pub fn as_str(self) -> &'static str {
        match self {
            Capability::Generate => "generate",
            Capability::Embed => "embed",
            Capability::Entail => "entail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl GenerationRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        GenerationRequest {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            max_tokens: 128,
            temperature: 0.0,
        }
    }

    pub fn validate(&self, deterministic: bool) -> Result<()> {
        if self.system_prompt.trim().is_empty() || self.user_prompt.trim().is_empty() {
            return Err(Error::Validation("prompts must be non-empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Validation("temperature must be >= 0".into()));
        }
        if deterministic && self.temperature != 0.0 {
            return Err(Error::Config(
                "temperature must be 0 when the determinism flag is set".into(),
            ));
        }
        Ok(())
    }

    /// Sorted-field serialization with whitespace-normalized prompts.
    pub fn canonical(&self) -> String {
        let mut fields = BTreeMap::new();
        fields.insert("max_tokens", serde_json::json!(self.max_tokens));
        fields.insert(
            "system_prompt",
            serde_json::json!(normalize_ws(&self.system_prompt)),
        );
        fields.insert("temperature", serde_json::json!(self.temperature));
        fields.insert(
            "user_prompt",
            serde_json::json!(normalize_ws(&self.user_prompt)),
        );
        serde_json::to_string(&fields).expect("canonical request serializes")
    }

    /// Hex SHA-256 of [`canonical`](Self::canonical); the key for mock fixtures.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine(&self.values, &other.values)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntailmentQuery {
    pub premise: String,
    pub hypothesis: String,
}

impl EntailmentQuery {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        EntailmentQuery {
            premise: premise.into(),
            hypothesis: hypothesis.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub backend: String,
    pub capability: Capability,
    pub content_hash: [u8; 32],
}

impl CacheKey {
    pub fn new(backend: &str, capability: Capability, canonical: &str) -> Self {
        CacheKey {
            backend: backend.to_string(),
            capability,
            content_hash: Sha256::digest(canonical.as_bytes()).into(),
        }
    }

    /// File-system safe key combining all three fields.
    pub fn to_hex(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.backend.as_bytes());
        h.update([0u8]);
        h.update(self.capability.as_str().as_bytes());
        h.update([0u8]);
        h.update(self.content_hash);
        hex::encode(h.finalize())
    }
}

pub trait Backend: Send + Sync {
    fn id(&self) -> String;
    fn generate(&self, req: &GenerationRequest) -> Result<String>;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
    fn entail(&self, q: &EntailmentQuery) -> Result<f64>;
}

#[derive(Debug, Default)]
pub struct GatewayStats {
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
    cache_misses: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

impl GatewayStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            cache_misses: self.cache_misses.load(Ordering::SeqCst),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatewayOptions {
    pub max_in_flight: usize,
    pub batch_size: usize,
    pub deterministic: bool,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        GatewayOptions {
            max_in_flight: 8,
            batch_size: 32,
            deterministic: true,
        }
    }
}

struct InFlight {
    done: Mutex<Option<std::result::Result<String, String>>>,
    ready: Condvar,
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    backend_id: String,
    cache: Arc<ResponseCache>,
    stats: Arc<GatewayStats>,
    inflight: Mutex<HashMap<String, Arc<InFlight>>>,
    pool: rayon::ThreadPool,
    options: GatewayOptions,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend_id)
            .field("options", &self.options)
            .finish()
    }
}

impl Gateway {
    pub fn new(
        backend: Arc<dyn Backend>,
        cache: Arc<ResponseCache>,
        stats: Arc<GatewayStats>,
        options: GatewayOptions,
    ) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.max_in_flight.max(1))
            .build()
            .expect("worker pool");
        Gateway {
            backend_id: backend.id(),
            backend,
            cache,
            stats,
            inflight: Mutex::new(HashMap::new()),
            pool,
            options,
        }
    }

    /// Mock backend with an in-memory cache; handy for tests and examples.
    pub fn mock(config: MockConfig) -> Self {
        Gateway::new(
            Arc::new(MockBackend::new(config)),
            Arc::new(ResponseCache::in_memory()),
            Arc::new(GatewayStats::default()),
            GatewayOptions::default(),
        )
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn flush_cache(&self, scope: FlushScope) -> Result<usize> {
        self.cache.flush(scope)
    }

    fn key(&self, capability: Capability, canonical: &str) -> String {
        CacheKey::new(&self.backend_id, capability, canonical).to_hex()
    }

    fn cached<F>(&self, capability: Capability, canonical: &str, compute: F) -> Result<String>
    where
        F: FnOnce() -> Result<String>,
    {
        let key = self.key(capability, canonical);
        if let Some(hit) = self.cache.get(&key) {
            self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        let (slot, leader) = {
            let mut inflight = self.inflight.lock().expect("inflight lock poisoned");
            match inflight.get(&key) {
                Some(slot) => (slot.clone(), false),
                None => {
                    let slot = Arc::new(InFlight {
                        done: Mutex::new(None),
                        ready: Condvar::new(),
                    });
                    inflight.insert(key.clone(), slot.clone());
                    (slot, true)
                }
            }
        };
        if !leader {
            let mut done = slot.done.lock().expect("inflight slot poisoned");
            while done.is_none() {
                done = slot.ready.wait(done).expect("inflight slot poisoned");
            }
            self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
            return match done.as_ref().expect("slot filled") {
                Ok(payload) => Ok(payload.clone()),
                Err(message) => Err(Error::Gateway {
                    backend: self.backend_id.clone(),
                    status: None,
                    message: message.clone(),
                }),
            };
        }
        // Re-check: another leader may have finished between our cache probe
        // and taking the in-flight slot.
        let result = match self.cache.get(&key) {
            Some(hit) => {
                self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
                Ok(hit)
            }
            None => {
                self.stats.cache_misses.fetch_add(1, Ordering::SeqCst);
                self.stats.backend_calls.fetch_add(1, Ordering::SeqCst);
                compute().and_then(|payload| {
                    self.cache.put(&key, capability, &payload)?;
                    Ok(payload)
                })
            }
        };
        *slot.done.lock().expect("inflight slot poisoned") = Some(match &result {
            Ok(p) => Ok(p.clone()),
            Err(e) => Err(e.to_string()),
        });
        slot.ready.notify_all();
        self.inflight
            .lock()
            .expect("inflight lock poisoned")
            .remove(&key);
        result
    }

    pub fn generate(&self, req: &GenerationRequest) -> Result<String> {
        req.validate(self.options.deterministic)?;
        self.cached(Capability::Generate, &req.canonical(), || {
            self.backend.generate(req)
        })
    }

    /// Runs requests on the worker pool; results keep input order.
    pub fn generate_many(&self, reqs: &[GenerationRequest]) -> Vec<Result<String>> {
        self.pool
            .install(|| reqs.par_iter().map(|r| self.generate(r)).collect())
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Precondition("embed called with no texts".into()));
        }
        let canon = |t: &str| serde_json::json!({ "text": t }).to_string();
        let keys: Vec<String> = texts
            .iter()
            .map(|t| self.key(Capability::Embed, &canon(t)))
            .collect();

        let mut found: HashMap<String, Vec<f64>> = HashMap::new();
        let mut missing: Vec<(String, String)> = Vec::new();
        for (text, key) in texts.iter().zip(&keys) {
            if found.contains_key(key) || missing.iter().any(|(k, _)| k == key) {
                continue;
            }
            match self.cache.get(key) {
                Some(payload) => {
                    self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
                    let v: Vec<f64> = serde_json::from_str(&payload)
                        .map_err(|e| Error::Cache(format!("bad embedding entry: {e}")))?;
                    found.insert(key.clone(), v);
                }
                None => missing.push((key.clone(), text.clone())),
            }
        }

        if !missing.is_empty() {
            let batches: Vec<&[(String, String)]> =
                missing.chunks(self.options.batch_size.max(1)).collect();
            let results: Vec<Result<Vec<Vec<f64>>>> = self.pool.install(|| {
                batches
                    .par_iter()
                    .map(|batch| {
                        self.stats.backend_calls.fetch_add(1, Ordering::SeqCst);
                        let texts: Vec<String> = batch.iter().map(|(_, t)| t.clone()).collect();
                        let vectors = self.backend.embed(&texts)?;
                        if vectors.len() != texts.len() {
                            return Err(Error::Contract(format!(
                                "backend returned {} vectors for {} texts",
                                vectors.len(),
                                texts.len()
                            )));
                        }
                        Ok(vectors)
                    })
                    .collect()
            });
            let mut fresh = Vec::new();
            for (batch, result) in batches.iter().zip(results) {
                let vectors = result?;
                for ((key, _), v) in batch.iter().zip(vectors) {
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Contract(
                            "embedding contains non-finite values".into(),
                        ));
                    }
                    fresh.push((key.clone(), v));
                }
            }
            // all batches succeeded; only now touch the cache
            for (key, v) in fresh {
                self.stats.cache_misses.fetch_add(1, Ordering::SeqCst);
                self.cache
                    .put(&key, Capability::Embed, &serde_json::to_string(&v)?)?;
                found.insert(key, v);
            }
        }

        let out: Vec<EmbeddingVector> = keys
            .iter()
            .map(|k| EmbeddingVector {
                values: found[k].clone(),
            })
            .collect();
        let dim = out[0].dim();
        if out.iter().any(|v| v.dim() != dim) {
            return Err(Error::Contract(
                "embedding dimensions differ within one call".into(),
            ));
        }
        Ok(out)
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        let v = self.embed(&[a.to_string(), b.to_string()])?;
        Ok(v[0].cosine(&v[1]))
    }

    /// Cosine similarity of every `left` text against every `right` text.
    pub fn similarity_matrix(&self, left: &[String], right: &[String]) -> Result<Vec<Vec<f64>>> {
        if left.is_empty() || right.is_empty() {
            return Ok(vec![Vec::new(); left.len()]);
        }
        let l = self.embed(left)?;
        let r = self.embed(right)?;
        Ok(l.iter()
            .map(|a| r.iter().map(|b| a.cosine(b)).collect())
            .collect())
    }

    pub fn entail(&self, q: &EntailmentQuery) -> Result<f64> {
        if q.premise.trim().is_empty() || q.hypothesis.trim().is_empty() {
            return Err(Error::Validation(
                "entailment premise and hypothesis must be non-empty".into(),
            ));
        }
        let canonical =
            serde_json::json!({"hypothesis": q.hypothesis, "premise": q.premise}).to_string();
        let payload = self.cached(Capability::Entail, &canonical, || {
            let p = self.backend.entail(q)?;
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::Contract(format!(
                    "entailment score {p} is not a probability"
                )));
            }
            Ok(serde_json::to_string(&p)?)
        })?;
        payload
            .parse::<f64>()
            .map_err(|e| Error::Cache(format!("bad entailment entry {payload:?}: {e}")))
    }

    pub fn entail_many(&self, queries: &[EntailmentQuery]) -> Result<Vec<f64>> {
        self.pool
            .install(|| queries.par_iter().map(|q| self.entail(q)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    struct Counting {
        inner: MockBackend,
        calls: AtomicUsize,
        fail: bool,
    }

    impl Backend for Counting {
        fn id(&self) -> String {
            "counting".into()
        }
        fn generate(&self, req: &GenerationRequest) -> Result<String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(20));
            self.inner.generate(req)
        }
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.fail && texts.iter().any(|t| t == "boom") {
                return Err(Error::Gateway {
                    backend: "counting".into(),
                    status: Some(503),
                    message: "down".into(),
                });
            }
            self.inner.embed(texts)
        }
        fn entail(&self, _q: &EntailmentQuery) -> Result<f64> {
            Ok(1.5)
        }
    }

    fn counting(fail: bool, batch_size: usize) -> (Arc<Counting>, Gateway) {
        let backend = Arc::new(Counting {
            inner: MockBackend::with_seed(0),
            calls: AtomicUsize::new(0),
            fail,
        });
        let gw = Gateway::new(
            backend.clone(),
            Arc::new(ResponseCache::in_memory()),
            Arc::new(GatewayStats::default()),
            GatewayOptions {
                batch_size,
                ..GatewayOptions::default()
            },
        );
        (backend, gw)
    }

    #[test]
    fn canonical_form_ignores_whitespace_layout() {
        let a = GenerationRequest::new("sys", "hello   world\n");
        let b = GenerationRequest::new(" sys", "hello world");
        assert_eq!(a.digest(), b.digest());
        let c = GenerationRequest::new("sys", "hello worlds");
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn determinism_flag_requires_zero_temperature() {
        let mut req = GenerationRequest::new("s", "u");
        req.temperature = 0.7;
        assert!(matches!(req.validate(true), Err(Error::Config(_))));
        assert!(req.validate(false).is_ok());
        assert!(GenerationRequest::new("", "u").validate(false).is_err());
    }

    #[test]
    fn identical_concurrent_requests_are_coalesced() {
        let (backend, gw) = counting(false, 32);
        let reqs = vec![GenerationRequest::new("s", "same prompt about cats"); 16];
        let out = gw.generate_many(&reqs);
        assert!(out.iter().all(|r| r.as_ref().unwrap() == "prompt"));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
        assert_eq!(gw.stats().backend_calls, 1);
    }

    #[test]
    fn failed_embedding_batch_fails_whole_call() {
        let (_, gw) = counting(true, 2);
        let texts: Vec<String> = ["a", "b", "c", "boom"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert!(gw.embed(&texts).is_err());
        assert_eq!(gw.cache().count(Capability::Embed), 0);
        let ok = gw.embed(&texts[..3]).unwrap();
        assert_eq!(ok.len(), 3);
        assert!(gw.embed(&[]).is_err());
    }

    #[test]
    fn out_of_range_entailment_is_a_contract_violation() {
        let (_, gw) = counting(false, 8);
        let err = gw.entail(&EntailmentQuery::new("p", "h")).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert_eq!(gw.cache().count(Capability::Entail), 0);
    }
}
