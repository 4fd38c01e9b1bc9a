//! HTTP+JSON backend.
//!
//! Generation speaks the chat-completions shape (`POST {base}/chat/completions`),
//! embeddings the embeddings shape (`POST {base}/embeddings`) and entailment
//! posts `{premise, hypothesis}` to `{base}/entail` expecting `{entailment}`.
//! 5xx responses and transport failures are retried with exponential backoff;
//! 4xx responses are returned immediately.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, EntailmentQuery, GenerationRequest};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding a bearer token.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub entail_path: String,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: String::new(),
            model: String::new(),
            api_key_env: None,
            timeout_secs: 60,
            max_attempts: 3,
            backoff_ms: 250,
            entail_path: "entail".into(),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        if config.base_url.is_empty() {
            return Err(Error::Config("http backend requires base_url".into()));
        }
        let token = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| Error::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend {
            config,
            agent,
            token,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value> {
        let url = self.url(path);
        let attempts = self.config.max_attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(
                    self.config.backoff_ms << (attempt - 1),
                ));
            }
            let mut req = self.agent.post(&url);
            if let Some(token) = &self.token {
                req = req.header("Authorization", format!("Bearer {token}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        return resp.body_mut().read_json::<Value>().map_err(|e| {
                            Error::Contract(format!("{url}: response is not JSON: {e}"))
                        });
                    }
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    let err = Error::Gateway {
                        backend: self.id(),
                        status: Some(status),
                        message: format!("{url} returned {status}: {}", truncate(&text, 200)),
                    };
                    if status < 500 {
                        return Err(err);
                    }
                    log::warn!("attempt {} of {attempts} failed: {err}", attempt + 1);
                    last = Some(err);
                }
                Err(e) => {
                    let err = Error::Gateway {
                        backend: self.id(),
                        status: None,
                        message: format!("{url}: {e}"),
                    };
                    log::warn!("attempt {} of {attempts} failed: {err}", attempt + 1);
                    last = Some(err);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl Backend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}:{}", self.config.base_url, self.config.model)
    }

    fn generate(&self, req: &GenerationRequest) -> Result<String> {
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        });
        let resp = self.post("chat/completions", &body)?;
        let choice = resp
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| Error::Contract("chat response has no choices".into()))?;
        if choice.get("finish_reason").and_then(Value::as_str) == Some("length") {
            return Err(Error::TruncatedResponse(self.id()));
        }
        choice
            .get("message")
            .and_then(|m| m.get("content"))
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Contract("chat response has no message content".into()))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let body = json!({"model": self.config.model, "input": texts});
        let resp = self.post("embeddings", &body)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Contract("embedding response has no data array".into()))?;
        if data.len() != texts.len() {
            return Err(Error::Contract(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        let mut out = vec![Vec::new(); texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item
                .get("index")
                .and_then(Value::as_u64)
                .map(|i| i as usize)
                .unwrap_or(pos);
            let values = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Contract("embedding item without vector".into()))?
                .iter()
                .map(|v| {
                    v.as_f64()
                        .ok_or_else(|| Error::Contract("non-numeric embedding value".into()))
                })
                .collect::<Result<Vec<f64>>>()?;
            *out.get_mut(index).ok_or_else(|| {
                Error::Contract(format!("embedding index {index} out of range"))
            })? = values;
        }
        Ok(out)
    }

    fn entail(&self, q: &EntailmentQuery) -> Result<f64> {
        let body = json!({"premise": q.premise, "hypothesis": q.hypothesis});
        let resp = self.post(&self.config.entail_path, &body)?;
        resp.get("entailment")
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Contract(format!("entailment payload is not a number: {resp}")))
    }
}
