use std::sync::Arc;
use std::time::Instant;

use dxassist_core::prompting::RenderedPrompt;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use crate::cassette::{Cassette, CassetteEntry, CassetteMode, EntryKind};
use crate::fingerprint::{chat_fingerprint, embedding_fingerprint};
use crate::limiter::TokenBucket;
use crate::{GatewayError, ModelEndpoint, RateLimitPolicy};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatExchange {
    pub request: RenderedPrompt,
    pub endpoint: ModelEndpoint,
    pub response_text: String,
    pub latency_ms: u64,
    /// HTTP attempts made; 0 when served from a cassette.
    pub attempts: u32,
    pub fingerprint: String,
}

/// Shared client. Clone-free: wrap in `Arc` to share across tasks.
#[derive(Debug)]
pub struct Gateway {
    http: reqwest::Client,
    policy: RateLimitPolicy,
    in_flight: Semaphore,
    bucket: TokenBucket,
    cassette: Arc<Cassette>,
}

enum Attempt {
    Done(Value),
    Retry(Option<u16>, String),
}

impl Gateway {
    pub fn new(policy: RateLimitPolicy, cassette: Arc<Cassette>) -> Result<Self, GatewayError> {
        policy.validate()?;
        let http = reqwest::Client::builder()
            .build()
            .map_err(|e| GatewayError::Precondition(format!("http client: {e}")))?;
        Ok(Gateway {
            http,
            in_flight: Semaphore::new(policy.max_in_flight),
            bucket: TokenBucket::per_minute(policy.requests_per_minute),
            policy,
            cassette,
        })
    }

    pub fn cassette(&self) -> &Cassette {
        &self.cassette
    }

    pub async fn complete(
        &self,
        endpoint: &ModelEndpoint,
        prompt: &RenderedPrompt,
    ) -> Result<ChatExchange, GatewayError> {
        endpoint.validate()?;
        let fingerprint =
            chat_fingerprint(&prompt.messages, &endpoint.model_name, endpoint.temperature);
        let exchange = |response_text: String, latency_ms, attempts| ChatExchange {
            request: prompt.clone(),
            endpoint: endpoint.clone(),
            response_text,
            latency_ms,
            attempts,
            fingerprint: fingerprint.clone(),
        };
        if self.cassette.mode() == CassetteMode::Replay {
            let entry = self.replayed(&fingerprint)?;
            return Ok(exchange(entry.response_text, 0, 0));
        }

        let mut body = json!({
            "model": endpoint.model_name,
            "messages": prompt.messages,
            "temperature": endpoint.temperature,
        });
        if let Some(n) = endpoint.max_tokens {
            body["max_tokens"] = json!(n);
        }
        let started = Instant::now();
        let (resp, attempts) = self.post(endpoint, "chat/completions", &body).await?;
        let latency_ms = started.elapsed().as_millis() as u64;
        let text = resp
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::Protocol("missing choices[0].message.content".into()))?
            .to_string();
        if self.cassette.mode() == CassetteMode::Record {
            self.cassette.append(CassetteEntry {
                fingerprint: fingerprint.clone(),
                model: endpoint.model_name.clone(),
                kind: EntryKind::Chat,
                messages: prompt.messages.clone(),
                response_text: text.clone(),
                input: vec![],
                embeddings: vec![],
            })?;
        }
        Ok(exchange(text, latency_ms, attempts))
    }

    /// One unit-normalized vector per text, in input order.
    pub async fn embed(
        &self,
        endpoint: &ModelEndpoint,
        texts: &[String],
    ) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::Precondition("embed needs at least one text".into()));
        }
        endpoint.validate()?;
        let fingerprint = embedding_fingerprint(texts, &endpoint.model_name);
        if self.cassette.mode() == CassetteMode::Replay {
            return Ok(self.replayed(&fingerprint)?.embeddings);
        }
        let body = json!({ "model": endpoint.model_name, "input": texts });
        let (resp, _) = self.post(endpoint, "embeddings", &body).await?;
        let vectors = parse_embeddings(&resp, texts.len())?;
        if self.cassette.mode() == CassetteMode::Record {
            self.cassette.append(CassetteEntry {
                fingerprint,
                model: endpoint.model_name.clone(),
                kind: EntryKind::Embedding,
                messages: vec![],
                response_text: String::new(),
                input: texts.to_vec(),
                embeddings: vectors.clone(),
            })?;
        }
        Ok(vectors)
    }

    fn replayed(&self, fingerprint: &str) -> Result<CassetteEntry, GatewayError> {
        self.cassette
            .get(fingerprint)
            .ok_or_else(|| GatewayError::ReplayMiss {
                fingerprint: fingerprint.to_string(),
            })
    }

    async fn post(
        &self,
        endpoint: &ModelEndpoint,
        path: &str,
        body: &Value,
    ) -> Result<(Value, u32), GatewayError> {
        let key = match &endpoint.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| GatewayError::MissingApiKey(var.clone()))?,
            ),
            None => None,
        };
        let url = endpoint.url(path);
        let mut last = (None, String::new());
        for attempt in 1..=self.policy.max_attempts {
            if attempt > 1 {
                tokio::time::sleep(self.policy.backoff(attempt - 1)).await;
            }
            self.bucket.acquire().await;
            let outcome = {
                let _permit = self.in_flight.acquire().await.expect("semaphore open");
                let mut req = self.http.post(&url).json(body).timeout(endpoint.timeout());
                if let Some(k) = &key {
                    req = req.bearer_auth(k);
                }
                self.attempt(req).await?
            };
            match outcome {
                Attempt::Done(v) => return Ok((v, attempt)),
                Attempt::Retry(status, message) => {
                    tracing::warn!(attempt, ?status, %message, "transient failure");
                    last = (status, message);
                }
            }
        }
        Err(GatewayError::ExhaustedRetries {
            attempts: self.policy.max_attempts,
            last_status: last.0,
            message: last.1,
        })
    }

    async fn attempt(&self, req: reqwest::RequestBuilder) -> Result<Attempt, GatewayError> {
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Ok(Attempt::Retry(None, e.to_string()))
            }
            Err(e) => return Err(GatewayError::Protocol(e.to_string())),
        };
        let status = resp.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Err(GatewayError::AuthError {
                status: status.as_u16(),
            });
        }
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Ok(Attempt::Retry(Some(status.as_u16()), e.to_string())),
            Err(e) => return Err(GatewayError::Protocol(e.to_string())),
        };
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Ok(Attempt::Retry(Some(status.as_u16()), truncate(&text)));
        }
        if !status.is_success() {
            return Err(GatewayError::Rejected {
                status: status.as_u16(),
                body: truncate(&text),
            });
        }
        serde_json::from_str(&text)
            .map(Attempt::Done)
            .map_err(|e| GatewayError::Protocol(format!("response is not JSON: {e}")))
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(500).collect()
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: Option<usize>,
    embedding: Vec<f64>,
}

fn parse_embeddings(resp: &Value, expected: usize) -> Result<Vec<Vec<f64>>, GatewayError> {
    let data: Vec<EmbeddingDatum> = resp
        .get("data")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| GatewayError::Protocol(format!("embedding data: {e}")))?
        .ok_or_else(|| GatewayError::Protocol("missing data".into()))?;
    if data.len() != expected {
        return Err(GatewayError::Protocol(format!(
            "expected {expected} embeddings, got {}",
            data.len()
        )));
    }
    let mut out = vec![None; expected];
    for (pos, d) in data.into_iter().enumerate() {
        let i = d.index.unwrap_or(pos);
        let slot = out
            .get_mut(i)
            .ok_or_else(|| GatewayError::Protocol(format!("embedding index {i} out of range")))?;
        let norm = d.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(GatewayError::Protocol("zero or non-finite embedding".into()));
        }
        *slot = Some(d.embedding.iter().map(|x| x / norm).collect());
    }
    out.into_iter()
        .map(|v| v.ok_or_else(|| GatewayError::Protocol("duplicate embedding index".into())))
        .collect()
}
