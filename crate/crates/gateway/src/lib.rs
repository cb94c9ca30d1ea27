//! Chat-completion and embedding client for OpenAI-compatible endpoints.
//!
//! All traffic goes through [`Gateway`], which bounds in-flight requests,
//! enforces a per-minute budget, retries transient failures and can record
//! exchanges to (or replay them from) a JSON-lines [`Cassette`].

mod cassette;
mod client;
mod fingerprint;
mod limiter;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use cassette::{Cassette, CassetteEntry, CassetteMode, EntryKind};
pub use client::{ChatExchange, Gateway};
pub use fingerprint::{chat_fingerprint, embedding_fingerprint};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("no recorded exchange for fingerprint {fingerprint} (replay mode)")]
    ReplayMiss { fingerprint: String },
    #[error("gave up after {attempts} attempts (last status {last_status:?}): {message}")]
    ExhaustedRetries {
        attempts: u32,
        last_status: Option<u16>,
        message: String,
    },
    #[error("endpoint rejected credentials (HTTP {status})")]
    AuthError { status: u16 },
    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("invalid rate-limit policy: {0}")]
    InvalidPolicy(String),
    #[error("{0}")]
    Precondition(String),
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("cassette {path}: {message}")]
    Cassette { path: String, message: String },
}

impl GatewayError {
    /// Failures caused by the network or the remote service, as opposed to
    /// local configuration or cassette problems.
    pub fn is_network(&self) -> bool {
        matches!(
            self,
            GatewayError::ExhaustedRetries { .. }
                | GatewayError::AuthError { .. }
                | GatewayError::Rejected { .. }
                | GatewayError::Protocol(_)
        )
    }
}

fn default_temperature() -> f64 {
    0.0
}

fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the key; read per call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

impl ModelEndpoint {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        ModelEndpoint {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: None,
            temperature: default_temperature(),
            max_tokens: None,
            timeout_secs: default_timeout(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidEndpoint(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(GatewayError::InvalidEndpoint(format!(
                "timeout must be > 0, got {}",
                self.timeout_secs
            )));
        }
        if self.model_name.trim().is_empty() {
            return Err(GatewayError::InvalidEndpoint("model_name is empty".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateLimitPolicy {
    pub max_in_flight: usize,
    pub requests_per_minute: u32,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
}

impl Default for RateLimitPolicy {
    fn default() -> Self {
        RateLimitPolicy {
            max_in_flight: 4,
            requests_per_minute: 60,
            max_attempts: 5,
            backoff_base_ms: 500,
            backoff_cap_ms: 30_000,
        }
    }
}

impl RateLimitPolicy {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidPolicy(m.into()));
        if self.max_attempts < 1 {
            return bad("max_attempts must be >= 1");
        }
        if self.requests_per_minute == 0 {
            return bad("requests_per_minute must be > 0");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be > 0");
        }
        Ok(())
    }

    /// Delay before retry number `attempt` (1-based): base·2^(attempt-1),
    /// capped.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_cap_ms))
    }
}
