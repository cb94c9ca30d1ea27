//! Clinician review of model span annotations.
//!
//! Reviewers mark each (post, symptom) annotation agree/disagree over a
//! small JSON API. State is an append-only JSON-lines event log replayed
//! into memory at startup. Authentication is one static bearer token per
//! reviewer: adequate for a research deployment, nothing more.

mod http;
mod store;

use serde::{Deserialize, Serialize};

pub use http::{router, AppState, SCHEMA_VERSION};
pub use store::{
    AgreementReport, ConsensusPolicy, Decision, DecisionInput, ReviewStore, Task, TaskStatus,
    ValidatedSubset, Verdict,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ReviewError {
    #[error("post {0:?} is already queued")]
    DuplicatePost(String),
    #[error("no task {0}")]
    UnknownTask(u64),
    #[error("reviewer {0:?} is not registered")]
    UnknownReviewer(String),
    #[error("slug {0:?} is not an item of this questionnaire")]
    UnknownSlug(String),
    #[error("no two reviewers share a completed task")]
    InsufficientOverlap,
    #[error("no task is complete yet")]
    NothingComplete,
    #[error("agreement: {0}")]
    Agreement(String),
    #[error("event log {path} line {line}: {message}")]
    CorruptLog {
        path: String,
        line: usize,
        message: String,
    },
    #[error("event log: {0}")]
    Io(String),
}

/// A registered reviewer and the bearer token they authenticate with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reviewer {
    pub id: String,
    /// Literal token; takes precedence over `token_env`.
    #[serde(default)]
    pub token: Option<String>,
    /// Environment variable holding the token.
    #[serde(default)]
    pub token_env: Option<String>,
}

impl Reviewer {
    pub fn resolve_token(&self) -> Result<String, String> {
        if let Some(t) = &self.token {
            return Ok(t.clone());
        }
        match &self.token_env {
            Some(var) => std::env::var(var)
                .map_err(|_| format!("reviewer {}: environment variable {var} is not set", self.id)),
            None => Err(format!("reviewer {} has neither token nor token_env", self.id)),
        }
    }
}
