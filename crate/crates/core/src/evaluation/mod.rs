//! hits@k ranking, classification metrics, Cohen's kappa, and run reports.

mod hits;
mod kappa;
mod metrics;
mod report;

pub use hits::{
    first_match_rank, hits_at_k, lexical_similarity, rank_spans, BackendKind, EmbeddingBackend,
    HitOutcome, LexicalBackend, SimilarityBackend, DEFAULT_MATCH_THRESHOLD,
};
pub use kappa::{cohens_kappa, mean_kappa, KappaReport};
pub use metrics::{classification_metrics, Averaging, ClassificationReport, Confusion, LabeledPair};
pub use report::{
    evaluate_run, render_tables, EvalOptions, FailureKind, FailurePolicy, HitsReport, JoinKey,
    Prediction, PredictionOutcome, RunReport,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("degenerate marginals: chance agreement is 1 but raters disagree")]
    DegenerateMarginals,
    #[error("prediction for unknown post {0:?}")]
    UnknownPost(String),
    #[error("more than one prediction for post {0:?}")]
    DuplicatePrediction(String),
    #[error("no embedding for text {0:?}")]
    MissingEmbedding(String),
    #[error("{0}")]
    InvalidOption(String),
}

impl EvalError {
    /// True for the join failures (prediction ids that do not match truth).
    pub fn is_join_error(&self) -> bool {
        matches!(self, EvalError::UnknownPost(_) | EvalError::DuplicatePrediction(_))
    }
}
