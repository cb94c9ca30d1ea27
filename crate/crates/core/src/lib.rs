//! Questionnaire-guided symptom annotation with LLMs: PHQ-9/GAD-7 item
//! registry, corpus formats, prompt construction, model-output parsing,
//! evaluation metrics and instruction-tuning export.
//!
//! Everything in this crate is synchronous and free of I/O beyond reading
//! the files it is pointed at. Model calls live in `dxassist-gateway`; the
//! review service lives in `dxassist-review`.

pub mod corpus;
pub mod evaluation;
pub mod finetune;
pub mod parsing;
pub mod prompting;
pub mod questionnaire;
pub mod text;

pub use corpus::{binarize, BinaryAnnotation, Corpus, CorpusError, Post, SpanAnnotation};
pub use questionnaire::{
    items, resolve_slug, QuestionnaireError, QuestionnaireId, SymptomItem, SymptomVerdict,
};
