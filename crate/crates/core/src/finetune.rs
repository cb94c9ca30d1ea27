//! Instruction-tuning export: one record per post with the classification
//! instruction, the post as input, and the verdict pairs as output.

use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::{BinaryAnnotation, Post};
use crate::prompting::{input_text, instruction_text, render_verdict_pairs};
use crate::questionnaire::QuestionnaireId;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("cannot export an empty corpus")]
    EmptyCorpus,
    #[error("annotation for {post_id} is for {found}, expected {expected}")]
    QuestionnaireMismatch {
        post_id: String,
        found: QuestionnaireId,
        expected: QuestionnaireId,
    },
    #[error("write failed: {0}")]
    Sink(#[from] std::io::Error),
    #[error("write failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown export format {0:?} (expected jsonl or text)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExportFormat {
    /// JSON-lines with `instruction`, `input`, `output`, `text`.
    #[default]
    Jsonl,
    /// CSV with a single `text` column holding the rendered record.
    Text,
}

impl FromStr for ExportFormat {
    type Err = ExportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "jsonl" => Ok(ExportFormat::Jsonl),
            "text" | "csv" => Ok(ExportFormat::Text),
            other => Err(ExportError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExportOptions {
    pub format: ExportFormat,
    /// Put the post title on its own line before the body.
    pub include_title: bool,
}

impl Default for ExportOptions {
    fn default() -> Self {
        ExportOptions {
            format: ExportFormat::Jsonl,
            include_title: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub text: String,
}

impl InstructionRecord {
    pub fn new(post: &Post, ann: &BinaryAnnotation, include_title: bool) -> Self {
        let instruction = instruction_text(ann.questionnaire);
        let input = input_text(post, include_title);
        let output = render_verdict_pairs(ann);
        let text = format!("### INSTRUCTION:\n\n{instruction}\n\n### INPUT:\n{input}\n\n### OUTPUT:\n{output}");
        InstructionRecord {
            instruction,
            input,
            output,
            text,
        }
    }
}

/// Write one record per post to `sink`, in corpus order. Returns the
/// number of records written.
pub fn export<W: Write>(
    corpus: &[(Post, BinaryAnnotation)],
    q: QuestionnaireId,
    sink: W,
    opts: ExportOptions,
) -> Result<usize, ExportError> {
    if corpus.is_empty() {
        return Err(ExportError::EmptyCorpus);
    }
    for (post, ann) in corpus {
        if ann.questionnaire != q {
            return Err(ExportError::QuestionnaireMismatch {
                post_id: post.id.clone(),
                found: ann.questionnaire,
                expected: q,
            });
        }
    }
    let records = corpus
        .iter()
        .map(|(post, ann)| InstructionRecord::new(post, ann, opts.include_title));
    match opts.format {
        ExportFormat::Jsonl => {
            let mut sink = std::io::BufWriter::new(sink);
            for rec in records {
                serde_json::to_writer(&mut sink, &rec).map_err(std::io::Error::from)?;
                sink.write_all(b"\n")?;
            }
            sink.flush()?;
        }
        ExportFormat::Text => {
            let mut w = csv::Writer::from_writer(sink);
            w.write_record(["text"])?;
            for rec in records {
                w.write_record([rec.text.as_str()])?;
            }
            w.flush()?;
        }
    }
    Ok(corpus.len())
}
