//! Extraction of annotations from raw model output, echo detection, and
//! alignment of quoted evidence back to the source post.

mod align;
mod echo;
mod literal;

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use crate::corpus::{BinaryAnnotation, SpanAnnotation};
use crate::prompting::OutputFormat;
use crate::questionnaire::{resolve_slug, QuestionnaireId, SymptomVerdict};

pub use align::{align, align_tokens, AlignedSpan, AlignmentError, DEFAULT_ALIGNMENT_THRESHOLD};
pub use echo::{detect_echo, lcs_len, EchoVerdict, DEFAULT_ECHO_THRESHOLD};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no {expected} payload found in model output")]
    ParseFailure { expected: OutputFormat, raw: String },
    #[error("verdict list is missing {missing:?}")]
    IncompleteVerdicts { missing: Vec<&'static str> },
    #[error("unknown symptom key {key:?} (strict mode)")]
    UnknownKey { key: String },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Reject unknown keys instead of dropping them.
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "annotation", rename_all = "snake_case")]
pub enum Payload {
    SpanMap(SpanAnnotation),
    VerdictPairs(BinaryAnnotation),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParsedOutput {
    pub kind: OutputFormat,
    pub payload: Payload,
    /// One entry per repair applied while extracting the payload.
    pub salvage_notes: Vec<String>,
}

impl ParsedOutput {
    pub fn spans(&self) -> Option<&SpanAnnotation> {
        match &self.payload {
            Payload::SpanMap(s) => Some(s),
            Payload::VerdictPairs(_) => None,
        }
    }

    pub fn verdicts(&self) -> Option<&BinaryAnnotation> {
        match &self.payload {
            Payload::VerdictPairs(b) => Some(b),
            Payload::SpanMap(_) => None,
        }
    }
}

struct Candidate {
    value: Value,
    start: usize,
    end: usize,
    relaxed: bool,
}

/// Literals found in `text`, in order of their opening bracket.
fn candidates<'a>(text: &'a str, openers: &'a [u8]) -> impl Iterator<Item = Candidate> + 'a {
    text.char_indices()
        .filter(move |(_, c)| c.is_ascii() && openers.contains(&(*c as u8)))
        .filter_map(move |(start, _)| {
            literal::parse_at(text, start).map(|p| Candidate {
                value: p.value,
                start,
                end: p.end,
                relaxed: p.relaxed,
            })
        })
}

fn context_notes(text: &str, c: &Candidate, notes: &mut Vec<String>) {
    if text.contains("```") {
        notes.push("code fence stripped".into());
    }
    let before = text[..c.start].trim();
    let after = text[c.end..].trim();
    if !before.is_empty() || !after.is_empty() {
        notes.push("ignored text around payload".into());
    }
    if c.relaxed {
        notes.push("repaired non-JSON syntax (quotes, trailing commas or bare words)".into());
    }
}

/// Parse model output into an annotation of the expected kind.
pub fn parse(
    output_text: &str,
    q: QuestionnaireId,
    expected: OutputFormat,
    post_id: &str,
    opts: &ParseOptions,
) -> Result<ParsedOutput, ParseError> {
    match expected {
        OutputFormat::SpanMap => parse_spans(output_text, q, post_id, opts),
        OutputFormat::VerdictPairs => parse_verdicts(output_text, q, post_id, opts),
    }
}

fn failure(expected: OutputFormat, text: &str) -> ParseError {
    ParseError::ParseFailure {
        expected,
        raw: text.to_string(),
    }
}

fn span_map_of(value: &Value) -> Option<&serde_json::Map<String, Value>> {
    let obj = value.as_object()?;
    match obj.get("annotations") {
        Some(Value::Object(inner)) => Some(inner),
        Some(_) => None,
        None => Some(obj),
    }
}

fn parse_spans(
    text: &str,
    q: QuestionnaireId,
    post_id: &str,
    opts: &ParseOptions,
) -> Result<ParsedOutput, ParseError> {
    for cand in candidates(text, b"{") {
        let Some(map) = span_map_of(&cand.value) else {
            continue;
        };
        // A candidate qualifies when at least one key is a symptom key.
        if !map.keys().any(|k| resolve_slug(q, k).is_ok()) {
            continue;
        }
        let mut notes = Vec::new();
        context_notes(text, &cand, &mut notes);
        let mut ann = SpanAnnotation::empty(post_id, q);
        let mut seen = BTreeMap::new();
        for (key, value) in map {
            let item = match resolve_slug(q, key) {
                Ok(item) => item,
                Err(_) if opts.strict => return Err(ParseError::UnknownKey { key: key.clone() }),
                Err(_) => {
                    notes.push(format!("dropped unknown key {key:?}"));
                    continue;
                }
            };
            if item.slug != key {
                notes.push(format!("resolved key {key:?} to {:?}", item.slug));
            }
            let spans = span_list(item.slug, value, &mut notes);
            if seen.insert(item.slug, ()).is_some() {
                notes.push(format!("merged duplicate key for {:?}", item.slug));
                ann.evidence.entry(item.slug).or_default().extend(spans);
            } else {
                ann.evidence.insert(item.slug, spans);
            }
        }
        let missing = q.items().len() - seen.len();
        if missing > 0 {
            notes.push(format!("{missing} symptom keys missing, read as absent"));
        }
        return Ok(ParsedOutput {
            kind: OutputFormat::SpanMap,
            payload: Payload::SpanMap(ann),
            salvage_notes: notes,
        });
    }
    Err(failure(OutputFormat::SpanMap, text))
}

fn span_list(slug: &str, value: &Value, notes: &mut Vec<String>) -> Vec<String> {
    let keep = |s: &str| !s.trim().is_empty();
    match value {
        Value::Array(items) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                match item {
                    Value::String(s) if keep(s) => out.push(s.clone()),
                    Value::String(_) => notes.push(format!("dropped blank span for {slug:?}")),
                    other => notes.push(format!("dropped non-text span {other} for {slug:?}")),
                }
            }
            out
        }
        Value::String(s) if keep(s) => {
            notes.push(format!("wrapped single span for {slug:?} in a list"));
            vec![s.clone()]
        }
        Value::Null | Value::String(_) => {
            notes.push(format!("read empty value for {slug:?} as no evidence"));
            Vec::new()
        }
        other => {
            notes.push(format!("dropped non-list value {other} for {slug:?}"));
            Vec::new()
        }
    }
}

fn verdict_pairs_of(value: &Value) -> Option<Vec<(String, String)>> {
    match value {
        Value::Array(items) if !items.is_empty() => items
            .iter()
            .map(|pair| match pair.as_array().map(Vec::as_slice) {
                Some([Value::String(s), Value::String(v)]) => Some((s.clone(), v.clone())),
                _ => None,
            })
            .collect(),
        Value::Object(map) if !map.is_empty() => map
            .iter()
            .map(|(k, v)| v.as_str().map(|v| (k.clone(), v.to_string())))
            .collect(),
        _ => None,
    }
}

fn parse_verdicts(
    text: &str,
    q: QuestionnaireId,
    post_id: &str,
    opts: &ParseOptions,
) -> Result<ParsedOutput, ParseError> {
    for cand in candidates(text, b"[{") {
        let Some(pairs) = verdict_pairs_of(&cand.value) else {
            continue;
        };
        if !pairs.iter().any(|(s, _)| resolve_slug(q, s).is_ok()) {
            continue;
        }
        let mut notes = Vec::new();
        context_notes(text, &cand, &mut notes);
        if cand.value.is_object() {
            notes.push("verdicts given as an object rather than a list of pairs".into());
        }
        let mut verdicts: BTreeMap<&'static str, SymptomVerdict> = BTreeMap::new();
        for (raw_slug, raw_verdict) in &pairs {
            let item = match resolve_slug(q, raw_slug) {
                Ok(item) => item,
                Err(_) if opts.strict => {
                    return Err(ParseError::UnknownKey {
                        key: raw_slug.clone(),
                    })
                }
                Err(_) => {
                    notes.push(format!("dropped unknown key {raw_slug:?}"));
                    continue;
                }
            };
            if item.slug != raw_slug {
                notes.push(format!("resolved key {raw_slug:?} to {:?}", item.slug));
            }
            let verdict: SymptomVerdict = match raw_verdict.parse() {
                Ok(v) => v,
                Err(_) => {
                    notes.push(format!("dropped invalid verdict {raw_verdict:?} for {:?}", item.slug));
                    continue;
                }
            };
            if raw_verdict != verdict.as_str() {
                notes.push(format!("normalized verdict {raw_verdict:?}"));
            }
            match verdicts.get(item.slug) {
                Some(prev) if *prev != verdict => {
                    notes.push(format!("conflicting duplicate for {:?}, kept first", item.slug))
                }
                Some(_) => notes.push(format!("duplicate verdict for {:?}", item.slug)),
                None => {
                    verdicts.insert(item.slug, verdict);
                }
            }
        }
        let missing: Vec<&'static str> = q
            .sorted_slugs()
            .into_iter()
            .filter(|s| !verdicts.contains_key(s))
            .collect();
        if !missing.is_empty() {
            return Err(ParseError::IncompleteVerdicts { missing });
        }
        return Ok(ParsedOutput {
            kind: OutputFormat::VerdictPairs,
            payload: Payload::VerdictPairs(BinaryAnnotation {
                post_id: post_id.to_string(),
                questionnaire: q,
                verdicts,
            }),
            salvage_notes: notes,
        });
    }
    Err(failure(OutputFormat::VerdictPairs, text))
}
