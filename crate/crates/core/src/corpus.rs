//! Post corpora: PRIMATE-style binary verdict files and span-evidence files.
//!
//! Both formats are UTF-8 JSON, either a top-level array of records or a
//! stream of records (JSON-lines). A binary record carries `annotations` as
//! a list of `[slug, "yes"|"no"]` pairs; a span record carries `annotations`
//! as an object mapping slug to a list of evidence sentences.
//!
//! Records have no identifier of their own. A post's id is
//! `<source>#<index>` unless the record carries an explicit `post_id`.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::questionnaire::{resolve_slug, QuestionnaireId, SymptomVerdict};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{source_name}: record {index}: {message}")]
    Schema {
        source_name: String,
        index: usize,
        message: String,
    },
    #[error("{source_name}: malformed JSON: {message}")]
    Json { source_name: String, message: String },
    #[error("{path}: {err}")]
    Io {
        path: String,
        #[source]
        err: std::io::Error,
    },
}

impl CorpusError {
    /// Record index for schema errors.
    pub fn record_index(&self) -> Option<usize> {
        match self {
            CorpusError::Schema { index, .. } => Some(*index),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BinaryAnnotation {
    pub post_id: String,
    pub questionnaire: QuestionnaireId,
    pub verdicts: BTreeMap<&'static str, SymptomVerdict>,
}

impl BinaryAnnotation {
    /// Every slug set to `verdict`.
    pub fn uniform(post_id: &str, q: QuestionnaireId, verdict: SymptomVerdict) -> Self {
        BinaryAnnotation {
            post_id: post_id.to_string(),
            questionnaire: q,
            verdicts: q.items().iter().map(|i| (i.slug, verdict)).collect(),
        }
    }

    pub fn verdict(&self, slug: &str) -> SymptomVerdict {
        self.verdicts.get(slug).copied().unwrap_or(SymptomVerdict::No)
    }

    pub fn yes_count(&self) -> usize {
        self.verdicts.values().filter(|v| v.is_yes()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpanAnnotation {
    pub post_id: String,
    pub questionnaire: QuestionnaireId,
    /// Total over the questionnaire's slugs; absent symptoms map to `[]`.
    pub evidence: BTreeMap<&'static str, Vec<String>>,
}

impl SpanAnnotation {
    pub fn empty(post_id: &str, q: QuestionnaireId) -> Self {
        SpanAnnotation {
            post_id: post_id.to_string(),
            questionnaire: q,
            evidence: q.items().iter().map(|i| (i.slug, Vec::new())).collect(),
        }
    }

    pub fn spans(&self, slug: &str) -> &[String] {
        self.evidence.get(slug).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn present_slugs(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.evidence
            .iter()
            .filter(|(_, spans)| !spans.is_empty())
            .map(|(slug, _)| *slug)
    }
}

/// Verdict is yes iff the evidence list is non-empty.
pub fn binarize(s: &SpanAnnotation) -> BinaryAnnotation {
    BinaryAnnotation {
        post_id: s.post_id.clone(),
        questionnaire: s.questionnaire,
        verdicts: s
            .questionnaire
            .items()
            .iter()
            .map(|i| (i.slug, SymptomVerdict::from_bool(!s.spans(i.slug).is_empty())))
            .collect(),
    }
}

/// Status attached to model-derived span records written by the annotate
/// pipeline. Ground-truth files carry no status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Echo,
    ParseFailure,
}

impl RecordStatus {
    pub fn is_failure(self) -> bool {
        self != RecordStatus::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanRecord {
    pub post: Post,
    pub annotation: SpanAnnotation,
    pub status: Option<RecordStatus>,
    pub model: Option<String>,
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    post_id: Option<String>,
    #[serde(default)]
    post_title: Option<String>,
    #[serde(default)]
    post_text: Option<String>,
    #[serde(default)]
    annotations: Option<Value>,
    #[serde(default)]
    status: Option<RecordStatus>,
    #[serde(default)]
    model: Option<String>,
}

fn split_records(bytes: &[u8], source: &str) -> Result<Vec<Value>, CorpusError> {
    let json_err = |e: serde_json::Error| CorpusError::Json {
        source_name: source.to_string(),
        message: e.to_string(),
    };
    let mut out = Vec::new();
    let mut values = serde_json::Deserializer::from_slice(bytes).into_iter::<Value>();
    let first = match values.next() {
        None => return Ok(out),
        Some(v) => v.map_err(json_err)?,
    };
    match first {
        Value::Array(items) => {
            if values.next().is_some() {
                return Err(CorpusError::Json {
                    source_name: source.to_string(),
                    message: "trailing content after top-level array".into(),
                });
            }
            out = items;
        }
        other => {
            out.push(other);
            for v in values {
                out.push(v.map_err(json_err)?);
            }
        }
    }
    Ok(out)
}

struct Parsed {
    post: Post,
    annotations: Option<Value>,
    status: Option<RecordStatus>,
    model: Option<String>,
}

fn parse_records(bytes: &[u8], source: &str) -> Result<Vec<Parsed>, CorpusError> {
    let values = split_records(bytes, source)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(values.len());
    for (index, value) in values.into_iter().enumerate() {
        let schema = |message: String| CorpusError::Schema {
            source_name: source.to_string(),
            index,
            message,
        };
        let raw: RawRecord =
            serde_json::from_value(value).map_err(|e| schema(format!("bad record: {e}")))?;
        let body = raw
            .post_text
            .ok_or_else(|| schema("missing field post_text".into()))?;
        if body.trim().is_empty() {
            return Err(schema("post_text is empty".into()));
        }
        let id = raw.post_id.unwrap_or_else(|| format!("{source}#{index}"));
        if !seen.insert(id.clone()) {
            return Err(schema(format!("duplicate post id {id:?}")));
        }
        out.push(Parsed {
            post: Post {
                id,
                title: raw.post_title.unwrap_or_default(),
                body,
            },
            annotations: raw.annotations,
            status: raw.status,
            model: raw.model,
        });
    }
    Ok(out)
}

fn binary_from_value(
    value: Option<&Value>,
    post_id: &str,
    q: QuestionnaireId,
) -> Result<BinaryAnnotation, String> {
    let pairs = match value {
        Some(Value::Array(pairs)) => pairs,
        Some(_) => return Err("annotations must be a list of [slug, verdict] pairs".into()),
        None => return Err("missing field annotations".into()),
    };
    let mut verdicts = BTreeMap::new();
    for pair in pairs {
        let (slug, verdict) = match pair.as_array().map(Vec::as_slice) {
            Some([Value::String(s), Value::String(v)]) => (s, v),
            _ => return Err(format!("annotation pair {pair} is not [slug, verdict]")),
        };
        let item = resolve_slug(q, slug).map_err(|e| e.to_string())?;
        let verdict: SymptomVerdict = verdict.parse().map_err(|e: crate::QuestionnaireError| e.to_string())?;
        if verdicts.insert(item.slug, verdict).is_some() {
            return Err(format!("duplicate verdict for {}", item.slug));
        }
    }
    if verdicts.len() != q.items().len() {
        let missing: Vec<_> = q
            .sorted_slugs()
            .into_iter()
            .filter(|s| !verdicts.contains_key(s))
            .collect();
        return Err(format!(
            "incomplete verdicts: {} of {}, missing {missing:?}",
            verdicts.len(),
            q.items().len()
        ));
    }
    Ok(BinaryAnnotation {
        post_id: post_id.to_string(),
        questionnaire: q,
        verdicts,
    })
}

fn spans_from_value(
    value: Option<&Value>,
    post_id: &str,
    q: QuestionnaireId,
) -> Result<SpanAnnotation, String> {
    let mut ann = SpanAnnotation::empty(post_id, q);
    let map = match value {
        Some(Value::Object(map)) => map,
        None | Some(Value::Null) => return Ok(ann),
        Some(_) => return Err("annotations must be an object of slug -> spans".into()),
    };
    let mut seen = HashSet::new();
    for (key, spans) in map {
        let item = resolve_slug(q, key).map_err(|e| e.to_string())?;
        if !seen.insert(item.slug) {
            return Err(format!("duplicate key for {}", item.slug));
        }
        let list = match spans {
            Value::Null => Vec::new(),
            Value::Array(items) => items
                .iter()
                .map(|s| match s {
                    Value::String(s) => Ok(s.clone()),
                    other => Err(format!("span for {} is not a string: {other}", item.slug)),
                })
                .collect::<Result<Vec<_>, _>>()?,
            other => return Err(format!("spans for {} must be a list, got {other}", item.slug)),
        };
        let list = list.into_iter().filter(|s| !s.trim().is_empty()).collect();
        ann.evidence.insert(item.slug, list);
    }
    Ok(ann)
}

/// Load a binary-verdict (PRIMATE format) corpus.
pub fn load_primate(
    bytes: &[u8],
    source: &str,
    q: QuestionnaireId,
) -> Result<Vec<(Post, BinaryAnnotation)>, CorpusError> {
    parse_records(bytes, source)?
        .into_iter()
        .enumerate()
        .map(|(index, rec)| {
            let ann = binary_from_value(rec.annotations.as_ref(), &rec.post.id, q).map_err(
                |message| CorpusError::Schema {
                    source_name: source.to_string(),
                    index,
                    message,
                },
            )?;
            Ok((rec.post, ann))
        })
        .collect()
}

/// Load span records, keeping the optional status and model fields.
pub fn load_span_records(
    bytes: &[u8],
    source: &str,
    q: QuestionnaireId,
) -> Result<Vec<SpanRecord>, CorpusError> {
    parse_records(bytes, source)?
        .into_iter()
        .enumerate()
        .map(|(index, rec)| {
            let annotation = spans_from_value(rec.annotations.as_ref(), &rec.post.id, q).map_err(
                |message| CorpusError::Schema {
                    source_name: source.to_string(),
                    index,
                    message,
                },
            )?;
            Ok(SpanRecord {
                post: rec.post,
                annotation,
                status: rec.status,
                model: rec.model,
            })
        })
        .collect()
}

/// Load a span-evidence ground-truth file. Missing slugs read as `[]`.
pub fn load_span_ground_truth(
    bytes: &[u8],
    source: &str,
    q: QuestionnaireId,
) -> Result<Vec<(Post, SpanAnnotation)>, CorpusError> {
    Ok(load_span_records(bytes, source, q)?
        .into_iter()
        .map(|r| (r.post, r.annotation))
        .collect())
}

/// A corpus of either format.
#[derive(Debug, Clone)]
pub enum Corpus {
    Binary(Vec<(Post, BinaryAnnotation)>),
    Spans(Vec<(Post, SpanAnnotation)>),
}

impl Corpus {
    /// Load either format, deciding by the shape of the first record's
    /// `annotations` field.
    pub fn load(bytes: &[u8], source: &str, q: QuestionnaireId) -> Result<Self, CorpusError> {
        let values = split_records(bytes, source)?;
        let is_spans = values
            .first()
            .and_then(|v| v.get("annotations"))
            .is_some_and(|a| a.is_object());
        if is_spans {
            load_span_ground_truth(bytes, source, q).map(Corpus::Spans)
        } else {
            load_primate(bytes, source, q).map(Corpus::Binary)
        }
    }

    pub fn read_file(path: &std::path::Path, q: QuestionnaireId) -> Result<Self, CorpusError> {
        let bytes = std::fs::read(path).map_err(|err| CorpusError::Io {
            path: path.display().to_string(),
            err,
        })?;
        Corpus::load(&bytes, &source_name(path), q)
    }

    pub fn len(&self) -> usize {
        match self {
            Corpus::Binary(v) => v.len(),
            Corpus::Spans(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn posts(&self) -> Vec<&Post> {
        match self {
            Corpus::Binary(v) => v.iter().map(|(p, _)| p).collect(),
            Corpus::Spans(v) => v.iter().map(|(p, _)| p).collect(),
        }
    }

    /// Binary view; span records are binarized.
    pub fn binary(&self) -> Vec<(Post, BinaryAnnotation)> {
        match self {
            Corpus::Binary(v) => v.clone(),
            Corpus::Spans(v) => v.iter().map(|(p, s)| (p.clone(), binarize(s))).collect(),
        }
    }
}

/// The id prefix used for a file: its file name, so ids do not depend on
/// where the corpus is checked out.
pub fn source_name(path: &std::path::Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WriteOptions {
    /// Emit `post_id` on each record.
    pub include_ids: bool,
}

#[derive(Serialize)]
struct BinaryOut<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    post_id: Option<&'a str>,
    post_title: &'a str,
    post_text: &'a str,
    annotations: Vec<[&'a str; 2]>,
}

#[derive(Serialize)]
struct SpanOut<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    post_id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    status: Option<RecordStatus>,
    post_title: &'a str,
    post_text: &'a str,
    annotations: &'a BTreeMap<&'static str, Vec<String>>,
}

fn finish(value: &impl Serialize) -> String {
    let mut out = serde_json::to_string_pretty(value).expect("corpus records serialize");
    out.push('\n');
    out
}

/// Canonical binary-format file: sorted slugs, 2-space indentation.
pub fn write_primate(records: &[(Post, BinaryAnnotation)], opts: WriteOptions) -> String {
    let out: Vec<_> = records
        .iter()
        .map(|(post, ann)| BinaryOut {
            post_id: opts.include_ids.then_some(post.id.as_str()),
            post_title: &post.title,
            post_text: &post.body,
            annotations: ann.verdicts.iter().map(|(s, v)| [*s, v.as_str()]).collect(),
        })
        .collect();
    finish(&out)
}

/// Canonical span-format file.
pub fn write_span_records(records: &[SpanRecord], opts: WriteOptions) -> String {
    let out: Vec<_> = records
        .iter()
        .map(|r| SpanOut {
            post_id: opts.include_ids.then_some(r.post.id.as_str()),
            model: r.model.as_deref(),
            status: r.status,
            post_title: &r.post.title,
            post_text: &r.post.body,
            annotations: &r.annotation.evidence,
        })
        .collect();
    finish(&out)
}

pub fn write_span_ground_truth(records: &[(Post, SpanAnnotation)], opts: WriteOptions) -> String {
    let records: Vec<_> = records
        .iter()
        .map(|(post, ann)| SpanRecord {
            post: post.clone(),
            annotation: ann.clone(),
            status: None,
            model: None,
        })
        .collect();
    write_span_records(&records, opts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub dataset: String,
    pub questionnaire: QuestionnaireId,
    pub post_count: usize,
    pub yes_counts: BTreeMap<&'static str, usize>,
}

impl CorpusStats {
    pub fn render_table(stats: &[CorpusStats]) -> String {
        let width = stats
            .iter()
            .map(|s| s.dataset.len())
            .chain(["Dataset".len(), "Total".len()])
            .max()
            .unwrap_or(7);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>15}", "Dataset", "Number of Posts");
        for s in stats {
            let _ = writeln!(out, "{:<width$}  {:>15}", s.dataset, s.post_count);
        }
        let total: usize = stats.iter().map(|s| s.post_count).sum();
        let _ = writeln!(out, "{:<width$}  {:>15}", "Total", total);
        out
    }
}

pub fn stats(dataset: &str, q: QuestionnaireId, corpus: &Corpus) -> CorpusStats {
    let mut yes_counts: BTreeMap<&'static str, usize> =
        q.items().iter().map(|i| (i.slug, 0)).collect();
    for (_, ann) in corpus.binary() {
        for (slug, verdict) in &ann.verdicts {
            if verdict.is_yes() {
                *yes_counts.entry(slug).or_default() += 1;
            }
        }
    }
    CorpusStats {
        dataset: dataset.to_string(),
        questionnaire: q,
        post_count: corpus.len(),
        yes_counts,
    }
}
