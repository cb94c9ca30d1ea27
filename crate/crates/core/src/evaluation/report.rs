use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::hits::{first_match_rank, BackendKind, SimilarityBackend, DEFAULT_MATCH_THRESHOLD};
use super::metrics::{classification_metrics, Averaging, ClassificationReport, LabeledPair};
use super::EvalError;
use crate::corpus::{Post, RecordStatus, SpanAnnotation, SpanRecord};
use crate::parsing::{align_tokens, DEFAULT_ALIGNMENT_THRESHOLD};
use crate::questionnaire::QuestionnaireId;
use crate::text::tokens_with_offsets;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    ParseFailure,
    Echo,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PredictionOutcome {
    Annotated(SpanAnnotation),
    Failed(FailureKind),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub post: Post,
    pub outcome: PredictionOutcome,
}

impl Prediction {
    /// Predictions from span records; records with a failure status become
    /// failed predictions.
    pub fn from_records(records: Vec<SpanRecord>) -> Vec<Prediction> {
        records
            .into_iter()
            .map(|r| {
                let outcome = match r.status {
                    Some(RecordStatus::Echo) => PredictionOutcome::Failed(FailureKind::Echo),
                    Some(RecordStatus::ParseFailure) => {
                        PredictionOutcome::Failed(FailureKind::ParseFailure)
                    }
                    Some(RecordStatus::Ok) | None => PredictionOutcome::Annotated(r.annotation),
                };
                Prediction {
                    post: r.post,
                    outcome,
                }
            })
            .collect()
    }
}

/// How unparseable or echoed outputs enter the metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Excluded from hits@k, scored as all-no for classification.
    #[default]
    AllNo,
    /// Excluded from every metric.
    Exclude,
}

impl FromStr for FailurePolicy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "all_no" => Ok(FailurePolicy::AllNo),
            "exclude" => Ok(FailurePolicy::Exclude),
            other => Err(EvalError::InvalidOption(format!("unknown failure policy {other:?}"))),
        }
    }
}

/// How predictions are matched to ground-truth posts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinKey {
    #[default]
    PostId,
    /// Whitespace-normalized post text, for files without shared ids.
    PostText,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub model: String,
    pub questionnaire: QuestionnaireId,
    pub match_threshold: f64,
    pub alignment_threshold: f64,
    pub averaging: Averaging,
    pub failure_policy: FailurePolicy,
    pub join: JoinKey,
}

impl EvalOptions {
    pub fn new(model: impl Into<String>, questionnaire: QuestionnaireId) -> Self {
        EvalOptions {
            model: model.into(),
            questionnaire,
            match_threshold: DEFAULT_MATCH_THRESHOLD,
            alignment_threshold: DEFAULT_ALIGNMENT_THRESHOLD,
            averaging: Averaging::Micro,
            failure_policy: FailurePolicy::AllNo,
            join: JoinKey::PostId,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HitsReport {
    pub hits_at_1: f64,
    pub hits_at_5: f64,
    /// (post, symptom) pairs scored.
    pub evaluated_pairs: usize,
    pub hit_count_at_1: usize,
    pub hit_count_at_5: usize,
    /// Pairs whose ground truth has no span.
    pub skipped_pairs: usize,
    /// Posts left out because the model output failed to parse or echoed.
    pub excluded_posts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationPair {
    pub micro: ClassificationReport,
    #[serde(rename = "macro")]
    pub macro_: ClassificationReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct FailureCounts {
    pub parse_failure: usize,
    pub echo: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub model: String,
    pub questionnaire: QuestionnaireId,
    pub backend: BackendKind,
    pub averaging: Averaging,
    pub failure_policy: FailurePolicy,
    pub predictions: usize,
    pub failures: FailureCounts,
    pub hits: HitsReport,
    pub classification: ClassificationPair,
    /// Predicted spans that could not be located in the post.
    pub unaligned_spans: usize,
}

impl RunReport {
    pub fn selected_classification(&self) -> &ClassificationReport {
        match self.averaging {
            Averaging::Micro => &self.classification.micro,
            Averaging::Macro => &self.classification.macro_,
        }
    }

    /// Canonical JSON: 2-space indentation, trailing newline.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }
}

fn text_key(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Evaluate one model's predictions against span ground truth.
pub fn evaluate_run(
    predictions: &[Prediction],
    truth: &[(Post, SpanAnnotation)],
    backend: &dyn SimilarityBackend,
    opts: &EvalOptions,
) -> Result<RunReport, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let index: HashMap<String, usize> = truth
        .iter()
        .enumerate()
        .map(|(i, (post, _))| match opts.join {
            JoinKey::PostId => (post.id.clone(), i),
            JoinKey::PostText => (text_key(&post.body), i),
        })
        .collect();

    // Joined in ground-truth order, so prediction order never matters.
    let mut joined: Vec<Option<&Prediction>> = vec![None; truth.len()];
    for p in predictions {
        let key = match opts.join {
            JoinKey::PostId => p.post.id.clone(),
            JoinKey::PostText => text_key(&p.post.body),
        };
        let i = *index
            .get(&key)
            .ok_or_else(|| EvalError::UnknownPost(p.post.id.clone()))?;
        if joined[i].replace(p).is_some() {
            return Err(EvalError::DuplicatePrediction(p.post.id.clone()));
        }
    }

    let q = opts.questionnaire;
    let mut failures = FailureCounts::default();
    let mut pairs = Vec::new();
    let (mut evaluated, mut hit1, mut hit5, mut skipped, mut excluded) = (0, 0, 0, 0, 0);
    let mut unaligned = 0;

    for (slot, (post, truth_ann)) in joined.iter().zip(truth) {
        let Some(pred) = slot else { continue };
        let pred_ann = match &pred.outcome {
            PredictionOutcome::Annotated(a) => Some(a),
            PredictionOutcome::Failed(kind) => {
                match kind {
                    FailureKind::Echo => failures.echo += 1,
                    FailureKind::ParseFailure => failures.parse_failure += 1,
                }
                excluded += 1;
                None
            }
        };

        if pred_ann.is_some() || opts.failure_policy == FailurePolicy::AllNo {
            for item in q.items() {
                let predicted = pred_ann.is_some_and(|a| !a.spans(item.slug).is_empty());
                let actual = !truth_ann.spans(item.slug).is_empty();
                pairs.push(LabeledPair::new(item.slug, predicted, actual));
            }
        }

        let Some(pred_ann) = pred_ann else { continue };
        let body = tokens_with_offsets(&post.body);
        for spans in pred_ann.evidence.values() {
            unaligned += spans
                .iter()
                .filter(|s| align_tokens(s, &body, opts.alignment_threshold).is_err())
                .count();
        }
        for item in q.items() {
            let truth_spans = truth_ann.spans(item.slug);
            if truth_spans.is_empty() {
                skipped += 1;
                continue;
            }
            evaluated += 1;
            let rank = first_match_rank(
                pred_ann.spans(item.slug),
                truth_spans,
                item.text,
                backend,
                opts.match_threshold,
            )?;
            match rank {
                Some(0) => {
                    hit1 += 1;
                    hit5 += 1;
                }
                Some(r) if r < 5 => hit5 += 1,
                _ => {}
            }
        }
    }

    let frac = |n: usize| if evaluated == 0 { 0.0 } else { n as f64 / evaluated as f64 };
    let classification = ClassificationPair {
        micro: classification_metrics(&pairs, Averaging::Micro)?,
        macro_: classification_metrics(&pairs, Averaging::Macro)?,
    };
    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        model: opts.model.clone(),
        questionnaire: q,
        backend: backend.kind(),
        averaging: opts.averaging,
        failure_policy: opts.failure_policy,
        predictions: predictions.len(),
        failures,
        hits: HitsReport {
            hits_at_1: frac(hit1),
            hits_at_5: frac(hit5),
            evaluated_pairs: evaluated,
            hit_count_at_1: hit1,
            hit_count_at_5: hit5,
            skipped_pairs: skipped,
            excluded_posts: excluded,
        },
        classification,
        unaligned_spans: unaligned,
    })
}

/// Aligned-column tables: hits@k with one column per model, then the
/// classification metrics with one row per model.
pub fn render_tables(reports: &[RunReport]) -> String {
    let mut out = String::new();
    if reports.is_empty() {
        return out;
    }
    let q = reports[0].questionnaire;
    let col = reports
        .iter()
        .map(|r| r.model.len())
        .max()
        .unwrap_or(0)
        .max(9);
    let _ = writeln!(out, "{q} symptom annotation, hits@k");
    let _ = write!(out, "{:<18}", "Evaluation Metric");
    for r in reports {
        let _ = write!(out, "  {:>col$}", r.model);
    }
    out.push('\n');
    for (label, get) in [
        ("hits@1", (|r: &RunReport| r.hits.hits_at_1) as fn(&RunReport) -> f64),
        ("hits@<5", |r: &RunReport| r.hits.hits_at_5),
    ] {
        let _ = write!(out, "{label:<18}");
        for r in reports {
            let _ = write!(out, "  {:>col$}", format!("{:.1}%", get(r) * 100.0));
        }
        out.push('\n');
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "{q} symptom annotation, classification ({})",
        reports[0].averaging
    );
    let _ = writeln!(
        out,
        "{:<col$}  {:>8}  {:>9}  {:>6}  {:>8}",
        "Method", "Accuracy", "Precision", "Recall", "F1-score"
    );
    for r in reports {
        let c = r.selected_classification();
        let _ = writeln!(
            out,
            "{:<col$}  {:>8.2}  {:>9.2}  {:>6.2}  {:>8.2}",
            r.model, c.accuracy, c.precision, c.recall, c.f1
        );
    }
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{}: {} predictions, {} scored pairs, {} skipped (empty truth), {} excluded posts ({} parse failures, {} echoes), {} unaligned spans",
            r.model,
            r.predictions,
            r.hits.evaluated_pairs,
            r.hits.skipped_pairs,
            r.hits.excluded_posts,
            r.failures.parse_failure,
            r.failures.echo,
            r.unaligned_spans
        );
    }
    out
}
