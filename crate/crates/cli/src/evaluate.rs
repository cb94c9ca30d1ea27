use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dxassist_core::corpus::{load_span_ground_truth, load_span_records, source_name, Post, SpanAnnotation};
use dxassist_core::evaluation::{
    evaluate_run, render_tables, EmbeddingBackend, EvalOptions, JoinKey, LexicalBackend, Prediction,
    PredictionOutcome, RunReport, SimilarityBackend,
};
use dxassist_gateway::{Cassette, Gateway};

use crate::config::{BackendChoice, Settings};
use crate::{io_error, write_file, CliError, ReportFormat};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| io_error(path, e))
}

/// Embeddings for every text the ranking will compare: item descriptions
/// and predicted spans.
fn embedding_backend(settings: &Settings, runs: &[(String, Vec<Prediction>)]) -> Result<EmbeddingBackend, CliError> {
    let mut texts: BTreeSet<String> = settings
        .questionnaire
        .items()
        .iter()
        .map(|i| i.text.to_string())
        .collect();
    for (_, preds) in runs {
        for p in preds {
            if let PredictionOutcome::Annotated(a) = &p.outcome {
                texts.extend(a.evidence.values().flatten().cloned());
            }
        }
    }
    let texts: Vec<String> = texts.into_iter().collect();
    let (_, endpoint) = settings.endpoint(settings.cfg.evaluation.embedding_endpoint.as_deref())?;
    let cassette = match settings.cassette_path()? {
        Some(path) => Cassette::open(path, settings.mode)?,
        None => Cassette::passthrough(),
    };
    let gateway = Gateway::new(settings.cfg.rate_limit.clone(), Arc::new(cassette))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(e.to_string()))?;
    let mut vectors = HashMap::new();
    for chunk in texts.chunks(64) {
        let got = rt.block_on(gateway.embed(&endpoint, chunk))?;
        vectors.extend(chunk.iter().cloned().zip(got));
    }
    Ok(EmbeddingBackend::new(vectors))
}

pub fn run(
    settings: &Settings,
    prediction_files: &[PathBuf],
    truth: Option<PathBuf>,
    format: ReportFormat,
    join_by_text: bool,
) -> Result<(), CliError> {
    let truth_path = truth
        .or_else(|| settings.cfg.truth.clone())
        .ok_or_else(|| CliError::Usage("no ground truth given (--truth)".into()))?;
    let q = settings.questionnaire;
    let truth: Vec<(Post, SpanAnnotation)> =
        load_span_ground_truth(&read(&truth_path)?, &source_name(&truth_path), q)
            .map_err(|e| CliError::Data(format!("{}: {e}", truth_path.display())))?;

    let mut runs = Vec::new();
    for path in prediction_files {
        let records = load_span_records(&read(path)?, &source_name(path), q)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let model = records
            .iter()
            .find_map(|r| r.model.clone())
            .unwrap_or_else(|| {
                path.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            });
        runs.push((model, Prediction::from_records(records)));
    }

    let backend: Box<dyn SimilarityBackend> = match settings.cfg.evaluation.backend {
        BackendChoice::Lexical => Box::new(LexicalBackend),
        BackendChoice::Endpoint => Box::new(embedding_backend(settings, &runs)?),
    };
    let ev = &settings.cfg.evaluation;
    let mut reports: Vec<RunReport> = Vec::new();
    for (model, preds) in &runs {
        let opts = EvalOptions {
            model: model.clone(),
            questionnaire: q,
            match_threshold: settings.cfg.thresholds.match_,
            alignment_threshold: settings.cfg.thresholds.alignment,
            averaging: settings.averaging,
            failure_policy: ev.failure_policy,
            join: if join_by_text { JoinKey::PostText } else { ev.join },
        };
        let report = evaluate_run(preds, &truth, backend.as_ref(), &opts)
            .map_err(|e| CliError::Data(format!("{model}: {e}")))?;
        reports.push(report);
    }

    let tables = render_tables(&reports);
    let out = &settings.out_dir;
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        let mut json = serde_json::to_string_pretty(&reports).expect("reports serialize");
        json.push('\n');
        write_file(&out.join(REPORT_JSON), json.as_bytes())?;
    }
    if matches!(format, ReportFormat::Text | ReportFormat::Both) {
        write_file(&out.join(REPORT_TEXT), tables.as_bytes())?;
    }
    print!("{tables}");
    Ok(())
}
