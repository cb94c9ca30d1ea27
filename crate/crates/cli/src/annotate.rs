use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::Arc;

use dxassist_core::corpus::{
    source_name, write_primate, write_span_records, Corpus, Post, RecordStatus, SpanAnnotation,
    SpanRecord, WriteOptions,
};
use dxassist_core::parsing::{detect_echo, parse, ParseOptions, Payload};
use dxassist_core::prompting::{render, OutputFormat};
use dxassist_gateway::{Cassette, Gateway};
use futures::{StreamExt, TryStreamExt};
use serde::Serialize;

use crate::config::Settings;
use crate::{write_file, CliError};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const AUDIT_FILE: &str = "audit.jsonl";

/// One line of the audit log. Holds nothing that varies between runs of
/// the same cassette (no clocks, no latencies, no attempt counts).
#[derive(Debug, Serialize)]
struct AuditLine<'a> {
    post_id: &'a str,
    fingerprint: &'a str,
    status: RecordStatus,
    echo_overlap: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    salvage_notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn read_posts(settings: &Settings, inputs: &[PathBuf]) -> Result<Vec<Post>, CliError> {
    let mut posts = Vec::new();
    let mut seen = HashSet::new();
    for path in inputs {
        let corpus = Corpus::read_file(path, settings.questionnaire)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        for post in corpus.posts() {
            if !seen.insert(post.id.clone()) {
                return Err(CliError::Data(format!(
                    "{}: post id {:?} appears twice in the input",
                    source_name(path),
                    post.id
                )));
            }
            posts.push(post.clone());
        }
    }
    Ok(posts)
}

pub fn run(settings: &Settings, inputs: &[PathBuf]) -> Result<(), CliError> {
    let inputs = if inputs.is_empty() {
        settings.cfg.corpus.clone()
    } else {
        inputs.to_vec()
    };
    if inputs.is_empty() {
        return Err(CliError::Usage("no input corpus given".into()));
    }
    let posts = read_posts(settings, &inputs)?;
    if posts.is_empty() {
        return Err(CliError::Usage("input corpus is empty".into()));
    }
    let spec = settings.prompt_spec()?;
    let (_, endpoint) = settings.endpoint(None)?;
    let cassette = match settings.cassette_path()? {
        Some(path) => Cassette::open(path, settings.mode)?,
        None => Cassette::passthrough(),
    };
    let policy = settings.cfg.rate_limit.clone();
    let workers = policy.max_in_flight;
    let gateway = Arc::new(Gateway::new(policy, Arc::new(cassette))?);

    let prompts = posts
        .iter()
        .map(|p| render(&spec, p).map_err(|e| CliError::Usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;

    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(e.to_string()))?;
    let total = prompts.len();
    let exchanges = rt.block_on(async {
        futures::stream::iter(prompts.iter().cloned())
            .map(|prompt| {
                let gw = gateway.clone();
                let ep = endpoint.clone();
                async move { gw.complete(&ep, &prompt).await }
            })
            .buffered(workers)
            .enumerate()
            .map(|(i, r)| {
                if (i + 1) % 10 == 0 || i + 1 == total {
                    eprintln!("annotate: {}/{total} responses", i + 1);
                }
                r
            })
            .try_collect::<Vec<_>>()
            .await
    })?;

    let q = settings.questionnaire;
    let opts = ParseOptions {
        strict: settings.strict,
    };
    let mut span_records = Vec::new();
    let mut verdict_records = Vec::new();
    let mut audit = String::new();
    let (mut echoes, mut failures) = (0, 0);
    for ((post, prompt), ex) in posts.iter().zip(&prompts).zip(&exchanges) {
        // An echoed prompt contains the exemplar output, which would parse,
        // so echo detection must come first.
        let echo = detect_echo(&prompt.full_text(), &ex.response_text, settings.cfg.thresholds.echo);
        let mut line = AuditLine {
            post_id: &post.id,
            fingerprint: &ex.fingerprint,
            status: RecordStatus::Ok,
            echo_overlap: echo.overlap_ratio,
            salvage_notes: vec![],
            error: None,
        };
        let mut annotation = SpanAnnotation::empty(&post.id, q);
        if echo.is_echo {
            echoes += 1;
            line.status = RecordStatus::Echo;
        } else {
            match parse(&ex.response_text, q, spec.output_format, &post.id, &opts) {
                Ok(parsed) => {
                    line.salvage_notes = parsed.salvage_notes;
                    match parsed.payload {
                        Payload::SpanMap(a) => annotation = a,
                        Payload::VerdictPairs(b) => verdict_records.push((post.clone(), b)),
                    }
                }
                Err(e) => {
                    failures += 1;
                    line.status = RecordStatus::ParseFailure;
                    line.error = Some(e.to_string());
                }
            }
        }
        span_records.push(SpanRecord {
            post: post.clone(),
            annotation,
            status: Some(line.status),
            model: Some(endpoint.model_name.clone()),
        });
        audit.push_str(&serde_json::to_string(&line).expect("audit serializes"));
        audit.push('\n');
    }

    let out = &settings.out_dir;
    let ids = WriteOptions { include_ids: true };
    let contents = match spec.output_format {
        OutputFormat::SpanMap => write_span_records(&span_records, ids),
        // Verdict runs produce binary-format files; failures live only in
        // the audit log.
        OutputFormat::VerdictPairs => write_primate(&verdict_records, ids),
    };
    write_file(&out.join(ANNOTATIONS_FILE), contents.as_bytes())?;
    write_file(&out.join(AUDIT_FILE), audit.as_bytes())?;
    eprintln!(
        "annotate: {total} posts, {} parsed, {echoes} echoed, {failures} parse failures -> {}",
        total - echoes - failures,
        out.join(ANNOTATIONS_FILE).display()
    );
    Ok(())
}
