//! Annotate + evaluate over the bundled five-post replay fixture.
//!
//! The cassette and golden files are committed. To rebuild them (only
//! needed when the prompt layout changes):
//!
//!     cargo test -p dxassist-cli --test e2e -- --ignored record_e2e_cassette
//!     cargo test -p dxassist-cli --test e2e -- --ignored regenerate_goldens

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e")
}

fn dxassist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dxassist"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = dxassist(args);
    assert!(
        out.status.success(),
        "dxassist {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// annotate then evaluate in replay mode, writing into `out`.
fn replay_run(out: &Path) {
    let config = fixture().join("run.toml");
    let (config, out) = (config.to_str().unwrap(), out.to_str().unwrap());
    run_ok(&["annotate", "--config", config, "--out", out]);
    let annotations = format!("{out}/annotations.json");
    run_ok(&["evaluate", "--config", config, "--out", out, "--predictions", &annotations]);
}

const OUTPUTS: [&str; 4] = ["annotations.json", "audit.jsonl", "report.json", "report.txt"];

#[test]
fn replay_matches_golden_and_is_repeatable() {
    let golden = fixture().join("golden");
    let started = Instant::now();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        replay_run(dir.path());
        for name in OUTPUTS {
            let got = std::fs::read(dir.path().join(name)).unwrap();
            let want = std::fs::read(golden.join(name)).unwrap();
            assert!(got == want, "{name} differs from golden:\n{}", String::from_utf8_lossy(&got));
        }
    }
    assert!(started.elapsed() < Duration::from_secs(20), "two runs took {:?}", started.elapsed());
}

/// Values worked out by hand from the fixture posts and scripted replies:
///
/// - e2e-1 exact spans (+1 invented span): 4/4 hits at 1
/// - e2e-2 fenced, one paraphrase, one missing, one extra: 2/3 at 1 and 5
/// - e2e-3 single-quoted dict with preamble: 3/3 at 1
/// - e2e-4 a decoy quoting the item text outranks the true span: 1/2 at 1,
///   2/2 at 5
/// - e2e-5 echoes the prompt: excluded from hits, all-no for classification
#[test]
fn golden_report_matches_hand_oracle() {
    let text = std::fs::read_to_string(fixture().join("golden/report.json")).unwrap();
    let reports: Value = serde_json::from_str(&text).unwrap();
    let r = &reports[0];
    assert_eq!(r["model"], "gpt-4o-mini");
    assert_eq!(r["predictions"], 5);
    assert_eq!(r["failures"], json!({"parse_failure": 0, "echo": 1}));
    let h = &r["hits"];
    assert_eq!(h["evaluated_pairs"], 12);
    assert_eq!(h["hit_count_at_1"], 10);
    assert_eq!(h["hit_count_at_5"], 11);
    assert_eq!(h["skipped_pairs"], 24);
    assert_eq!(h["excluded_posts"], 1);
    assert!((h["hits_at_1"].as_f64().unwrap() - 10.0 / 12.0).abs() < 1e-12);
    assert!((h["hits_at_5"].as_f64().unwrap() - 11.0 / 12.0).abs() < 1e-12);
    let c = &r["classification"]["micro"];
    assert_eq!(c["confusion"], json!({"tp": 11, "fp": 1, "fn": 2, "tn": 31}));
    assert!((c["accuracy"].as_f64().unwrap() - 42.0 / 45.0).abs() < 1e-12);
    assert!((c["precision"].as_f64().unwrap() - 11.0 / 12.0).abs() < 1e-12);
    assert!((c["recall"].as_f64().unwrap() - 11.0 / 13.0).abs() < 1e-12);
    assert!((c["f1"].as_f64().unwrap() - 22.0 / 25.0).abs() < 1e-12);
    assert_eq!(r["unaligned_spans"], 1);

    let audit = std::fs::read_to_string(fixture().join("golden/audit.jsonl")).unwrap();
    let statuses: Vec<String> = audit
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["status"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(statuses, ["ok", "ok", "ok", "ok", "echo"]);
}

#[test]
fn replay_miss_exits_with_network_code_and_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("other.json");
    std::fs::write(
        &corpus,
        r#"[{"post_id": "x", "post_title": "t", "post_text": "A post nobody recorded.", "annotations": {}}]"#,
    )
    .unwrap();
    let out = dxassist(&[
        "annotate",
        "--config",
        fixture().join("run.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        corpus.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("fingerprint"), "{err}");
}

#[test]
fn empty_corpus_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("empty.json");
    std::fs::write(&corpus, "[]").unwrap();
    let out = dxassist(&[
        "annotate",
        "--config",
        fixture().join("run.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        corpus.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

// ---- fixture regeneration -------------------------------------------------

async fn scripted(State(script): State<Value>, Json(body): Json<Value>) -> Json<Value> {
    let user = body["messages"]
        .as_array()
        .and_then(|m| m.last())
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default()
        .to_string();
    let truth: Value =
        serde_json::from_str(&std::fs::read_to_string(fixture().join("truth.json")).unwrap()).unwrap();
    let post = truth
        .as_array()
        .unwrap()
        .iter()
        .find(|p| {
            let text = p["post_text"].as_str().unwrap();
            user.contains(&text[..30])
        })
        .expect("prompt names a fixture post");
    let reply = script[post["post_id"].as_str().unwrap()].as_str().unwrap();
    let content = if reply == "ECHO" { user.clone() } else { reply.to_string() };
    Json(json!({"choices": [{"message": {"role": "assistant", "content": content}}]}))
}

#[test]
#[ignore = "rewrites tests/fixtures/e2e/cassette.jsonl"]
fn record_e2e_cassette() {
    let script: Value =
        serde_json::from_str(&std::fs::read_to_string(fixture().join("stub_script.json")).unwrap())
            .unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let url = rt.block_on(async {
        let app = Router::new()
            .route("/v1/chat/completions", post(scripted))
            .with_state(script);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
        format!("http://{addr}/v1")
    });
    let cassette = fixture().join("cassette.jsonl");
    let _ = std::fs::remove_file(&cassette);
    let config = std::fs::read_to_string(fixture().join("run.toml"))
        .unwrap()
        .replace("http://127.0.0.1:9/v1", &url);
    let record_cfg = fixture().join("record.toml");
    std::fs::write(&record_cfg, config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dxassist(&[
        "annotate",
        "--config",
        record_cfg.to_str().unwrap(),
        "--mode",
        "record",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    std::fs::remove_file(&record_cfg).unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // Appends happen in completion order; sort for a stable file.
    let text = std::fs::read_to_string(&cassette).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.sort();
    std::fs::write(&cassette, lines.join("\n") + "\n").unwrap();
}

#[test]
#[ignore = "rewrites tests/fixtures/e2e/golden"]
fn regenerate_goldens() {
    let dir = tempfile::tempdir().unwrap();
    replay_run(dir.path());
    let golden = fixture().join("golden");
    std::fs::create_dir_all(&golden).unwrap();
    for name in OUTPUTS {
        std::fs::copy(dir.path().join(name), golden.join(name)).unwrap();
    }
}
