//! Acceptance suite. One line per criterion: PASS, FAIL or SKIP, followed
//! by the measured values. Exits non-zero if anything fails.
//!
//!     cargo test -p dxassist-cli --test acceptance

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use dxassist_core::corpus::{load_primate, BinaryAnnotation, Post, SpanAnnotation};
use dxassist_core::evaluation::{
    classification_metrics, cohens_kappa, evaluate_run, first_match_rank, lexical_similarity,
    Averaging, EvalOptions, LabeledPair, LexicalBackend, Prediction, PredictionOutcome,
};
use dxassist_core::finetune::{export, ExportFormat, ExportOptions};
use dxassist_core::parsing::{
    align, detect_echo, parse, AlignmentError, ParseOptions, DEFAULT_ALIGNMENT_THRESHOLD,
    DEFAULT_ECHO_THRESHOLD,
};
use dxassist_core::prompting::{ChatMessage, OutputFormat, RenderedPrompt, Role};
use dxassist_core::text::{text_similarity, token_similarity, tokens};
use dxassist_core::{binarize, QuestionnaireId, SymptomVerdict};
use dxassist_gateway::{Cassette, CassetteMode, Gateway, ModelEndpoint, RateLimitPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const PRIMATE: &str = include_str!("../../core/tests/fixtures/primate_record.json");
const SPAN_OUTPUT: &str = include_str!("../../core/tests/fixtures/span_exemplar_output.json");
const VERDICT_OUTPUT: &str = include_str!("../../core/tests/fixtures/verdict_pairs_output.txt");
const ECHO_IN: &str = include_str!("../../core/tests/fixtures/instruction_echo_input.txt");
const ECHO_OUT: &str = include_str!("../../core/tests/fixtures/instruction_echo_output.txt");

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}
use Outcome::*;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

// ---- classification metrics ------------------------------------------------

/// Straight counting, no shared code with the library.
fn brute_metrics(pairs: &[(usize, bool, bool)], slugs: &[usize]) -> [f64; 4] {
    let (mut tp, mut fp, mut fn_, mut tn) = (0.0, 0.0, 0.0, 0.0);
    for &(s, p, t) in pairs {
        if !slugs.contains(&s) {
            continue;
        }
        match (p, t) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => tn += 1.0,
        }
    }
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let p = div(tp, tp + fp);
    let r = div(tp, tp + fn_);
    [div(tp + tn, tp + fp + fn_ + tn), p, r, div(2.0 * p * r, p + r)]
}

fn metric_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=20);
        let raw: Vec<(usize, bool, bool)> = (0..n)
            .map(|_| (rng.random_range(0..4), rng.random_bool(0.5), rng.random_bool(0.5)))
            .collect();
        let pairs: Vec<LabeledPair> =
            raw.iter().map(|&(s, p, t)| LabeledPair::new(format!("s{s}"), p, t)).collect();
        let present: Vec<usize> = (0..4).filter(|s| raw.iter().any(|r| r.0 == *s)).collect();

        let micro = classification_metrics(&pairs, Averaging::Micro).unwrap();
        let want = brute_metrics(&raw, &present);
        let got = [micro.accuracy, micro.precision, micro.recall, micro.f1];
        for (g, w) in got.iter().zip(want) {
            worst = worst.max((g - w).abs());
        }

        let macro_ = classification_metrics(&pairs, Averaging::Macro).unwrap();
        let mut sums = [0.0; 4];
        for s in &present {
            for (acc, v) in sums.iter_mut().zip(brute_metrics(&raw, &[*s])) {
                *acc += v;
            }
        }
        let got = [macro_.accuracy, macro_.precision, macro_.recall, macro_.f1];
        for (g, s) in got.iter().zip(sums) {
            worst = worst.max((g - s / present.len() as f64).abs());
        }
    }
    let took = started.elapsed();
    check(
        worst <= 1e-12 && took < Duration::from_secs(5),
        format!("1000 inputs, max |diff| {worst:.1e} (tol 1e-12), {took:.2?} (< 5s)"),
    )
}

// ---- kappa ----------------------------------------------------------------

fn kappa_checks() -> Outcome {
    use SymptomVerdict::{No, Yes};
    // 4 agree yes, 4 agree no, 2 split one each way
    let a = [Yes, Yes, Yes, Yes, No, No, No, No, Yes, No];
    let b = [Yes, Yes, Yes, Yes, No, No, No, No, No, Yes];
    let k442 = cohens_kappa(&a, &b).unwrap().kappa;
    let ident = cohens_kappa(&a, &a).unwrap().kappa;
    let indep = cohens_kappa(&[Yes, Yes, No, No], &[Yes, No, Yes, No]).unwrap().kappa;

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut asym: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..500 {
        let n = rng.random_range(1..=30);
        let x: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        match (cohens_kappa(&x, &y), cohens_kappa(&y, &x)) {
            (Ok(p), Ok(q)) => {
                asym = asym.max((p.kappa - q.kappa).abs());
                checked += 1;
            }
            (Err(_), Err(_)) => checked += 1,
            _ => asym = f64::INFINITY,
        }
    }
    check(
        (k442 - 0.6).abs() <= 1e-12 && ident == 1.0 && indep == 0.0 && asym <= 1e-12 && checked == 500,
        format!(
            "4/4/2 -> {k442} (0.6 ± 1e-12), identical -> {ident}, independent -> {indep}, \
             symmetry max |diff| {asym:.1e} over {checked} pairs"
        ),
    )
}

// ---- hits@k ---------------------------------------------------------------

const VOCAB: [&str; 12] = [
    "tired", "sleep", "energy", "little", "feeling", "night", "worry", "appetite", "down", "hopeless",
    "work", "friends",
];

fn random_span(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..=5);
    (0..n).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

fn random_spans(rng: &mut ChaCha8Rng, q: QuestionnaireId, id: &str, max: usize) -> SpanAnnotation {
    let mut ann = SpanAnnotation::empty(id, q);
    for item in q.items() {
        let n = rng.random_range(0..=max);
        ann.evidence.insert(item.slug, (0..n).map(|_| random_span(rng)).collect());
    }
    ann
}

/// Rank of a span = number of spans scored strictly higher, plus equal
/// scores listed before it. The first match is the matching span with the
/// smallest rank.
fn rank_oracle(pred: &[String], truth: &[String], query: &str) -> Option<usize> {
    let score: Vec<f64> = pred.iter().map(|p| lexical_similarity(p, query)).collect();
    (0..pred.len())
        .filter(|&i| truth.iter().any(|t| text_similarity(&pred[i], t) >= 0.8))
        .map(|i| (0..pred.len()).filter(|&j| score[j] > score[i] || (score[j] == score[i] && j < i)).count())
        .min()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn hits_properties() -> Outcome {
    let q = QuestionnaireId::Phq9;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut violations = 0;
    for run in 0..500 {
        let n_posts = rng.random_range(1..=4);
        let mut truth = Vec::new();
        let mut preds = Vec::new();
        for i in 0..n_posts {
            let id = format!("r{run}-{i}");
            let post = Post { id: id.clone(), title: String::new(), body: "body".into() };
            let mut t = random_spans(&mut rng, q, &id, 2);
            // make sure something is scorable
            t.evidence.insert(q.items()[0].slug, vec![random_span(&mut rng)]);
            truth.push((post.clone(), t));
            let outcome = PredictionOutcome::Annotated(random_spans(&mut rng, q, &id, 6));
            preds.push(Prediction { post, outcome });
        }
        let r = evaluate_run(&preds, &truth, &LexicalBackend, &EvalOptions::new("m", q)).unwrap();
        if r.hits.hits_at_1 > r.hits.hits_at_5 {
            violations += 1;
        }
    }

    let mut orderings = 0;
    let mut disagreements = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=5);
        let pred: Vec<String> = (0..n).map(|_| random_span(&mut rng)).collect();
        let truth: Vec<String> = (0..rng.random_range(1..=2)).map(|_| random_span(&mut rng)).collect();
        let query = random_span(&mut rng);
        for perm in permutations(n) {
            let ordered: Vec<String> = perm.iter().map(|&i| pred[i].clone()).collect();
            let got = first_match_rank(&ordered, &truth, &query, &LexicalBackend, 0.8).unwrap();
            if got != rank_oracle(&ordered, &truth, &query) {
                disagreements += 1;
            }
            orderings += 1;
        }
    }
    check(
        violations == 0 && disagreements == 0,
        format!(
            "hits@1 > hits@5 in {violations}/500 runs; rank oracle disagrees on \
             {disagreements}/{orderings} orderings (≤5 spans)"
        ),
    )
}

// ---- fixture parsing ------------------------------------------------------

fn fixture_parsing() -> Outcome {
    let q = QuestionnaireId::Phq9;
    let a1 = load_primate(PRIMATE.as_bytes(), "a1.json", q).unwrap();
    let a1_yes = a1[0].1.yes_count();

    let opts = ParseOptions::default();
    let a2 = parse(SPAN_OUTPUT, q, OutputFormat::SpanMap, "a2", &opts).unwrap();
    let a2_present = a2.spans().unwrap().present_slugs().count();
    let a2_yes = binarize(a2.spans().unwrap()).yes_count();

    let c = parse(VERDICT_OUTPUT, q, OutputFormat::VerdictPairs, "c", &opts).unwrap();
    let c_ann = c.verdicts().unwrap();
    let (c_yes, c_no) = (c_ann.yes_count(), c_ann.verdicts.len() - c_ann.yes_count());

    let echo = detect_echo(ECHO_IN, ECHO_OUT, DEFAULT_ECHO_THRESHOLD);
    check(
        a1_yes == 3 && a2_present == 3 && a2_yes == 3 && c_yes == 5 && c_no == 4 && echo.is_echo
            && echo.overlap_ratio == 1.0,
        format!(
            "binary record {a1_yes} yes; span output {a2_present} non-empty slugs; \
             verdict list {c_yes} yes / {c_no} no; echo ratio {} (is_echo {})",
            echo.overlap_ratio, echo.is_echo
        ),
    )
}

// ---- alignment ------------------------------------------------------------

fn exhaustive_best(span: &str, body: &str) -> f64 {
    let s = tokens(span);
    let b = tokens(body);
    let mut best: f64 = 0.0;
    for i in 0..b.len() {
        for j in i + 1..=b.len() {
            best = best.max(token_similarity(&s, &b[i..j]));
        }
    }
    best
}

fn alignment() -> Outcome {
    let record: Value = serde_json::from_str(PRIMATE).unwrap();
    let body = record["post_text"].as_str().unwrap();
    let rewritten = "My academics were always straight, and I exercised daily.";
    let score = align(rewritten, body, DEFAULT_ALIGNMENT_THRESHOLD).map(|a| a.alignment_score);
    let disjoint = "I love skiing in the Alps";
    let oracle = exhaustive_best(disjoint, body);
    let failed = matches!(
        align(disjoint, body, DEFAULT_ALIGNMENT_THRESHOLD),
        Err(AlignmentError::AlignmentFailure { .. })
    );
    check(
        score == Ok(1.0) && failed && oracle < DEFAULT_ALIGNMENT_THRESHOLD,
        format!(
            "rewritten sentence score {score:?}; disjoint span failure {failed} \
             (exhaustive best {oracle:.3} < {DEFAULT_ALIGNMENT_THRESHOLD})"
        ),
    )
}

// ---- end-to-end replay ----------------------------------------------------

fn e2e_fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e")
}

fn dxassist(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dxassist"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("dxassist {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn e2e_replay() -> Outcome {
    let config = e2e_fixture().join("run.toml");
    let config = config.to_str().unwrap();
    let golden = e2e_fixture().join("golden");
    let started = Instant::now();
    let mut mismatched = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let annotations = format!("{out}/annotations.json");
        let run = dxassist(&["annotate", "--config", config, "--out", out]).and_then(|_| {
            dxassist(&["evaluate", "--config", config, "--out", out, "--predictions", &annotations])
        });
        if let Err(e) = run {
            return Fail(e);
        }
        for name in ["annotations.json", "audit.jsonl", "report.json", "report.txt"] {
            if std::fs::read(dir.path().join(name)).ok() != std::fs::read(golden.join(name)).ok() {
                mismatched.push(name);
            }
        }
    }
    let took = started.elapsed();
    check(
        mismatched.is_empty() && took < Duration::from_secs(10),
        format!("2 replay runs, mismatched outputs {mismatched:?}, {took:.2?} (< 10s)"),
    )
}

// ---- fine-tune export -----------------------------------------------------

fn finetune_round_trip() -> Outcome {
    let q = QuestionnaireId::Phq9;
    let words = ["I", "can't", "sleep", "\"at all\"", "naïve", "100%", "tired,", "line\nbreak", "{x}", "[y]", "'quoted'"];
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let corpus: Vec<(Post, BinaryAnnotation)> = (0..50)
        .map(|i| {
            let text = |rng: &mut ChaCha8Rng, n: usize| {
                (0..n).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" ")
            };
            let post = Post {
                id: format!("p{i}"),
                title: text(&mut rng, 4),
                body: text(&mut rng, 30),
            };
            let mut ann = BinaryAnnotation::uniform(&post.id, q, SymptomVerdict::No);
            for v in ann.verdicts.values_mut() {
                if rng.random_bool(0.4) {
                    *v = SymptomVerdict::Yes;
                }
            }
            (post, ann)
        })
        .collect();
    let mut sink = Vec::new();
    let written = export(&corpus, q, &mut sink, ExportOptions { format: ExportFormat::Jsonl, include_title: true }).unwrap();
    let text = String::from_utf8(sink).unwrap();
    let mut matched = 0;
    for (line, (post, ann)) in text.lines().zip(&corpus) {
        let rec: Value = serde_json::from_str(line).unwrap();
        let output = rec["output"].as_str().unwrap();
        let parsed = parse(output, q, OutputFormat::VerdictPairs, &post.id, &ParseOptions { strict: true });
        let same = parsed.ok().and_then(|p| p.verdicts().cloned()).is_some_and(|v| v == *ann);
        let embeds = rec["text"].as_str().unwrap().ends_with(output)
            && rec["input"].as_str().unwrap().contains(post.body.as_str());
        if same && embeds {
            matched += 1;
        }
    }
    check(
        written == 50 && matched == 50,
        format!("{matched}/{written} exported records re-parse to their source annotation"),
    )
}

// ---- corpus stats on released files ---------------------------------------

fn released_stats() -> Outcome {
    let Some(dir) = std::env::var_os("DXASSIST_RELEASED_DATA") else {
        return Skip("set DXASSIST_RELEASED_DATA to a directory holding the nine released files".into());
    };
    let mut files: Vec<PathBuf> = match std::fs::read_dir(&dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json" || x == "jsonl"))
            .collect(),
        Err(e) => return Fail(format!("{}: {e}", Path::new(&dir).display())),
    };
    files.sort();
    let args: Vec<&str> = std::iter::once("stats").chain(files.iter().map(|p| p.to_str().unwrap())).collect();
    let out = Command::new(env!("CARGO_BIN_EXE_dxassist")).args(&args).output().unwrap();
    if !out.status.success() {
        return Fail(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let table = String::from_utf8_lossy(&out.stdout).into_owned();
    let counts: BTreeMap<String, String> = table
        .lines()
        .filter_map(|l| l.rsplit_once(' ').map(|(n, c)| (n.trim().to_string(), c.to_string())))
        .collect();
    let find = |name: &str| {
        counts
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| "missing".into())
    };
    let (phq, gad, total) = (find("GPT-4o-PHQ-9"), find("GPT-4o-GAD-7"), find("Total"));
    check(
        files.len() == 9 && phq == "40" && gad == "17" && total == "1034",
        format!("{} files; GPT-4o-PHQ-9 {phq} (40), GPT-4o-GAD-7 {gad} (17), total {total} (1034)", files.len()),
    )
}

// ---- gateway --------------------------------------------------------------

#[derive(Default)]
struct Stub {
    script: Mutex<Vec<u16>>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

async fn stub_chat(
    axum::extract::State(s): axum::extract::State<Arc<Stub>>,
    axum::Json(body): axum::Json<Value>,
) -> (axum::http::StatusCode, axum::Json<Value>) {
    s.calls.fetch_add(1, Ordering::SeqCst);
    let now = s.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    s.peak.fetch_max(now, Ordering::SeqCst);
    tokio::time::sleep(Duration::from_millis(20)).await;
    s.in_flight.fetch_sub(1, Ordering::SeqCst);
    let status = {
        let mut script = s.script.lock().unwrap();
        if script.is_empty() { 200 } else { script.remove(0) }
    };
    let content = body["messages"][0]["content"].clone();
    let reply = json!({"choices": [{"message": {"role": "assistant", "content": content}}]});
    (axum::http::StatusCode::from_u16(status).unwrap(), axum::Json(reply))
}

async fn start_stub(stub: Arc<Stub>) -> String {
    let app = axum::Router::new()
        .route("/v1/chat/completions", axum::routing::post(stub_chat))
        .with_state(stub);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/v1")
}

fn prompt(text: &str) -> RenderedPrompt {
    RenderedPrompt {
        messages: vec![ChatMessage { role: Role::User, content: text.into() }],
        target_post_id: text.into(),
    }
}

fn gateway() -> Outcome {
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let policy = RateLimitPolicy {
            max_in_flight: 3,
            requests_per_minute: 100_000,
            max_attempts: 5,
            backoff_base_ms: 1,
            backoff_cap_ms: 5,
        };

        let retry_stub = Arc::new(Stub { script: Mutex::new(vec![429, 429, 200]), ..Default::default() });
        let url = start_stub(retry_stub.clone()).await;
        let gw = Gateway::new(policy.clone(), Arc::new(Cassette::passthrough())).unwrap();
        let attempts = gw.complete(&ModelEndpoint::new(url, "m"), &prompt("hi")).await.map(|e| e.attempts);

        let load_stub = Arc::new(Stub::default());
        let url = start_stub(load_stub.clone()).await;
        let endpoint = ModelEndpoint::new(url, "m");
        let dir = tempfile::tempdir().unwrap();
        let tape = dir.path().join("tape.jsonl");
        let recorder = Gateway::new(policy.clone(), Arc::new(Cassette::open(&tape, CassetteMode::Record).unwrap())).unwrap();
        let prompts: Vec<RenderedPrompt> = (0..12).map(|i| prompt(&format!("post {i}"))).collect();
        let results = futures::future::join_all(prompts.iter().map(|p| recorder.complete(&endpoint, p))).await;
        let recorded_ok = results.iter().all(Result::is_ok);
        let peak = load_stub.peak.load(Ordering::SeqCst);

        let before = load_stub.calls.load(Ordering::SeqCst);
        let player = Gateway::new(policy, Arc::new(Cassette::open(&tape, CassetteMode::Replay).unwrap())).unwrap();
        let replayed = futures::future::join_all(prompts.iter().map(|p| player.complete(&endpoint, p))).await;
        let replay_ok = replayed.iter().zip(&results).all(|(a, b)| match (a, b) {
            (Ok(a), Ok(b)) => a.response_text == b.response_text,
            _ => false,
        });
        let replay_calls = load_stub.calls.load(Ordering::SeqCst) - before;

        check(
            matches!(attempts, Ok(3)) && recorded_ok && peak <= 3 && replay_ok && replay_calls == 0,
            format!(
                "429,429,200 -> attempts {:?} (3); peak in-flight {peak} (≤ 3) over 12 requests; \
                 replay network calls {replay_calls} (0), responses identical {replay_ok}",
                attempts.map_err(|e| e.to_string())
            ),
        )
    })
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("metric-oracle", metric_oracle),
        ("kappa", kappa_checks),
        ("hits-at-k", hits_properties),
        ("fixture-parsing", fixture_parsing),
        ("alignment", alignment),
        ("e2e-replay", e2e_replay),
        ("finetune-round-trip", finetune_round_trip),
        ("corpus-stats", released_stats),
        ("gateway", gateway),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("{tag} {name:<20} {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
