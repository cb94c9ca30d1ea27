use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;

use dxassist_core::corpus::{load_span_records, source_name};
use dxassist_review::{router, AppState, ReviewStore};

use crate::config::Settings;
use crate::{io_error, CliError};

const DEFAULT_BIND: &str = "127.0.0.1:8080";

pub fn run(
    settings: &Settings,
    bind: Option<SocketAddr>,
    log: Option<PathBuf>,
    enqueue: &[PathBuf],
    ui_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let review = &settings.cfg.review;
    if review.reviewers.is_empty() {
        return Err(CliError::Usage("no reviewers configured ([[review.reviewers]])".into()));
    }
    let mut tokens = HashMap::new();
    for r in &review.reviewers {
        let token = r.resolve_token().map_err(CliError::Usage)?;
        if tokens.insert(token, r.id.clone()).is_some() {
            return Err(CliError::Usage(format!("reviewer {} reuses another reviewer's token", r.id)));
        }
    }
    let log = log
        .or_else(|| review.log.clone())
        .unwrap_or_else(|| settings.out_dir.join("review").join("events.jsonl"));
    let mut store = ReviewStore::open(&log, review.reviewers.iter().map(|r| r.id.clone()))
        .map_err(|e| CliError::Data(e.to_string()))?;

    let q = settings.questionnaire;
    for path in enqueue {
        let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
        let records = load_span_records(&bytes, &source_name(path), q)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let fresh: Vec<_> = records
            .into_iter()
            .filter(|r| !r.status.is_some_and(|s| s.is_failure()))
            .filter(|r| !store.contains_post(q, &r.post.id))
            .map(|r| (r.post, r.annotation, r.model))
            .collect();
        let ids = store
            .enqueue(fresh)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        eprintln!("serve: queued {} tasks from {}", ids.len(), path.display());
    }

    let ui_dir = ui_dir.or_else(|| review.ui_dir.clone());
    let app = router(
        AppState::new(store, tokens).with_default_policy(settings.policy),
        ui_dir,
    );
    let addr = bind
        .or(review.bind)
        .unwrap_or_else(|| DEFAULT_BIND.parse().expect("valid default"));
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Usage(format!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::Data(e.to_string()))?;
        eprintln!("serve: listening on http://{local}");
        axum::serve(listener, app)
            .with_graceful_shutdown(shutdown_signal())
            .await
            .map_err(|e| CliError::Data(e.to_string()))?;
        eprintln!("serve: stopped");
        Ok(())
    })
}

/// Resolves on Ctrl-C or SIGTERM; in-flight requests then drain.
async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
