//! HTTP front end for the viewer.
//!
//! Reads go to the latest published run. Clustering jobs take a fair async
//! mutex, so concurrent `POST /api/cluster` requests run one after another
//! in arrival order and are never rejected.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ca3d::evaluate::MetricsRow;
use ca3d::ingest::Corpus;
use ca3d::pipeline::{read_metrics, run_pipeline, PipelineError, RunSpec, METRICS_FILE};
use ca3d::represent::{named_weights, TermDocumentMatrix};
use serde_json::{json, Value};
use tokio::sync::Mutex;

/// Everything the read endpoints need from one finished run.
#[derive(Debug)]
pub struct Published {
    pub run_id: u64,
    pub state: Value,
    pub corpus: Corpus,
    pub matrix: TermDocumentMatrix,
    pub cluster_of: std::collections::BTreeMap<u32, u32>,
}

#[derive(Debug)]
struct Inner {
    state_dir: PathBuf,
    jobs: Mutex<()>,
    latest: RwLock<Option<Arc<Published>>>,
}

#[derive(Debug, Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(state_dir: PathBuf) -> std::io::Result<Self> {
        std::fs::create_dir_all(&state_dir)?;
        Ok(Self(Arc::new(Inner {
            state_dir,
            jobs: Mutex::new(()),
            latest: RwLock::new(None),
        })))
    }

    pub fn latest(&self) -> Option<Arc<Published>> {
        self.0.latest.read().expect("state lock").clone()
    }

    /// Runs a spec with its output redirected to the state directory and
    /// publishes the result.
    pub async fn run(&self, mut spec: RunSpec) -> Result<Arc<Published>, PipelineError> {
        let _turn = self.0.jobs.lock().await;
        spec.output = Some(self.0.state_dir.clone());
        let out = tokio::task::spawn_blocking(move || run_pipeline(&spec))
            .await
            .expect("pipeline task panicked")?;
        let mut state = serde_json::to_value(&out.grid_state).expect("grid state serializes");
        state["run"] = json!({
            "run_id": out.provenance.run_id,
            "spec": out.provenance.spec,
            "threshold": out.provenance.threshold,
            "metrics": out.metrics,
        });
        let published = Arc::new(Published {
            run_id: out.provenance.run_id,
            state,
            cluster_of: out.clustering.assignment.cluster_of.clone(),
            corpus: out.prepared.corpus,
            matrix: out.prepared.matrix,
        });
        *self.0.latest.write().expect("state lock") = Some(published.clone());
        Ok(published)
    }

    fn metrics(&self) -> Vec<MetricsRow> {
        let path = self.0.state_dir.join(METRICS_FILE);
        if !path.exists() {
            return Vec::new();
        }
        read_metrics(&path).unwrap_or_default()
    }
}

fn error(status: StatusCode, message: impl Into<String>, module: Option<&str>) -> Response {
    let mut body = json!({ "error": message.into() });
    if let Some(m) = module {
        body["module"] = json!(m);
    }
    (status, Json(body)).into_response()
}

async fn get_state(State(app): State<AppState>) -> Response {
    match app.latest() {
        Some(p) => Json(p.state.clone()).into_response(),
        None => error(
            StatusCode::NOT_FOUND,
            "no clustering run yet; POST a RunSpec to /api/cluster",
            None,
        ),
    }
}

async fn post_cluster(State(app): State<AppState>, body: String) -> Response {
    let spec = match RunSpec::from_json(&body) {
        Ok(s) => s,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string(), Some(e.module())),
    };
    match app.run(spec).await {
        Ok(p) => Json(p.state.clone()).into_response(),
        Err(e) if e.is_spec_error() => error(StatusCode::BAD_REQUEST, e.to_string(), Some(e.module())),
        Err(e) => {
            log::error!("[{}] {e}", e.module());
            error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), Some(e.module()))
        }
    }
}

async fn get_document(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    let Some(p) = app.latest() else {
        return error(StatusCode::NOT_FOUND, "no clustering run yet", None);
    };
    let Some(doc) = id.parse::<u32>().ok().and_then(|id| p.corpus.get(id)) else {
        return error(StatusCode::NOT_FOUND, format!("unknown document `{id}`"), None);
    };
    Json(json!({
        "doc_id": doc.doc_id,
        "title": doc.title,
        "body": doc.body,
        "text": doc.text(),
        "labels": doc.labels,
        "cluster_id": p.cluster_of.get(&doc.doc_id),
        "vector": named_weights(&p.matrix, doc.doc_id).unwrap_or_default(),
    }))
    .into_response()
}

async fn get_metrics(State(app): State<AppState>) -> Response {
    let columns: Vec<&str> = MetricsRow::CSV_HEADER.split(',').collect();
    Json(json!({ "columns": columns, "rows": app.metrics() })).into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/state", get(get_state))
        .route("/api/cluster", post(post_cluster))
        .route("/api/document/{id}", get(get_document))
        .route("/api/metrics", get(get_metrics))
        .with_state(state)
}
