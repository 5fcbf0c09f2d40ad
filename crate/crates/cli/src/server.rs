//! Annotation API consumed by the browser UI, plus static hosting of the
//! built UI assets.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use funcsense_core::annotation::{AgreementError, Label, LabelStore};
use funcsense_core::corpus::Instance;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

pub const ANNOTATOR_HEADER: &str = "x-annotator";

pub struct AppState {
    pub store: LabelStore,
    pub save: Option<PathBuf>,
    save_lock: Mutex<()>,
}

impl AppState {
    pub fn new(store: LabelStore, save: Option<PathBuf>) -> Self {
        AppState {
            store,
            save,
            save_lock: Mutex::new(()),
        }
    }

    fn persist(&self) -> Result<(), ApiError> {
        if let Some(path) = &self.save {
            let _guard = self.save_lock.lock().unwrap();
            let text = self.store.export().to_jsonl_string();
            let tmp = path.with_extension("jsonl.tmp");
            std::fs::write(&tmp, text)
                .and_then(|_| std::fs::rename(&tmp, path))
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("saving {}: {e}", path.display())))?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": message.into() }),
        }
    }
}

impl From<funcsense_core::Error> for ApiError {
    fn from(e: funcsense_core::Error) -> Self {
        let status = if e.is_environmental() {
            StatusCode::INTERNAL_SERVER_ERROR
        } else {
            StatusCode::BAD_REQUEST
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// An instance as shown to one annotator: only that annotator's own label
/// is included, keeping double annotation blind.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct InstanceView {
    pub id: String,
    pub tokens: Vec<String>,
    pub target_index: usize,
    pub phrasal_start: usize,
    pub phrasal_end: usize,
    pub own_label: Option<u32>,
}

fn view(instance: &Instance, own_label: Option<u32>) -> InstanceView {
    let record = instance.to_record();
    InstanceView {
        id: record.id,
        tokens: record.tokens,
        target_index: record.target_index,
        phrasal_start: record.phrasal_start,
        phrasal_end: record.phrasal_end,
        own_label,
    }
}

#[derive(Debug, Deserialize)]
struct AnnotatorQuery {
    annotator: Option<String>,
}

fn annotator(query: Option<String>, headers: &HeaderMap) -> Option<String> {
    query
        .or_else(|| headers.get(ANNOTATOR_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string))
        .filter(|a| !a.trim().is_empty())
}

async fn next_instance(
    State(state): State<Arc<AppState>>,
    Query(q): Query<AnnotatorQuery>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let who = annotator(q.annotator, &headers)
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "annotator required (query or X-Annotator header)"))?;
    Ok(match state.store.next_unlabeled(&who) {
        Some(instance) => Json(view(&instance, None)).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn get_instance(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<AnnotatorQuery>,
    headers: HeaderMap,
) -> Result<Json<InstanceView>, ApiError> {
    let instance = state
        .store
        .instance(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown instance {id}")))?;
    let own = annotator(q.annotator, &headers).and_then(|a| state.store.label_of(&id, &a)).map(|l| l.class_id);
    Ok(Json(view(&instance, own)))
}

#[derive(Debug, Deserialize)]
struct LabelBody {
    instance_id: String,
    annotator: Option<String>,
    class_id: u32,
}

async fn post_label(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Json(body): Json<LabelBody>,
) -> Result<Json<Label>, ApiError> {
    let who = annotator(body.annotator, &headers)
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "annotator required (body or X-Annotator header)"))?;
    if state.store.instance(&body.instance_id).is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown instance {}", body.instance_id)));
    }
    let label = Label::new(body.instance_id, who, body.class_id);
    state.store.put_label(label.clone())?;
    state.persist()?;
    Ok(Json(label))
}

#[derive(Debug, Serialize)]
struct DisagreementView {
    instance: InstanceView,
    label_a: u32,
    label_b: u32,
    adjudicated: Option<u32>,
}

async fn get_disagreements(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let (a, b) = state.store.annotators();
    let items: Vec<DisagreementView> = state
        .store
        .disagreements()
        .into_iter()
        .filter_map(|(d, gold)| {
            let instance = state.store.instance(&d.instance_id)?;
            Some(DisagreementView {
                instance: view(&instance, None),
                label_a: d.label_a,
                label_b: d.label_b,
                adjudicated: gold,
            })
        })
        .collect();
    Json(json!({ "annotator_a": a, "annotator_b": b, "disagreements": items }))
}

#[derive(Debug, Deserialize)]
struct AdjudicationBody {
    instance_id: String,
    class_id: u32,
    adjudicator: Option<String>,
}

async fn post_adjudication(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Json(body): Json<AdjudicationBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    if state.store.instance(&body.instance_id).is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown instance {}", body.instance_id)));
    }
    let who = annotator(body.adjudicator, &headers).unwrap_or_else(|| "adjudication".to_string());
    state.store.adjudicate(&body.instance_id, body.class_id, &who)?;
    state.persist()?;
    Ok(Json(json!({ "instance_id": body.instance_id, "class_id": body.class_id, "adjudicator": who })))
}

async fn get_agreement(State(state): State<Arc<AppState>>) -> Result<Json<serde_json::Value>, ApiError> {
    match state.store.agreement() {
        Ok(report) => {
            let mut value = serde_json::to_value(&report).map_err(funcsense_core::Error::from)?;
            value["table"] = report.render().into();
            Ok(Json(value))
        }
        Err(AgreementError::Incomplete { missing }) => Err(ApiError {
            status: StatusCode::CONFLICT,
            body: json!({ "error": format!("{missing} label(s) missing"), "missing": missing }),
        }),
        Err(AgreementError::Other(e)) => Err(e.into()),
    }
}

async fn get_schema(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let inventory = state.store.inventory();
    let features: Vec<&str> = funcsense_core::schema::FeatureName::ALL.iter().map(|f| f.as_str()).collect();
    let mut value = serde_json::to_value(inventory).expect("inventory serializes");
    value["features"] = json!(features);
    Json(value)
}

async fn get_export(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    (
        [(header::CONTENT_TYPE, "application/x-ndjson; charset=utf-8")],
        state.store.export().to_jsonl_string(),
    )
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/instances/next", get(next_instance))
        .route("/api/instances/{id}", get(get_instance))
        .route("/api/labels", post(post_label))
        .route("/api/disagreements", get(get_disagreements))
        .route("/api/adjudications", post(post_adjudication))
        .route("/api/agreement", get(get_agreement))
        .route("/api/schema", get(get_schema))
        .route("/api/export", get(get_export))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds and serves until Ctrl-C.
pub fn serve(state: Arc<AppState>, static_dir: Option<PathBuf>, host: &str, port: u16) -> Result<(), crate::CliError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| crate::CliError::Io(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| crate::CliError::Io(format!("binding {host}:{port}: {e}")))?;
        eprintln!("serving annotation API on http://{}", listener.local_addr().map_err(|e| crate::CliError::Io(e.to_string()))?);
        axum::serve(listener, router(state, static_dir))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| crate::CliError::Io(e.to_string()))
    })
}
