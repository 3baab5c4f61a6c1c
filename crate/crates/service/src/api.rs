use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::header::{CONTENT_TYPE, ETAG};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use keyboard::rng::derive_seed;
use keyboard::sim::SimSpec;
use keyboard::{DecisionTable, TrialConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{ApiError, ApiResult};
use crate::jobs::JobRegistry;
use crate::store::{TrialResource, TrialStore};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Clone)]
pub struct AppState {
    pub trials: Arc<TrialStore>,
    pub jobs: Arc<JobRegistry>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/trials", post(create_trial).get(list_trials))
        .route("/trials/{id}", get(get_trial))
        .route("/trials/{id}/cohorts", post(record_cohort))
        .route("/trials/{id}/finalize", post(finalize))
        .route("/trials/{id}/decision-table", get(trial_decision_table))
        .route("/simulations", post(submit_simulation))
        .route("/simulations/{id}", get(get_simulation))
        .route("/simulations/{id}/summary.csv", get(simulation_summary))
        .route("/schema", get(schema))
        .with_state(state)
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::field("body", e.to_string()))
}

/// JSON body with the revision mirrored in an `ETag` header.
fn with_revision(status: StatusCode, revision: u64, body: impl Serialize) -> Response {
    let mut response = (status, Json(body)).into_response();
    if let Ok(v) = HeaderValue::from_str(&format!("\"{revision}\"")) {
        response.headers_mut().insert(ETAG, v);
    }
    response
}

fn trial_response(status: StatusCode, trial: &TrialResource) -> Response {
    with_revision(status, trial.revision, trial)
}

async fn create_trial(State(app): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ApiError::field(IDEMPOTENCY_HEADER, "must be visible ASCII"))?
                .to_string(),
        ),
        None => None,
    };
    let mut raw: Value = parse_body(&body)?;
    if let Some(obj) = raw.as_object_mut() {
        if !obj.contains_key("seed") {
            let fresh = uuid::Uuid::new_v4().as_u64_pair();
            obj.insert("seed".into(), json!(derive_seed(fresh.0, fresh.1)));
        }
    }
    let config: TrialConfig = serde_json::from_value(raw).map_err(|e| ApiError::field("body", e.to_string()))?;
    let (trial, created) = app.trials.create(config, key).await?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok(trial_response(status, &trial))
}

async fn list_trials(State(app): State<AppState>) -> Json<Value> {
    Json(json!({ "trials": app.trials.list() }))
}

async fn get_trial(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let trial = app.trials.get(&id)?;
    Ok(trial_response(StatusCode::OK, &trial))
}

#[derive(Deserialize)]
struct CohortRequest {
    dlt_count: u32,
    expected_revision: u64,
}

async fn record_cohort(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: CohortRequest = parse_body(&body)?;
    let commit = app
        .trials
        .record_cohort(&id, req.dlt_count, req.expected_revision)
        .await?;
    let trial = &commit.trial;
    let body = json!({
        "revision": trial.revision,
        "decision": commit.outcome.decision,
        "next_dose": commit.outcome.next,
        "eliminated": commit.outcome.eliminated,
        "status": commit.outcome.status,
        "trial": trial.as_ref(),
    });
    Ok(with_revision(StatusCode::OK, trial.revision, body))
}

#[derive(Deserialize, Default)]
struct FinalizeRequest {
    #[serde(default)]
    force: bool,
}

async fn finalize(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req = if body.iter().all(u8::is_ascii_whitespace) {
        FinalizeRequest::default()
    } else {
        parse_body::<Option<FinalizeRequest>>(&body)?.unwrap_or_default()
    };
    let trial = app.trials.finalize(&id, req.force).await?;
    let fin = trial.finalization.as_ref().expect("finalize records a selection");
    let body = json!({
        "revision": trial.revision,
        "seed": fin.seed,
        "forced": fin.forced,
        "selection": fin.selection,
        "status": trial.state.status,
    });
    Ok(with_revision(StatusCode::OK, trial.revision, body))
}

#[derive(Deserialize)]
struct TableQuery {
    n_max: Option<u32>,
}

async fn trial_decision_table(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TableQuery>,
) -> ApiResult<Response> {
    let trial = app.trials.get(&id)?;
    let cfg = &trial.config;
    let n_max = q.n_max.unwrap_or(cfg.max_n);
    if n_max == 0 || n_max > 1000 {
        return Err(ApiError::field("n_max", "must be between 1 and 1000"));
    }
    let table = DecisionTable::build(cfg.phi, cfg.eps1, cfg.eps2, n_max)?;
    let mut body = serde_json::to_value(&table).map_err(keyboard::KeyboardError::from)?;
    body["revision"] = json!(trial.revision);
    Ok(with_revision(StatusCode::OK, trial.revision, body))
}

async fn submit_simulation(State(app): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let spec: SimSpec = parse_body(&body)?;
    let job = app.jobs.submit(spec)?;
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

async fn get_simulation(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(app.jobs.get(&id)?).into_response())
}

async fn simulation_summary(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let csv = app.jobs.summary_csv(&id)?;
    Ok(([(CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn schema() -> Json<Value> {
    Json(crate::schema::schemas())
}
