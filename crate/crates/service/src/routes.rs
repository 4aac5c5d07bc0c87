//! HTTP handlers. Every request carries `Authorization: Bearer <token>`;
//! the token's digest identifies either the administrator or a user.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::HeaderValue;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use pds_core::customizer::{
    personalize, redistribute, refresh, utility_report, PersonalizedDataSet, QueryDescriptor, UtilityRow,
};
use pds_core::dataset::{ingest_csv, TableCatalog};
use pds_core::policy::MeasurePolicy;
use pds_core::rules::{api_key_digest, Actor, AuditFilter, RoleDef, RuleEngine, UserProfile};
use pds_core::wire::{AuditList, NewUser, RowsLoad, SetRole, TableInfo, TableLoad, REPORT_ID_HEADER};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::{ApiError, ReportRegistry, Workspace};

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<RuleEngine>,
    pub catalog: Arc<TableCatalog>,
    pub reports: Arc<ReportRegistry>,
    admin_key_digest: Arc<str>,
}

impl AppState {
    pub fn new(ws: &Workspace) -> Self {
        AppState {
            engine: ws.engine.clone(),
            catalog: ws.catalog.clone(),
            reports: Arc::new(ReportRegistry::new(ws.config.report_capacity)),
            admin_key_digest: ws.config.admin_key_digest.to_ascii_lowercase().into(),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/query", post(query))
        .route("/v1/reports/{id}/redistribute", post(redistribute_report))
        .route("/v1/reports/{id}/refresh", post(refresh_report))
        .route("/v1/admin/policies/{measure_id}", put(put_policy))
        .route("/v1/admin/users", post(post_user))
        .route("/v1/admin/users/{id}/role", put(put_user_role))
        .route("/v1/admin/roles/{id}", put(put_role))
        .route("/v1/admin/audit", get(get_audit))
        .route("/v1/admin/utility", get(get_utility))
        .route("/v1/admin/tables/{id}", put(put_table))
        .route("/v1/admin/tables/{id}/rows", post(post_rows))
        .with_state(state)
}

pub enum Identity {
    Admin,
    User(UserProfile),
}

impl Identity {
    fn actor(&self) -> Actor {
        match self {
            Identity::Admin => Actor::Admin,
            Identity::User(u) => Actor::User(u.user_id.clone()),
        }
    }
}

impl FromRequestParts<AppState> for Identity {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let token = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(ApiError::unauthorized)?;
        if api_key_digest(token) == *state.admin_key_digest {
            return Ok(Identity::Admin);
        }
        state.engine.authenticate(token).map(Identity::User).ok_or_else(ApiError::unauthorized)
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::unprocessable(format!("malformed body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))
}

/// Canonical data set bytes as the body, the new report's id in a header.
fn respond(state: &AppState, pds: PersonalizedDataSet) -> Response {
    let body = pds.to_canonical_json();
    let report_id = state.reports.insert(pds.recipe);
    let mut resp = ([(CONTENT_TYPE, "application/json")], body).into_response();
    resp.headers_mut()
        .insert(REPORT_ID_HEADER, HeaderValue::from_str(&report_id).expect("uuids are valid header values"));
    resp
}

/// Refuses non-administrators, recording the refusal.
fn require_admin(state: &AppState, who: &Identity, what: &str) -> Result<(), ApiError> {
    if let Identity::User(u) = who {
        state.engine.record_denied(&u.user_id, Vec::new(), String::new(), format!("not administrator: {what}"))?;
        return Err(ApiError::forbidden("administrator credentials required"));
    }
    Ok(())
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn query(State(state): State<AppState>, who: Identity, body: Bytes) -> Result<Response, ApiError> {
    let q: QueryDescriptor = parse(&body)?;
    let user = match who {
        Identity::Admin => {
            let detail = "administrator token cannot query data".to_string();
            state.engine.record_denied("admin", vec![q.measure_id.clone()], q.digest(), detail.clone())?;
            return Err(ApiError::forbidden(detail));
        }
        Identity::User(u) => u.user_id,
    };
    let table = state.catalog.latest(&q.table_id)?;
    let engine = state.engine.clone();
    let pds = blocking(move || personalize(&engine, &table, &q, &user)).await??;
    Ok(respond(&state, pds))
}

async fn redistribute_report(
    State(state): State<AppState>,
    who: Identity,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let recipe = state.reports.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown report {id:?}")))?;
    let viewer = match who {
        Identity::Admin => return Err(ApiError::forbidden("administrator token cannot view reports")),
        Identity::User(u) => u.user_id,
    };
    let table = state.catalog.version(&recipe.descriptor.table_id, recipe.table_version)?;
    let engine = state.engine.clone();
    let pds = blocking(move || redistribute(&engine, &table, &recipe, &viewer)).await??;
    Ok(respond(&state, pds))
}

async fn refresh_report(
    State(state): State<AppState>,
    who: Identity,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let recipe = state.reports.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown report {id:?}")))?;
    let user = match who {
        Identity::Admin => return Err(ApiError::forbidden("administrator token cannot view reports")),
        Identity::User(u) => u.user_id,
    };
    let latest = state.catalog.latest(&recipe.descriptor.table_id)?;
    let engine = state.engine.clone();
    let pds = blocking(move || refresh(&engine, &recipe, &user, &latest)).await??;
    Ok(respond(&state, pds))
}

/// The body may omit `measure_id`; if present it must match the path.
async fn put_policy(
    State(state): State<AppState>,
    who: Identity,
    Path(measure_id): Path<String>,
    body: Bytes,
) -> Result<Json<MeasurePolicy>, ApiError> {
    let mut value: Value = parse(&body)?;
    let Some(obj) = value.as_object_mut() else {
        return Err(ApiError::unprocessable("policy must be a JSON object"));
    };
    match obj.get("measure_id") {
        None => {
            obj.insert("measure_id".into(), Value::String(measure_id.clone()));
        }
        Some(Value::String(m)) if *m == measure_id => {}
        Some(_) => return Err(ApiError::unprocessable("measure_id does not match the path")),
    }
    let policy: MeasurePolicy =
        serde_json::from_value(value).map_err(|e| ApiError::unprocessable(format!("malformed policy: {e}")))?;
    state.engine.upsert_policy(&who.actor(), policy.clone())?;
    Ok(Json(policy))
}

async fn post_user(State(state): State<AppState>, who: Identity, body: Bytes) -> Result<Json<UserProfile>, ApiError> {
    let req: NewUser = parse(&body)?;
    let digest = match (&req.api_key, &req.api_key_digest) {
        (Some(key), None) => api_key_digest(key),
        (None, Some(d)) => d.clone(),
        _ => return Err(ApiError::unprocessable("exactly one of api_key and api_key_digest is required")),
    };
    let profile = UserProfile {
        user_id: req.user_id,
        display_name: req.display_name,
        role_id: req.role_id,
        api_key_digest: digest,
        active: req.active,
    };
    state.engine.upsert_user(&who.actor(), profile.clone())?;
    Ok(Json(profile))
}

async fn put_user_role(
    State(state): State<AppState>,
    who: Identity,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<UserProfile>, ApiError> {
    let req: SetRole = parse(&body)?;
    state.engine.set_role(&who.actor(), &id, &req.role_id)?;
    state.engine.user(&id).map(Json).ok_or_else(|| ApiError::not_found(format!("unknown user {id:?}")))
}

async fn put_role(
    State(state): State<AppState>,
    who: Identity,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<RoleDef>, ApiError> {
    let mut value: Value = parse(&body)?;
    if let Some(obj) = value.as_object_mut() {
        obj.entry("role_id").or_insert_with(|| Value::String(id.clone()));
    }
    let role: RoleDef =
        serde_json::from_value(value).map_err(|e| ApiError::unprocessable(format!("malformed role: {e}")))?;
    if role.role_id != id {
        return Err(ApiError::unprocessable("role_id does not match the path"));
    }
    state.engine.upsert_role(&who.actor(), role.clone())?;
    Ok(Json(role))
}

async fn get_audit(
    State(state): State<AppState>,
    who: Identity,
    filter: Result<Query<AuditFilter>, QueryRejection>,
) -> Result<Json<AuditList>, ApiError> {
    require_admin(&state, &who, "list audit")?;
    let Query(filter) = filter.map_err(|e| ApiError::unprocessable(e.body_text()))?;
    let entries = state.engine.list_audit(&who.actor(), &filter)?;
    Ok(Json(AuditList { entries }))
}

#[derive(Deserialize)]
struct UtilityParams {
    table_id: String,
    measure_id: String,
}

async fn get_utility(
    State(state): State<AppState>,
    who: Identity,
    params: Result<Query<UtilityParams>, QueryRejection>,
) -> Result<Json<Vec<UtilityRow>>, ApiError> {
    require_admin(&state, &who, "utility report")?;
    let Query(p) = params.map_err(|e| ApiError::unprocessable(e.body_text()))?;
    let table = state.catalog.latest(&p.table_id)?;
    let policy = state
        .engine
        .policy(&p.measure_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown measure {:?}", p.measure_id)))?;
    let rows = blocking(move || utility_report(&table, &p.measure_id, &policy)).await??;
    Ok(Json(rows))
}

fn info(t: &pds_core::dataset::TableVersion) -> TableInfo {
    TableInfo {
        table_id: t.table_id().to_string(),
        version: t.version(),
        row_count: t.row_count(),
        digest: t.digest().to_string(),
    }
}

/// Creates a table. Tables loaded over HTTP live in memory only.
async fn put_table(
    State(state): State<AppState>,
    who: Identity,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<TableInfo>, ApiError> {
    require_admin(&state, &who, &format!("load table {id}"))?;
    let req: TableLoad = parse(&body)?;
    let table = blocking(move || ingest_csv(&id, &req.csv, req.manifest)).await??;
    let table = state.catalog.insert(table)?;
    tracing::info!(table = table.table_id(), rows = table.row_count(), "table loaded");
    Ok(Json(info(&table)))
}

async fn post_rows(
    State(state): State<AppState>,
    who: Identity,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<TableInfo>, ApiError> {
    require_admin(&state, &who, &format!("append to table {id}"))?;
    let req: RowsLoad = parse(&body)?;
    let catalog = state.catalog.clone();
    let table = blocking(move || catalog.append(&id, &req.csv)).await??;
    tracing::info!(table = table.table_id(), version = table.version(), "rows appended");
    Ok(Json(info(&table)))
}
