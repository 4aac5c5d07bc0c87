//! Async client for the privacy layer's HTTP API. One method per endpoint;
//! non-2xx responses come back as [`ClientError::Api`] with the server's
//! error body.

use pds_core::customizer::{CanonicalDataSet, QueryDescriptor, UtilityRow};
use pds_core::dataset::SchemaManifest;
use pds_core::policy::MeasurePolicy;
use pds_core::rules::{AuditEntry, AuditFilter, RoleDef, UserProfile};
use pds_core::wire::{AuditList, ErrorBody, NewUser, RowsLoad, SetRole, TableInfo, TableLoad, REPORT_ID_HEADER};
use reqwest::{Method, RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("{status}: {}", body.message)]
    Api { status: StatusCode, body: ErrorBody },
    #[error("unexpected response: {0}")]
    Decode(String),
}

async fn check(resp: reqwest::Response) -> Result<reqwest::Response, ClientError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let text = resp.text().await?;
    let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
        error: "http".into(),
        message: text,
        violations: Vec::new(),
    });
    Err(ClientError::Api { status, body })
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status(),
            ClientError::Decode(_) => None,
        }
    }

    pub fn is_access_denial(&self) -> bool {
        matches!(self.status(), Some(StatusCode::FORBIDDEN | StatusCode::UNAUTHORIZED))
    }
}

/// A query, redistribution or refresh result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub report_id: String,
    pub dataset: CanonicalDataSet,
    /// The response body exactly as served (canonical JSON).
    pub body: String,
}

#[derive(Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
    token: String,
}

impl Client {
    pub fn new(base_url: &str, token: &str) -> Self {
        Client {
            http: reqwest::Client::new(),
            base: base_url.trim_end_matches('/').to_string(),
            token: token.to_string(),
        }
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}{path}", self.base)).bearer_auth(&self.token)
    }

    async fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, ClientError> {
        Ok(check(req.send().await?).await?.json().await?)
    }

    async fn report(&self, req: RequestBuilder) -> Result<Report, ClientError> {
        let resp = check(req.send().await?).await?;
        let report_id =
            resp.headers().get(REPORT_ID_HEADER).and_then(|v| v.to_str().ok()).unwrap_or_default().to_string();
        let body = resp.text().await?;
        let dataset = serde_json::from_str(&body).map_err(|e| ClientError::Decode(e.to_string()))?;
        Ok(Report { report_id, dataset, body })
    }

    async fn json<B: Serialize, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: &B,
    ) -> Result<T, ClientError> {
        self.send(self.request(method, path).json(body)).await
    }

    pub async fn health(&self) -> Result<serde_json::Value, ClientError> {
        self.send(self.request(Method::GET, "/v1/health")).await
    }

    pub async fn query(&self, q: &QueryDescriptor) -> Result<Report, ClientError> {
        self.report(self.request(Method::POST, "/v1/query").json(q)).await
    }

    pub async fn redistribute(&self, report_id: &str) -> Result<Report, ClientError> {
        self.report(self.request(Method::POST, &format!("/v1/reports/{report_id}/redistribute"))).await
    }

    pub async fn refresh(&self, report_id: &str) -> Result<Report, ClientError> {
        self.report(self.request(Method::POST, &format!("/v1/reports/{report_id}/refresh"))).await
    }

    pub async fn put_policy(&self, policy: &MeasurePolicy) -> Result<MeasurePolicy, ClientError> {
        self.json(Method::PUT, &format!("/v1/admin/policies/{}", policy.measure_id), policy).await
    }

    pub async fn add_user(&self, user: &NewUser) -> Result<UserProfile, ClientError> {
        self.json(Method::POST, "/v1/admin/users", user).await
    }

    pub async fn set_role(&self, user_id: &str, role_id: &str) -> Result<UserProfile, ClientError> {
        let body = SetRole { role_id: role_id.to_string() };
        self.json(Method::PUT, &format!("/v1/admin/users/{user_id}/role"), &body).await
    }

    pub async fn put_role(&self, role: &RoleDef) -> Result<RoleDef, ClientError> {
        self.json(Method::PUT, &format!("/v1/admin/roles/{}", role.role_id), role).await
    }

    pub async fn audit(&self, filter: &AuditFilter) -> Result<Vec<AuditEntry>, ClientError> {
        let list: AuditList = self.send(self.request(Method::GET, "/v1/admin/audit").query(filter)).await?;
        Ok(list.entries)
    }

    pub async fn utility(&self, table_id: &str, measure_id: &str) -> Result<Vec<UtilityRow>, ClientError> {
        let params = [("table_id", table_id), ("measure_id", measure_id)];
        self.send(self.request(Method::GET, "/v1/admin/utility").query(&params)).await
    }

    pub async fn load_table(
        &self,
        table_id: &str,
        manifest: &SchemaManifest,
        csv: &str,
    ) -> Result<TableInfo, ClientError> {
        let body = TableLoad { manifest: manifest.clone(), csv: csv.to_string() };
        self.json(Method::PUT, &format!("/v1/admin/tables/{table_id}"), &body).await
    }

    pub async fn append_rows(&self, table_id: &str, csv: &str) -> Result<TableInfo, ClientError> {
        let body = RowsLoad { csv: csv.to_string() };
        self.json(Method::POST, &format!("/v1/admin/tables/{table_id}/rows"), &body).await
    }
}
