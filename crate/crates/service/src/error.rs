use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use pds_core::customizer::CustomizerError;
use pds_core::dataset::DatasetError;
use pds_core::rules::{AuditError, RuleError};
use pds_core::wire::ErrorBody;

/// Startup and ingest failures outside a request.
#[derive(Debug, thiserror::Error)]
pub enum WorkspaceError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Json(String),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { error: error.into(), message: message.into(), violations: Vec::new() } }
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or unknown bearer token")
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", message)
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<RuleError> for ApiError {
    fn from(e: RuleError) -> Self {
        let message = e.to_string();
        match e {
            RuleError::UnknownUser(_) | RuleError::UnknownMeasure(_) | RuleError::UnknownRole(_) => {
                Self::not_found(message)
            }
            RuleError::InactiveUser(_)
            | RuleError::AccessDenied(_)
            | RuleError::IdentifierForbidden(_)
            | RuleError::NotAdministrator => Self::forbidden(message),
            RuleError::ValidationFailed(violations) => {
                let mut err = Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_failed", message);
                err.body.violations = violations;
                err
            }
            RuleError::Audit(_) | RuleError::Store { .. } => Self::internal(message),
        }
    }
}

impl From<DatasetError> for ApiError {
    fn from(e: DatasetError) -> Self {
        let message = e.to_string();
        match e {
            DatasetError::UnknownTable(_) | DatasetError::StaleTableVersion { .. } => Self::not_found(message),
            DatasetError::TableExists(_) => Self::new(StatusCode::CONFLICT, "conflict", message),
            _ => Self::unprocessable(message),
        }
    }
}

impl From<CustomizerError> for ApiError {
    fn from(e: CustomizerError) -> Self {
        match e {
            CustomizerError::Rule(e) => e.into(),
            CustomizerError::Dataset(e) => e.into(),
            CustomizerError::NotReportOwner { .. } => Self::forbidden(e.to_string()),
            CustomizerError::VersionRegression { .. } => Self::new(StatusCode::CONFLICT, "conflict", e.to_string()),
            _ => Self::unprocessable(e.to_string()),
        }
    }
}

impl From<AuditError> for ApiError {
    fn from(e: AuditError) -> Self {
        Self::internal(e.to_string())
    }
}
