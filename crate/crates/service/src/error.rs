use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::json;

use outlierscope::Error;

/// Structured error body: `{"error": {kind, message, field?, dimension?, ...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
    /// Request field the error refers to, when one is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    /// Dimension the error refers to, when one is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    /// Valid alternatives (dimension names or years).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub available: Option<serde_json::Value>,
}

impl ErrorBody {
    fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.to_string(),
            message: message.into(),
            field: None,
            dimension: None,
            value: None,
            available: None,
        }
    }

    fn field(mut self, field: impl Into<String>) -> Self {
        self.field = Some(field.into());
        self
    }
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn not_found(what: &str, id: &str) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            body: ErrorBody::new("not_found", format!("{what} '{id}' not found")),
        }
    }

    pub fn unknown_dataset(name: &str, available: Vec<String>) -> Self {
        let mut body = ErrorBody::new("unknown_dataset", format!("dataset '{name}' is not loaded")).field("dataset");
        body.value = Some(name.to_string());
        body.available = Some(json!(available));
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body,
        }
    }

    /// A request body that is not valid JSON or does not match the config
    /// type. serde names the offending field in backticks; surface it.
    pub fn bad_json(err: &serde_json::Error) -> Self {
        let message = err.to_string();
        let mut body = ErrorBody::new("invalid_body", message.clone());
        body.field = backticked(&message);
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body,
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody::new("internal", message),
        }
    }
}

fn backticked(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        let message = err.to_string();
        let unprocessable = |body| Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body,
        };
        match err {
            Error::UnknownDimension { name, available } => {
                let mut body = ErrorBody::new("unknown_dimension", message);
                body.dimension = Some(name);
                body.available = Some(json!(available));
                unprocessable(body)
            }
            Error::UnknownValue { dimension, value } => {
                let mut body = ErrorBody::new("unknown_value", message);
                body.dimension = Some(dimension);
                body.value = Some(value);
                unprocessable(body)
            }
            Error::BaseYearMissing { year, available } => {
                let mut body = ErrorBody::new("base_year_missing", message).field("base_year");
                body.value = Some(year.to_string());
                body.available = Some(json!(available));
                unprocessable(body)
            }
            Error::InvalidConfig { field, .. } => unprocessable(ErrorBody::new("invalid_config", message).field(field)),
            Error::EmptyMeanCell { .. } => {
                unprocessable(ErrorBody::new("empty_mean_cell", message).field("empty_cells"))
            }
            Error::InsufficientRows { .. } => unprocessable(ErrorBody::new("insufficient_rows", message)),
            Error::NonFinite { .. } | Error::DimensionMismatch { .. } => {
                unprocessable(ErrorBody::new("invalid_input", message))
            }
            Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Schema(_)
            | Error::MissingColumn { .. }
            | Error::RowRejected { .. } => Self::internal(message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.body }))).into_response()
    }
}
