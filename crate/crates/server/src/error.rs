use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use descrix_core::description::DescriptionError;
use descrix_core::workflow::WorkflowError;
use descrix_core::KernelError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// The wire form of every failed request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub details: Value,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub envelope: ErrorEnvelope,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            envelope: ErrorEnvelope {
                code: code.to_owned(),
                message: message.into(),
                details: json!({}),
            },
        }
    }

    pub fn auth(message: &str) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "AuthFailed", message)
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "MalformedRequest", message)
    }

    fn with_details(mut self, details: Value) -> Self {
        self.envelope.details = details;
        self
    }
}

pub fn status_for(code: &str) -> StatusCode {
    match code {
        "AuthFailed" => StatusCode::UNAUTHORIZED,
        "MalformedRequest" => StatusCode::BAD_REQUEST,
        "UnknownItem" | "UnknownDescription" | "UnknownVersion" | "UnknownDefinition" | "UnknownViewpoint"
        | "NoOutcomeYet" | "UnboundPath" | "UnknownProperty" | "UnknownCollection" | "UnknownKind" => {
            StatusCode::NOT_FOUND
        }
        "NotEnabled" | "IllegalTransition" | "RoleDenied" | "SlotOccupied" | "PathAlreadyBound" | "ViewExists"
        | "CycleDetected" | "ImmutableProperty" | "ReadOnlyItem" | "KindMismatch" | "BreakingChange"
        | "RouteEvaluationError" => StatusCode::CONFLICT,
        "StorageFailure" | "SequenceGap" | "ItemExists" | "BlobMissing" | "BlobCorrupt" => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

fn details(e: &KernelError) -> Value {
    match e {
        KernelError::Workflow(WorkflowError::OutcomeInvalid(report)) => json!({"report": report}),
        KernelError::Description(DescriptionError::BreakingChange { name, report }) => {
            json!({"name": name, "report": report})
        }
        KernelError::Description(DescriptionError::PayloadInvalid { kind, name, source }) => {
            json!({"kind": kind.slug(), "name": name, "cause": source.code(), "reason": source.to_string()})
        }
        KernelError::Description(DescriptionError::KindMismatch { name, existing }) => {
            json!({"name": name, "existing": existing.slug()})
        }
        KernelError::CycleDetected { item, member } => json!({"item": item, "member": member}),
        KernelError::BatchEntry { index, source } => {
            let mut d = details(source);
            if let Value::Object(m) = &mut d {
                m.insert("index".into(), json!(index));
            }
            d
        }
        KernelError::Workflow(WorkflowError::IllegalTransition {
            step_path,
            state,
            transition,
        }) => json!({"step_path": step_path, "state": state, "transition": transition}),
        _ => json!({}),
    }
}

impl From<KernelError> for ApiError {
    fn from(e: KernelError) -> Self {
        let code = e.code();
        let status = status_for(code);
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        ApiError::new(status, code, e.to_string()).with_details(details(&e))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.envelope)).into_response()
    }
}
