use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use improv_core::story::{Phase, StoryError};
use improv_core::{GatewayError, MediaError};
use serde::{Deserialize, Serialize};

/// Wire shape of every error response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message)
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn busy() -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "session_busy",
            "another operation is in progress for this session",
        )
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

/// Provider failures are reported by kind only; provider response bodies
/// never reach the client.
impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let bad_gateway = |code, message: &str| ApiError::new(StatusCode::BAD_GATEWAY, code, message);
        match e {
            GatewayError::Timeout => ApiError::new(
                StatusCode::GATEWAY_TIMEOUT,
                "provider_timeout",
                "the model provider did not answer in time",
            ),
            GatewayError::RateLimited => bad_gateway("provider_rate_limited", "the model provider is rate limiting requests"),
            GatewayError::Auth => bad_gateway("provider_auth", "the model provider rejected the configured credential"),
            GatewayError::Provider { status, .. } => ApiError::new(
                StatusCode::BAD_GATEWAY,
                "provider_error",
                match status {
                    Some(s) => format!("the model provider failed with status {s}"),
                    None => "the model provider could not be reached".to_string(),
                },
            ),
            GatewayError::Config(_) => bad_gateway("provider_config", "the model provider is not configured correctly"),
            GatewayError::CapabilityUnavailable(what) => ApiError::new(
                StatusCode::NOT_IMPLEMENTED,
                "capability_unavailable",
                format!("`{what}` is not available with the configured provider"),
            ),
            e @ (GatewayError::UnsupportedFormat(_) | GatewayError::TextTooLong { .. } | GatewayError::Validation(_)) => {
                ApiError::validation(e.to_string())
            }
        }
    }
}

impl From<StoryError> for ApiError {
    fn from(e: StoryError) -> Self {
        match e {
            StoryError::Validation(m) => ApiError::validation(m),
            StoryError::Phase {
                phase: Phase::Concluded,
                ..
            } => ApiError::new(StatusCode::GONE, "session_concluded", "the story has already concluded"),
            e @ StoryError::Phase { .. } => ApiError::new(StatusCode::CONFLICT, "invalid_phase", e.to_string()),
            e @ StoryError::StaleAction(_) => ApiError::new(StatusCode::CONFLICT, "stale_action", e.to_string()),
            e @ StoryError::UnknownAction(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_action", e.to_string()),
            e @ StoryError::PartOutOfRange(_) => ApiError::new(StatusCode::NOT_FOUND, "part_not_found", e.to_string()),
            StoryError::Gateway(g) => g.into(),
            StoryError::Parse(p) => ApiError::new(
                StatusCode::BAD_GATEWAY,
                "parse_error",
                format!("the model returned an unusable {} response", p.schema),
            ),
            StoryError::Prompt(p) => ApiError::internal(format!("prompt template: {p}")),
        }
    }
}

impl From<MediaError> for ApiError {
    fn from(e: MediaError) -> Self {
        match e {
            MediaError::Validation(m) => ApiError::validation(m),
            e @ MediaError::Decode(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "media_decode", e.to_string()),
            MediaError::Gateway(g) => g.into(),
            MediaError::Prompt(p) => ApiError::internal(format!("prompt template: {p}")),
        }
    }
}
