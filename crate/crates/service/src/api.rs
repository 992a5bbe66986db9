//! Response envelope and error mapping.

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Request};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use focusloom_core::doubling::DoublingError;
use focusloom_core::engine::EngineError;
use focusloom_core::nudge::NudgeError;
use focusloom_core::store::StoreError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

/// Every response body: `ok` plus exactly one of `data` or `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEnvelope<T> {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl<T> ApiEnvelope<T> {
    pub fn success(data: T) -> Self {
        ApiEnvelope {
            ok: true,
            data: Some(data),
            error: None,
        }
    }

    pub fn failure(code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiEnvelope {
            ok: false,
            data: None,
            error: Some(ErrorBody {
                code: code.into(),
                message: message.into(),
            }),
        }
    }
}

/// Successful response wrapped in the envelope.
pub struct ApiOk<T>(pub T);

impl<T: Serialize> IntoResponse for ApiOk<T> {
    fn into_response(self) -> Response {
        Json(ApiEnvelope::success(self.0)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn forbidden() -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", "loopback clients only")
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn unavailable() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "stopped", "engine is shutting down")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ApiEnvelope::<()>::failure(self.code, self.message);
        (self.status, Json(body)).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        use StatusCode as S;
        let msg = e.to_string();
        let (status, code) = match &e {
            EngineError::Event(_) => (S::UNPROCESSABLE_ENTITY, "invalid_event"),
            EngineError::Store(s) => match s {
                StoreError::BadToken => (S::CONFLICT, "bad_token"),
                StoreError::BadWeek(_) => (S::UNPROCESSABLE_ENTITY, "invalid_week"),
                StoreError::DiskFull => (S::INSUFFICIENT_STORAGE, "disk_full"),
                _ => (S::INTERNAL_SERVER_ERROR, "storage"),
            },
            EngineError::Nudge(n) => match n {
                NudgeError::UnknownNudgeId(_) => (S::NOT_FOUND, "unknown_nudge"),
                NudgeError::DuplicateResponse(_) => (S::CONFLICT, "duplicate_response"),
                NudgeError::InvalidPreference(_) => (S::UNPROCESSABLE_ENTITY, "invalid_preferences"),
                NudgeError::AllStylesSuppressed | NudgeError::NoModesEnabled => (S::CONFLICT, "no_style"),
            },
            EngineError::Doubling(d) => match d {
                DoublingError::SessionAlreadyActive => (S::CONFLICT, "doubling_active"),
                DoublingError::NoActiveSession => (S::CONFLICT, "doubling_inactive"),
                DoublingError::ConsentOff => (S::CONFLICT, "consent_off"),
                DoublingError::InvalidCadence => (S::UNPROCESSABLE_ENTITY, "invalid_cadence"),
            },
        };
        ApiError::new(status, code, msg)
    }
}

/// JSON body extractor whose rejections use the envelope with 422.
pub struct Body<T>(pub T);

impl<S, T> FromRequest<S> for Body<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(rejection(e)),
        }
    }
}

fn rejection(e: JsonRejection) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.body_text())
}
