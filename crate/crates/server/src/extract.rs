use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Request};
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use descrix_core::{Agent, DescriptionKind, ItemId};
use serde::de::DeserializeOwned;

use crate::error::ApiError;
use crate::AppState;

/// The agent named by the request's bearer token.
pub struct Caller(pub Agent);

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let header = parts
            .headers
            .get(AUTHORIZATION)
            .ok_or_else(|| ApiError::auth("missing Authorization header"))?;
        let token = header
            .to_str()
            .ok()
            .and_then(|h| h.strip_prefix("Bearer "))
            .map(str::trim)
            .ok_or_else(|| ApiError::auth("expected a Bearer token"))?;
        state.agent(token).map(Caller).ok_or_else(|| ApiError::auth("unknown token"))
    }
}

/// JSON body whose rejections use the error envelope.
pub struct Body<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        axum::Json::<T>::from_request(req, state)
            .await
            .map(|j| Body(j.0))
            .map_err(|e: JsonRejection| ApiError::malformed(e.body_text()))
    }
}

/// Query string whose rejections use the error envelope.
pub struct Query<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequestParts<S> for Query<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        axum::extract::Query::<T>::from_request_parts(parts, state)
            .await
            .map(|q| Query(q.0))
            .map_err(|e: QueryRejection| ApiError::malformed(e.body_text()))
    }
}

pub fn item_id(s: &str) -> Result<ItemId, ApiError> {
    s.parse().map_err(|_| ApiError::malformed(format!("`{s}` is not an item id")))
}

pub fn kind(s: &str) -> Result<DescriptionKind, ApiError> {
    s.parse()
        .map_err(|e: String| ApiError::new(axum::http::StatusCode::NOT_FOUND, "UnknownKind", e))
}

/// Path parameters whose rejections use the error envelope.
pub struct Path<T>(pub T);

impl<T: DeserializeOwned + Send, S: Send + Sync> FromRequestParts<S> for Path<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        axum::extract::Path::<T>::from_request_parts(parts, state)
            .await
            .map(|p| Path(p.0))
            .map_err(|e| ApiError::malformed(e.body_text()))
    }
}
