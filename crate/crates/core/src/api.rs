//! Wire types shared by the HTTP service and its client.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::ingestion::{utc_seconds, CycleReport, IngestError};
use crate::session::SessionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ApiErrorCode {
    NotEnoughData,
    DegenerateTable,
    BadRequest,
    NotFound,
    Internal,
}

impl ApiErrorCode {
    pub fn status(self) -> u16 {
        match self {
            ApiErrorCode::NotEnoughData | ApiErrorCode::DegenerateTable => 422,
            ApiErrorCode::BadRequest => 400,
            ApiErrorCode::NotFound => 404,
            ApiErrorCode::Internal => 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct ApiError {
    pub code: ApiErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ApiErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
        }
    }
}

impl From<&SessionError> for ApiErrorCode {
    fn from(e: &SessionError) -> Self {
        match e {
            SessionError::NotEnoughData(_) => ApiErrorCode::NotEnoughData,
            SessionError::DegenerateTable(_) => ApiErrorCode::DegenerateTable,
            SessionError::NoPriorSnapshot | SessionError::InvalidConfig(_) => {
                ApiErrorCode::BadRequest
            }
            SessionError::Ingest(IngestError::EmptyTermSet | IngestError::DuplicateTerm(_)) => {
                ApiErrorCode::BadRequest
            }
            SessionError::Ingest(IngestError::NotFound(_)) => ApiErrorCode::NotFound,
            SessionError::Ingest(_)
            | SessionError::Tagger(_)
            | SessionError::Analysis(_)
            | SessionError::Schema(_)
            | SessionError::Io(_) => ApiErrorCode::Internal,
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError::new(ApiErrorCode::from(&e), e.to_string())
    }
}

/// Body of `POST /api/v1/session/iterations`. Exclusions are added to the
/// latest snapshot's set; `reset` starts from an empty set instead.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationRequest {
    #[serde(default)]
    pub exclusions: Vec<String>,
    #[serde(default)]
    pub reset: bool,
}

/// Body of `PUT /api/v1/session/terms`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermsRequest {
    #[serde(default)]
    pub add: Vec<String>,
    #[serde(default)]
    pub remove: Vec<String>,
}

/// Entry of `GET /api/v1/snapshots`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotSummary {
    pub sequence_number: u64,
    #[serde(with = "utc_seconds")]
    pub created_at: DateTime<Utc>,
    pub post_count: usize,
    pub exclusions_in_effect: BTreeSet<String>,
}

/// Payload of a `snapshot` event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotEvent {
    pub sequence_number: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerEvent {
    Snapshot(SnapshotEvent),
    Cycle(CycleReport),
}

impl ServerEvent {
    pub fn name(&self) -> &'static str {
        match self {
            ServerEvent::Snapshot(_) => "snapshot",
            ServerEvent::Cycle(_) => "cycle",
        }
    }

    pub fn data(&self) -> String {
        match self {
            ServerEvent::Snapshot(s) => serde_json::to_string(s),
            ServerEvent::Cycle(c) => serde_json::to_string(c),
        }
        .expect("event serializes")
    }

    /// Inverse of (`name`, `data`); `None` for unknown event names.
    pub fn parse(name: &str, data: &str) -> Option<Result<Self, serde_json::Error>> {
        match name {
            "snapshot" => Some(serde_json::from_str(data).map(ServerEvent::Snapshot)),
            "cycle" => Some(serde_json::from_str(data).map(ServerEvent::Cycle)),
            _ => None,
        }
    }
}
