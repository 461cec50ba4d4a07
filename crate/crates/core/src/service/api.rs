//! JSON REST endpoints. Protocol calls run on the blocking pool because
//! they sign, verify and fsync.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::metrics::MetricsRegistry;
use crate::biometric::{normalize, CaptureSample};
use crate::ledger::{Address, Payload, PersonalInfo, StoredBlock};
use crate::protocol::{Node, ProtocolError, SESSION_ID_LEN};

#[derive(Clone)]
pub struct AppState {
    pub node: Arc<Node>,
    pub metrics: Arc<MetricsRegistry>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/register", post(register))
        .route("/api/authenticate", post(authenticate))
        .route("/api/vote", post(vote))
        .route("/api/tally", get(tally))
        .route("/api/blocks/{index}", get(block))
        .route("/api/chain/verify", get(verify_chain))
        .route("/api/events", get(events))
        .route("/metrics", get(metrics))
        .layer(middleware::from_fn_with_state(state.metrics.clone(), track_latency))
        .with_state(state)
}

async fn track_latency(State(metrics): State<Arc<MetricsRegistry>>, req: Request, next: Next) -> Response {
    let start = Instant::now();
    let response = next.run(req).await;
    metrics.request_latency_ms.observe(start.elapsed());
    response
}

/// Problem document `{code, message, detail}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    detail: Option<String>,
}

impl ApiError {
    fn invalid(detail: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "INVALID_INPUT",
            message: "request is malformed".into(),
            detail: Some(detail.into()),
        }
    }

    fn from_protocol(e: ProtocolError, spoof_status: StatusCode) -> Self {
        use ProtocolError::*;
        let status = match &e {
            SpoofDetected => spoof_status,
            UnknownVoter | SignatureInvalid | NoMatch | SessionInvalid | SessionExpired => StatusCode::UNAUTHORIZED,
            AlreadyRegistered | AlreadyVoted | DuplicateCandidate(_) => StatusCode::CONFLICT,
            ElectionNotOpen | ElectionClosed | ElectionAlreadyOpen => StatusCode::CONFLICT,
            UnknownCandidate(_) => StatusCode::NOT_FOUND,
            InvalidSignedEmbedding => StatusCode::UNPROCESSABLE_ENTITY,
            InvalidInput(_) => StatusCode::BAD_REQUEST,
            PersistenceFailure(_) => StatusCode::SERVICE_UNAVAILABLE,
            CorruptChain { .. } | Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let detail = match &e {
            InvalidInput(d) | PersistenceFailure(d) | Internal(d) => Some(d.clone()),
            UnknownCandidate(id) | DuplicateCandidate(id) => Some(format!("candidate_id {id}")),
            _ => None,
        };
        ApiError { status, code: e.code(), message: e.to_string(), detail }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::invalid(e.body_text())
    }
}

fn capture(embedding: &[f64], spoof_score: f64) -> Result<CaptureSample, ApiError> {
    let embedding = normalize(embedding).map_err(|e| ApiError::invalid(format!("embedding: {e}")))?;
    CaptureSample::new(embedding, spoof_score, "client").map_err(|e| ApiError::invalid(format!("spoof_score: {e}")))
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> T + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::from_protocol(ProtocolError::Internal(e.to_string()), StatusCode::INTERNAL_SERVER_ERROR))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub personal: PersonalInfo,
    pub embedding: Vec<f64>,
    pub spoof_score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RegisterResponse {
    pub address: Address,
    pub block_index: u64,
    pub embedding_digest: String,
}

async fn register(
    State(state): State<AppState>,
    body: Result<Json<RegisterRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<RegisterResponse>), ApiError> {
    let Json(req) = body?;
    let sample = capture(&req.embedding, req.spoof_score)?;
    let node = state.node.clone();
    let receipt = blocking(move || node.enroll(req.personal, sample))
        .await?
        .map_err(|e| ApiError::from_protocol(e, StatusCode::UNPROCESSABLE_ENTITY))?;
    Ok((
        StatusCode::CREATED,
        Json(RegisterResponse {
            address: receipt.address,
            block_index: receipt.block_index,
            embedding_digest: hex::encode(receipt.embedding_digest),
        }),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AuthenticateRequest {
    pub address: String,
    pub embedding: Vec<f64>,
    pub spoof_score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AuthenticateResponse {
    pub session_id: String,
    pub similarity: f64,
    /// Unix milliseconds.
    pub expires_at: u64,
}

async fn authenticate(
    State(state): State<AppState>,
    body: Result<Json<AuthenticateRequest>, JsonRejection>,
) -> Result<Json<AuthenticateResponse>, ApiError> {
    let Json(req) = body?;
    let address: Address = req.address.parse().map_err(|e: String| ApiError::invalid(format!("address: {e}")))?;
    let sample = capture(&req.embedding, req.spoof_score)?;
    let node = state.node.clone();
    let session =
        blocking(move || node.authenticate(&address, sample)).await?.map_err(|e| ApiError::from_protocol(e, StatusCode::UNAUTHORIZED))?;
    Ok(Json(AuthenticateResponse {
        session_id: hex::encode(session.session_id),
        similarity: session.similarity,
        expires_at: session.expires_at_ms,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VoteRequest {
    pub session_id: String,
    pub candidate_id: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VoteResponse {
    pub tx_id: String,
    pub block_index: u64,
}

async fn vote(
    State(state): State<AppState>,
    body: Result<Json<VoteRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<VoteResponse>), ApiError> {
    let Json(req) = body?;
    // a malformed token is just an unknown session
    let session_id: [u8; SESSION_ID_LEN] = hex::decode(&req.session_id)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| ApiError::from_protocol(ProtocolError::SessionInvalid, StatusCode::UNAUTHORIZED))?;
    let node = state.node.clone();
    let receipt = blocking(move || node.cast_vote(&session_id, req.candidate_id))
        .await?
        .map_err(|e| ApiError::from_protocol(e, StatusCode::UNAUTHORIZED))?;
    Ok((StatusCode::CREATED, Json(VoteResponse { tx_id: hex::encode(receipt.tx_id), block_index: receipt.block_index })))
}

async fn tally(State(state): State<AppState>) -> Json<BTreeMap<String, u64>> {
    Json(state.node.results().into_iter().map(|(id, n)| (id.to_string(), n)).collect())
}

/// Canonical block as JSON with hex-encoded binary fields.
pub fn block_json(b: &StoredBlock) -> Value {
    let h = &b.block.header;
    let payload = match &b.block.payload {
        Payload::Genesis(g) => json!({
            "candidates": g.candidates.iter().map(|c| json!({ "id": c.id, "name": c.name })).collect::<Vec<_>>(),
        }),
        Payload::Registration(r) => json!({
            "voter_address": r.voter_address,
            "personal": r.personal,
            "embedding_digest": hex::encode(r.embedding_digest),
            "embedding_signature": r.embedding_signature.to_hex(),
        }),
        Payload::Vote(v) => json!({
            "voter_address": v.voter_address,
            "candidate_id": v.candidate_id,
            "tx_id": hex::encode(v.tx_id),
        }),
    };
    json!({
        "index": h.index,
        "hash": hex::encode(b.hash),
        "prev_hash": hex::encode(h.prev_hash),
        "timestamp_ms": h.timestamp_ms,
        "kind": h.kind,
        "gas_used": h.gas_used,
        "size": b.size(),
        "payload": payload,
        "payload_hex": hex::encode(b.block.payload.to_bytes()),
        "authority_signature": b.block.authority_signature.to_hex(),
        "bytes_hex": hex::encode(&b.bytes),
    })
}

async fn block(State(state): State<AppState>, Path(index): Path<String>) -> Result<Json<Value>, ApiError> {
    let index: u64 = index.parse().map_err(|_| ApiError::invalid("block index must be a non-negative integer"))?;
    let stored = state.node.ledger().get_block(index).map_err(|e| ApiError {
        status: StatusCode::NOT_FOUND,
        code: "BLOCK_NOT_FOUND",
        message: e.to_string(),
        detail: None,
    })?;
    Ok(Json(block_json(&stored)))
}

async fn verify_chain(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    let node = state.node.clone();
    let report = blocking(move || node.verify_chain()).await?;
    Ok(Json(json!({ "valid": report.valid, "first_bad_index": report.first_bad_index, "length": report.length })))
}

async fn events(State(state): State<AppState>) -> Json<Value> {
    Json(json!(state.node.events()))
}

async fn metrics(State(state): State<AppState>) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "text/plain; version=0.0.4")], state.metrics.render())
}
