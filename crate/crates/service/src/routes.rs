//! HTTP routes.

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{ConnectInfo, Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use futures_util::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, watch};

use focusloom_core::{
    AttentionState, ContextKind, EngineError, Millis, Preference, ResponseKind, TraceRecord,
};

use crate::actor::{Core, EngineHandle};
use crate::api::{ApiError, ApiOk, Body};
use crate::hub::{Hub, SseItem};
use crate::net::PeerAddr;

#[derive(Clone)]
pub struct AppState {
    pub engine: EngineHandle,
    pub hub: Arc<Hub>,
    pub keepalive: Duration,
    pub shutdown: watch::Receiver<bool>,
}

type ApiResult<T> = Result<ApiOk<T>, ApiError>;

impl AppState {
    async fn run<R, F>(&self, f: F) -> Result<R, ApiError>
    where
        F: FnOnce(&mut Core) -> Result<R, EngineError> + Send + 'static,
        R: Send + 'static,
    {
        self.engine
            .call(f)
            .await
            .map_err(|_| ApiError::unavailable())?
            .map_err(ApiError::from)
    }
}

pub fn router(state: AppState, debug: bool) -> Router {
    let mut r = Router::new()
        .route("/state", get(get_state))
        .route("/events", get(events))
        .route("/recall", get(get_recall))
        .route("/recall/return", post(recall_return))
        .route("/preferences", get(get_preferences).put(put_preferences))
        .route("/nudges/{id}/response", post(nudge_response))
        .route("/doubling/start", post(doubling_start))
        .route("/doubling/stop", post(doubling_stop))
        .route("/summary/weekly", get(weekly_summary))
        .route("/purge-request", post(purge_request))
        .route("/purge", post(purge));
    if debug {
        r = r
            .route("/debug/bandit", get(debug_bandit))
            .route("/debug/events", post(debug_events))
            .route("/debug/advance", post(debug_advance));
    }
    r.fallback(|| async { ApiError::not_found("unknown route") })
        .layer(middleware::from_fn(loopback_only))
        .with_state(state)
}

/// Rejects any request whose peer is not loopback, including requests that
/// arrive without connection info.
async fn loopback_only(req: Request, next: Next) -> Response {
    let ok = req
        .extensions()
        .get::<ConnectInfo<PeerAddr>>()
        .is_some_and(|ConnectInfo(PeerAddr(a))| a.ip().is_loopback());
    if ok {
        next.run(req).await
    } else {
        ApiError::forbidden().into_response()
    }
}

async fn get_state(State(s): State<AppState>) -> ApiResult<AttentionState> {
    let st = s.run(|c| Ok(*c.engine.state())).await?;
    Ok(ApiOk(st))
}

fn to_event(item: SseItem) -> Event {
    Event::default()
        .id(item.id.to_string())
        .event(item.event)
        .data(item.data)
}

fn live(rx: broadcast::Receiver<SseItem>, after: u64) -> impl Stream<Item = SseItem> {
    stream::unfold((rx, after), |(mut rx, after)| async move {
        loop {
            match rx.recv().await {
                Ok(item) if item.id <= after => continue,
                Ok(item) => {
                    let id = item.id;
                    return Some((item, (rx, id)));
                }
                // A lagging client is cut off and resumes with Last-Event-ID.
                Err(_) => return None,
            }
        }
    })
}

async fn events(State(s): State<AppState>, headers: HeaderMap) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let last = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let (replay, rx) = s.hub.subscribe(last);
    let after = replay.last().map(|i| i.id).or(last).unwrap_or(0);
    let mut shutdown = s.shutdown.clone();
    let stop = async move {
        let _ = shutdown.wait_for(|v| *v).await;
    };
    let items = stream::iter(replay)
        .chain(live(rx, after))
        .take_until(stop)
        .map(|i| Ok(to_event(i)));
    Sse::new(items).keep_alive(KeepAlive::new().interval(s.keepalive).text("heartbeat"))
}

#[derive(Debug, Serialize)]
struct RecallView {
    kind: ContextKind,
    label: String,
    first_seen: Millis,
    last_seen: Millis,
    dwell_s: f64,
}

fn recall_view(c: &Core, e: &focusloom_core::RecallEntry) -> RecallView {
    RecallView {
        kind: e.ctx.kind,
        label: c
            .engine
            .resolve_label(e.ctx.handle)
            .unwrap_or_else(|| e.ctx.kind.generic_noun().to_string()),
        first_seen: e.first_seen,
        last_seen: e.last_seen,
        dwell_s: e.dwell_s,
    }
}

async fn get_recall(State(s): State<AppState>) -> ApiResult<serde_json::Value> {
    let v = s
        .run(|c| {
            let entries: Vec<RecallView> = c.engine.recall().entries().iter().map(|e| recall_view(c, e)).collect();
            Ok(json!({ "prompt": c.engine.resume_prompt(), "entries": entries }))
        })
        .await?;
    Ok(ApiOk(v))
}

/// The context the resume prompt offers; the client switches to it.
async fn recall_return(State(s): State<AppState>) -> ApiResult<RecallView> {
    let v = s.run(|c| Ok(c.engine.recall_target().map(|e| recall_view(c, &e)))).await?;
    v.map(ApiOk).ok_or_else(|| ApiError::not_found("nothing to return to"))
}

async fn get_preferences(State(s): State<AppState>) -> ApiResult<Preference> {
    let p = s.run(|c| Ok(c.engine.preferences().clone())).await?;
    Ok(ApiOk(p))
}

async fn put_preferences(State(s): State<AppState>, Body(p): Body<Preference>) -> ApiResult<Preference> {
    let p = s
        .run(move |c| {
            let now = c.now();
            c.engine.set_preferences(p, now)?;
            Ok(c.engine.preferences().clone())
        })
        .await?;
    Ok(ApiOk(p))
}

#[derive(Debug, Deserialize)]
struct ResponseReq {
    value: ResponseKind,
}

async fn nudge_response(
    State(s): State<AppState>,
    Path(id): Path<u64>,
    Body(req): Body<ResponseReq>,
) -> ApiResult<serde_json::Value> {
    if req.value == ResponseKind::Ignored {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_body",
            "ignored is recorded by expiry only",
        ));
    }
    let out = s
        .run(move |c| {
            let now = c.now();
            c.engine.respond(id, req.value, now)
        })
        .await?;
    Ok(ApiOk(json!({
        "nudge_id": id,
        "value": req.value,
        "reward": out.reward,
        "suppressed": out.suppressed,
    })))
}

async fn doubling_start(State(s): State<AppState>) -> ApiResult<serde_json::Value> {
    let next = s
        .run(|c| {
            let now = c.now();
            c.engine.doubling_start(now)
        })
        .await?;
    Ok(ApiOk(json!({ "next_cue_at": next })))
}

async fn doubling_stop(State(s): State<AppState>) -> ApiResult<focusloom_core::DoublingSummary> {
    let sum = s
        .run(|c| {
            let now = c.now();
            c.engine.doubling_stop(now)
        })
        .await?;
    Ok(ApiOk(sum))
}

async fn weekly_summary(
    State(s): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<focusloom_core::WeeklySummary> {
    let week = q.get("week").cloned();
    let sum = s
        .run(move |c| {
            let week = match week {
                Some(w) => w,
                None => focusloom_core::store::iso_week_of(c.now(), c.engine.preferences().utc_offset_minutes),
            };
            c.engine.weekly_summary(&week)
        })
        .await?;
    Ok(ApiOk(sum))
}

async fn purge_request(State(s): State<AppState>) -> ApiResult<serde_json::Value> {
    let tok = s.run(|c| Ok(c.engine.purge_request())).await?;
    match tok {
        Some(t) => Ok(ApiOk(json!({ "token": t }))),
        None => Err(ApiError::new(StatusCode::CONFLICT, "no_store", "running without a data directory")),
    }
}

/// The token is read leniently: a missing or malformed body is the same
/// conflict as a wrong token.
async fn purge(State(s): State<AppState>, body: axum::body::Bytes) -> ApiResult<serde_json::Value> {
    let token = serde_json::from_slice::<serde_json::Value>(&body)
        .ok()
        .and_then(|v| v.get("token").and_then(|t| t.as_str()).map(str::to_string));
    let Some(token) = token else {
        return Err(ApiError::new(StatusCode::CONFLICT, "bad_token", "purge requires a token"));
    };
    let report = s
        .run(move |c| {
            let now = c.now();
            c.engine.purge(&token, now)
        })
        .await?;
    Ok(ApiOk(json!({
        "records_erased": report.records_erased,
        "files_removed": report.removed.len(),
    })))
}

async fn debug_bandit(State(s): State<AppState>) -> ApiResult<serde_json::Value> {
    let v = s
        .run(|c| {
            let outstanding: Vec<_> = c.engine.bandit().outstanding().cloned().collect();
            Ok(json!({ "arms": c.engine.bandit().arms(), "outstanding": outstanding }))
        })
        .await?;
    Ok(ApiOk(v))
}

/// Injects trace records as if they came from the local collector.
async fn debug_events(State(s): State<AppState>, Body(recs): Body<Vec<TraceRecord>>) -> ApiResult<serde_json::Value> {
    let n = recs.len();
    let v = s
        .run(move |c| {
            for r in &recs {
                let out = c.engine.ingest(r)?;
                c.emit(out);
            }
            c.clock.set(c.engine.clock());
            Ok(json!({ "ingested": n, "clock": c.engine.clock() }))
        })
        .await?;
    Ok(ApiOk(v))
}

#[derive(Debug, Deserialize)]
struct AdvanceReq {
    t: Millis,
}

async fn debug_advance(State(s): State<AppState>, Body(req): Body<AdvanceReq>) -> ApiResult<serde_json::Value> {
    let v = s
        .run(move |c| {
            c.clock.set(req.t);
            let out = c.engine.advance_to(req.t)?;
            c.emit(out);
            Ok(json!({ "clock": c.engine.clock() }))
        })
        .await?;
    Ok(ApiOk(v))
}
