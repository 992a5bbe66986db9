//! Behavioral event model, stream validation and trace replay.
//!
//! Sensors emit [`TraceRecord`]s (the JSON Lines wire form). A record carries
//! the plaintext context label only until it passes [`validate_event`]; from
//! then on the engine sees an [`ActivityEvent`] that references the context by
//! hash, and the label is handed to the encrypted label map exactly once.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nudge::ResponseKind;

/// Unix epoch milliseconds.
pub type Millis = i64;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextKind {
    App,
    Tab,
}

impl ContextKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContextKind::App => "app",
            ContextKind::Tab => "tab",
        }
    }

    /// Noun used when a label cannot be resolved.
    pub fn generic_noun(self) -> &'static str {
        match self {
            ContextKind::App => "an app",
            ContextKind::Tab => "a browser tab",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContextError {
    #[error("context label is empty after normalization")]
    EmptyLabel,
}

/// Opaque key into the encrypted label map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelHandle(pub u64);

/// A work context (application or browser origin) referenced by hash only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextRef {
    pub id: u64,
    pub kind: ContextKind,
    pub handle: LabelHandle,
}

impl ContextRef {
    /// Normalizes `label`, hashes it and returns the reference together with
    /// the normalized label (which the caller must route to the label map).
    pub fn from_label(kind: ContextKind, label: &str) -> Result<(Self, String), ContextError> {
        let normalized = normalize_label(kind, label)?;
        let id = hash_normalized(kind, &normalized);
        Ok((
            ContextRef {
                id,
                kind,
                handle: LabelHandle(id),
            },
            normalized,
        ))
    }
}

/// Lowercases and trims a label; tab labels are reduced to their origin host
/// (plus explicit port) so paths and query strings never leave the sensor.
pub fn normalize_label(kind: ContextKind, label: &str) -> Result<String, ContextError> {
    let trimmed = label.trim().to_lowercase();
    let normalized = match kind {
        ContextKind::App => trimmed,
        ContextKind::Tab => tab_origin(&trimmed),
    };
    if normalized.is_empty() {
        return Err(ContextError::EmptyLabel);
    }
    Ok(normalized)
}

fn tab_origin(label: &str) -> String {
    if label.contains("://") {
        if let Ok(url) = url::Url::parse(label) {
            if let Some(host) = url.host_str() {
                return match url.port() {
                    Some(port) => format!("{host}:{port}"),
                    None => host.to_string(),
                };
            }
        }
        let rest = label.split_once("://").map_or(label, |(_, r)| r);
        return strip_path(rest).to_string();
    }
    strip_path(label).to_string()
}

fn strip_path(s: &str) -> &str {
    let end = s.find(['/', '?', '#']).unwrap_or(s.len());
    &s[..end]
}

fn hash_normalized(kind: ContextKind, normalized: &str) -> u64 {
    let mut buf = Vec::with_capacity(normalized.len() + 4);
    buf.extend_from_slice(kind.as_str().as_bytes());
    buf.push(b':');
    buf.extend_from_slice(normalized.as_bytes());
    fnv1a64(&buf)
}

/// Stable 64-bit id of a context: FNV-1a over `"kind:label"` after
/// normalization.
pub fn hash_context(kind: ContextKind, label: &str) -> Result<u64, ContextError> {
    let normalized = normalize_label(kind, label)?;
    Ok(hash_normalized(kind, &normalized))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    AppFocus,
    TabSwitch,
    TabOpen,
    TabClose,
    IdleStart,
    IdleEnd,
    SessionStart,
    SessionEnd,
    NudgeShown,
    NudgeResponse,
    DoublingStart,
    DoublingStop,
}

impl EventKind {
    pub const ALL: [EventKind; 12] = [
        EventKind::AppFocus,
        EventKind::TabSwitch,
        EventKind::TabOpen,
        EventKind::TabClose,
        EventKind::IdleStart,
        EventKind::IdleEnd,
        EventKind::SessionStart,
        EventKind::SessionEnd,
        EventKind::NudgeShown,
        EventKind::NudgeResponse,
        EventKind::DoublingStart,
        EventKind::DoublingStop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::AppFocus => "app_focus",
            EventKind::TabSwitch => "tab_switch",
            EventKind::TabOpen => "tab_open",
            EventKind::TabClose => "tab_close",
            EventKind::IdleStart => "idle_start",
            EventKind::IdleEnd => "idle_end",
            EventKind::SessionStart => "session_start",
            EventKind::SessionEnd => "session_end",
            EventKind::NudgeShown => "nudge_shown",
            EventKind::NudgeResponse => "nudge_response",
            EventKind::DoublingStart => "doubling_start",
            EventKind::DoublingStop => "doubling_stop",
        }
    }

    pub fn requires_context(self) -> bool {
        matches!(
            self,
            EventKind::AppFocus | EventKind::TabSwitch | EventKind::TabOpen | EventKind::TabClose
        )
    }

    /// Focus changes: the events that move the user's attention to a context.
    pub fn is_focus(self) -> bool {
        matches!(self, EventKind::AppFocus | EventKind::TabSwitch)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = EventError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| EventError::UnknownKind(s.to_string()))
    }
}

/// Kind-specific data carried by nudge events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventPayload {
    NudgeResponse { nudge_id: u64, value: ResponseKind },
    NudgeShown { nudge_id: u64 },
}

/// One validated behavioral observation. Holds no plaintext labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityEvent {
    pub t: Millis,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ctx: Option<ContextRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<EventPayload>,
}

/// Context as it appears on the trace wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceContext {
    pub kind: ContextKind,
    pub label: String,
}

/// One line of a JSON Lines trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: Millis,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ctx: Option<TraceContext>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<serde_json::Value>,
}

impl TraceRecord {
    pub fn new(t: Millis, kind: EventKind) -> Self {
        TraceRecord {
            t,
            kind: kind.as_str().to_string(),
            ctx: None,
            payload: None,
        }
    }

    pub fn with_ctx(t: Millis, kind: EventKind, ctx_kind: ContextKind, label: &str) -> Self {
        TraceRecord {
            ctx: Some(TraceContext {
                kind: ctx_kind,
                label: label.to_string(),
            }),
            ..TraceRecord::new(t, kind)
        }
    }

    pub fn with_payload(mut self, payload: serde_json::Value) -> Self {
        self.payload = Some(payload);
        self
    }

    /// Serializes to a single JSON line without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace records always serialize")
    }
}

/// Output of [`validate_event`]: the hashed event plus the normalized label
/// that must be registered with the label map.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedEvent {
    pub event: ActivityEvent,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EventError {
    #[error("timestamp {t} precedes previous event at {last}")]
    NonMonotonicTimestamp { t: Millis, last: Millis },
    #[error("{kind} not allowed while idle={idle}")]
    IllegalIdleTransition { kind: EventKind, idle: bool },
    #[error("unknown event kind {0:?}")]
    UnknownKind(String),
    #[error("{0} requires a context")]
    MissingContext(EventKind),
    #[error("tab_close for context {0:#018x} that is not open")]
    TabNotOpen(u64),
    #[error("{0} before session_start")]
    SessionNotStarted(EventKind),
    #[error("session_start while a session is already active")]
    SessionAlreadyActive,
    #[error("invalid payload for {kind}: {reason}")]
    InvalidPayload { kind: EventKind, reason: String },
    #[error(transparent)]
    Context(#[from] ContextError),
}

/// Per-stream validation state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StreamState {
    last_t: Option<Millis>,
    in_session: bool,
    idle: bool,
    open_tabs: HashMap<u64, u32>,
}

impl StreamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last_t(&self) -> Option<Millis> {
        self.last_t
    }

    pub fn in_session(&self) -> bool {
        self.in_session
    }

    pub fn is_idle(&self) -> bool {
        self.idle
    }

    /// Number of open tabs, counting duplicates of the same origin.
    pub fn open_tab_count(&self) -> u32 {
        self.open_tabs.values().sum()
    }
}

/// Checks `record` against the stream invariants and, if it holds, advances
/// `state`. On error `state` is left untouched.
pub fn validate_event(
    record: &TraceRecord,
    state: &mut StreamState,
) -> Result<ValidatedEvent, EventError> {
    let kind: EventKind = record.kind.parse()?;
    if let Some(last) = state.last_t {
        if record.t < last {
            return Err(EventError::NonMonotonicTimestamp { t: record.t, last });
        }
    }
    match (kind, state.in_session) {
        (EventKind::SessionStart, true) => return Err(EventError::SessionAlreadyActive),
        (EventKind::SessionStart, false) => {}
        (k, false) => return Err(EventError::SessionNotStarted(k)),
        _ => {}
    }

    let (ctx, label) = match (&record.ctx, kind.requires_context()) {
        (Some(c), _) => {
            let (ctx, label) = ContextRef::from_label(c.kind, &c.label)?;
            (Some(ctx), Some(label))
        }
        (None, true) => return Err(EventError::MissingContext(kind)),
        (None, false) => (None, None),
    };

    match kind {
        EventKind::IdleStart if state.idle => {
            return Err(EventError::IllegalIdleTransition { kind, idle: true })
        }
        EventKind::IdleEnd if !state.idle => {
            return Err(EventError::IllegalIdleTransition { kind, idle: false })
        }
        EventKind::TabClose => {
            let id = ctx.expect("checked above").id;
            if state.open_tabs.get(&id).copied().unwrap_or(0) == 0 {
                return Err(EventError::TabNotOpen(id));
            }
        }
        _ => {}
    }

    let payload = parse_payload(kind, record.payload.as_ref())?;

    // Commit.
    state.last_t = Some(record.t);
    match kind {
        EventKind::SessionStart => {
            state.in_session = true;
            state.idle = false;
            state.open_tabs.clear();
        }
        EventKind::SessionEnd => {
            state.in_session = false;
            state.idle = false;
            state.open_tabs.clear();
        }
        EventKind::IdleStart => state.idle = true,
        EventKind::IdleEnd => state.idle = false,
        EventKind::TabOpen => {
            *state.open_tabs.entry(ctx.expect("checked").id).or_insert(0) += 1;
        }
        EventKind::TabClose => {
            let id = ctx.expect("checked").id;
            let n = state.open_tabs.get_mut(&id).expect("checked open");
            *n -= 1;
            if *n == 0 {
                state.open_tabs.remove(&id);
            }
        }
        _ => {}
    }

    Ok(ValidatedEvent {
        event: ActivityEvent {
            t: record.t,
            kind,
            ctx,
            payload,
        },
        label,
    })
}

fn parse_payload(
    kind: EventKind,
    raw: Option<&serde_json::Value>,
) -> Result<Option<EventPayload>, EventError> {
    let invalid = |reason: String| EventError::InvalidPayload { kind, reason };
    match kind {
        EventKind::NudgeShown | EventKind::NudgeResponse => {
            let raw = raw.ok_or_else(|| invalid("missing payload".into()))?;
            let parsed: EventPayload =
                serde_json::from_value(raw.clone()).map_err(|e| invalid(e.to_string()))?;
            match (kind, parsed) {
                (EventKind::NudgeShown, EventPayload::NudgeResponse { nudge_id, .. }) => {
                    Ok(Some(EventPayload::NudgeShown { nudge_id }))
                }
                (EventKind::NudgeResponse, EventPayload::NudgeShown { .. }) => {
                    Err(invalid("missing response value".into()))
                }
                (_, p) => Ok(Some(p)),
            }
        }
        _ => Ok(None),
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: EventError,
    },
    #[error("replay speed must be a finite number >= 0, got {0}")]
    InvalidSpeed(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ReplayError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ReplayError::Parse { line, .. } | ReplayError::Invalid { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// Iterator over a JSON Lines trace, validating as it goes. Stops after the
/// first error.
pub struct Replay<R> {
    reader: R,
    speed: f64,
    state: StreamState,
    line: usize,
    prev_t: Option<Millis>,
    done: bool,
    buf: String,
}

/// Replays a trace. `speed` scales the recorded inter-event gaps in wall-clock
/// time (2.0 = twice as fast); `0` emits without delay.
pub fn replay_trace<R: BufRead>(reader: R, speed: f64) -> Result<Replay<R>, ReplayError> {
    if !speed.is_finite() || speed < 0.0 {
        return Err(ReplayError::InvalidSpeed(speed));
    }
    Ok(Replay {
        reader,
        speed,
        state: StreamState::new(),
        line: 0,
        prev_t: None,
        done: false,
        buf: String::new(),
    })
}

impl<R> Replay<R> {
    pub fn stream_state(&self) -> &StreamState {
        &self.state
    }
}

impl<R: BufRead> Iterator for Replay<R> {
    type Item = Result<ValidatedEvent, ReplayError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            }
            self.line += 1;
            let text = self.buf.trim_end_matches(['\n', '\r']);
            if text.trim().is_empty() {
                continue;
            }
            let record: TraceRecord = match serde_json::from_str(text) {
                Ok(r) => r,
                Err(source) => {
                    self.done = true;
                    return Some(Err(ReplayError::Parse {
                        line: self.line,
                        source,
                    }));
                }
            };
            let validated = match validate_event(&record, &mut self.state) {
                Ok(v) => v,
                Err(source) => {
                    self.done = true;
                    return Some(Err(ReplayError::Invalid {
                        line: self.line,
                        source,
                    }));
                }
            };
            if self.speed > 0.0 {
                if let Some(prev) = self.prev_t {
                    let gap_ms = (record.t - prev) as f64 / self.speed;
                    if gap_ms >= 1.0 {
                        std::thread::sleep(Duration::from_micros((gap_ms * 1000.0) as u64));
                    }
                }
            }
            self.prev_t = Some(record.t);
            return Some(Ok(validated));
        }
    }
}
