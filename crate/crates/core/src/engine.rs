//! The single-writer engine: validates events, extracts features on a fixed
//! tick, classifies, and drives nudges, body-doubling cues and persistence.
//!
//! Time is whatever the caller says it is. Events and [`Engine::advance_to`]
//! move the clock forward; timers (feature ticks, cue due times, nudge
//! expiry) fire in time order, ties broken as tick, cue, expiry.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::doubling::{Cue, Doubling, DoublingError, DoublingSummary};
use crate::events::{
    validate_event, ActivityEvent, ContextRef, EventError, EventKind, EventPayload, LabelHandle, Millis,
    StreamState, TraceRecord,
};
use crate::features::{FeatureConfig, FeatureVector, FeatureWindow};
use crate::inference::{classify, AnomalyDetector, AttentionState, DetectorConfig, IsolationForestModel};
use crate::nudge::{self, BanditState, Nudge, NudgeError, NudgeKind, Preference, ResponseKind, ResponseOutcome};
use crate::recall::{LabelResolver, NoLabels, RecallConfig, RecallEntry, RecallTrail};
use crate::store::{iso_week_of, PurgeReport, RecordKind, Store, StoreError, WeeklySummary};

pub const DEFAULT_TICK_MS: Millis = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub features: FeatureConfig,
    pub detector: DetectorConfig,
    pub recall: RecallConfig,
    pub tick_ms: Millis,
    pub seed: u64,
    /// Append every validated activity event to the store.
    pub persist_events: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            features: FeatureConfig::default(),
            detector: DetectorConfig::default(),
            recall: RecallConfig::default(),
            tick_ms: DEFAULT_TICK_MS,
            seed: 0,
            persist_events: true,
        }
    }
}

/// Everything the engine pushes to subscribers.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    State(AttentionState),
    Nudge(Nudge),
    Cue(Cue),
    NudgeResolved { nudge_id: u64, value: ResponseKind },
    SummaryReady { week: String },
}

impl Outbound {
    pub fn event_name(&self) -> &'static str {
        match self {
            Outbound::State(_) => "state",
            Outbound::Nudge(_) => "nudge",
            Outbound::Cue(_) => "cue",
            Outbound::NudgeResolved { .. } => "nudge_resolved",
            Outbound::SummaryReady { .. } => "summary_ready",
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Nudge(#[from] NudgeError),
    #[error(transparent)]
    Doubling(#[from] DoublingError),
}

/// Validation, windowing, anomaly scoring and classification for one stream.
#[derive(Debug, Clone)]
pub struct Pipeline {
    validator: StreamState,
    window: FeatureWindow,
    detector: AnomalyDetector,
    state: AttentionState,
    last_fv: FeatureVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickResult {
    pub fv: FeatureVector,
    pub state: AttentionState,
    pub changed: bool,
    /// The detector produced a new model on this tick.
    pub refit: bool,
}

impl Pipeline {
    pub fn new(features: FeatureConfig, detector: AnomalyDetector) -> Self {
        Pipeline {
            validator: StreamState::new(),
            window: FeatureWindow::new(features),
            detector,
            state: AttentionState::focused(0),
            last_fv: FeatureVector::default(),
        }
    }

    pub fn state(&self) -> &AttentionState {
        &self.state
    }

    pub fn last_features(&self) -> &FeatureVector {
        &self.last_fv
    }

    pub fn stream(&self) -> &StreamState {
        &self.validator
    }

    pub fn window(&self) -> &FeatureWindow {
        &self.window
    }

    pub fn detector(&self) -> &AnomalyDetector {
        &self.detector
    }

    pub fn ingest(&mut self, rec: &TraceRecord) -> Result<crate::events::ValidatedEvent, EventError> {
        let v = validate_event(rec, &mut self.validator)?;
        self.window.update(&v.event);
        if v.event.kind == EventKind::SessionStart {
            self.state = AttentionState::focused(v.event.t);
        }
        Ok(v)
    }

    pub fn tick(&mut self, now: Millis, th: &crate::inference::RuleThresholds) -> TickResult {
        let fv = self.window.snapshot(now);
        let refit = self.detector.observe(&fv);
        let score = self.detector.score(&fv).unwrap_or(0.0);
        let next = classify(&fv, score, &self.state, th);
        let changed = next.label != self.state.label;
        self.state = next;
        self.last_fv = fv;
        TickResult {
            fv,
            state: next,
            changed,
            refit,
        }
    }

    /// Clears derived state while keeping the validated session open.
    pub fn reset_derived(&mut self, now: Millis, detector: AnomalyDetector) {
        let tabs = self.validator.open_tab_count();
        self.window
            .reset_keeping_session(now, tabs, self.validator.is_idle());
        self.detector = detector;
        self.state = AttentionState::focused(now);
        self.last_fv = FeatureVector::default();
    }
}

pub struct Engine {
    cfg: EngineConfig,
    prefs: Preference,
    pipeline: Pipeline,
    bandit: BanditState,
    doubling: Doubling,
    recall: RecallTrail,
    store: Option<Store>,
    /// Labels seen while running without a store; memory only.
    mem_labels: HashMap<LabelHandle, String>,
    focus: Option<(ContextRef, Millis)>,
    last_ctx: Option<ContextRef>,
    last_nudge_at: Option<Millis>,
    next_tick: Option<Millis>,
    clock: Millis,
    draws: u64,
    outbox: Vec<Outbound>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("clock", &self.clock)
            .field("state", self.pipeline.state())
            .finish_non_exhaustive()
    }
}

impl Engine {
    /// Builds an engine. With a store, the most recent saved preferences
    /// override `prefs`.
    pub fn new(cfg: EngineConfig, prefs: Preference, store: Option<Store>) -> Result<Self, EngineError> {
        let mut prefs = prefs;
        if let Some(s) = &store {
            if let Some(saved) = load_preferences(s)? {
                prefs = saved;
            }
        }
        prefs.validate()?;
        Ok(Engine {
            pipeline: Pipeline::new(cfg.features, AnomalyDetector::new(cfg.detector)),
            recall: RecallTrail::new(cfg.recall),
            cfg,
            prefs,
            bandit: BanditState::new(),
            doubling: Doubling::default(),
            store,
            mem_labels: HashMap::new(),
            focus: None,
            last_ctx: None,
            last_nudge_at: None,
            next_tick: None,
            clock: Millis::MIN,
            draws: 0,
            outbox: Vec::new(),
        })
    }

    /// Replaces the online detector with a fixed, pre-fitted model.
    pub fn with_model(mut self, model: IsolationForestModel) -> Self {
        self.pipeline.detector = AnomalyDetector::with_model(model);
        self
    }

    pub fn state(&self) -> &AttentionState {
        self.pipeline.state()
    }

    pub fn features(&self) -> &FeatureVector {
        self.pipeline.last_features()
    }

    pub fn preferences(&self) -> &Preference {
        &self.prefs
    }

    pub fn bandit(&self) -> &BanditState {
        &self.bandit
    }

    pub fn doubling(&self) -> &Doubling {
        &self.doubling
    }

    pub fn recall(&self) -> &RecallTrail {
        &self.recall
    }

    pub fn store(&self) -> Option<&Store> {
        self.store.as_ref()
    }

    pub fn clock(&self) -> Millis {
        self.clock
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    fn seed(&mut self) -> u64 {
        self.draws += 1;
        self.cfg.seed ^ self.draws.wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }

    fn persist(&mut self, t: Millis, kind: RecordKind, body: serde_json::Value) -> Result<(), EngineError> {
        if let Some(s) = self.store.as_mut() {
            s.append(t, kind, body)?;
        }
        Ok(())
    }

    fn labels(&self) -> &dyn LabelResolver {
        match &self.store {
            Some(s) => s,
            None if self.mem_labels.is_empty() => &NoLabels,
            None => &self.mem_labels,
        }
    }

    fn next_timer(&self) -> Option<(Millis, u8)> {
        let tick = self.next_tick.map(|t| (t, 0));
        let cue = self.doubling.session().map(|s| (s.next_cue_at, 1));
        let expiry = self.bandit.outstanding().map(|n| n.expires_at).min().map(|t| (t, 2));
        [tick, cue, expiry].into_iter().flatten().min()
    }

    fn run_timers(&mut self, until: Millis, inclusive: bool) -> Result<(), EngineError> {
        while let Some((t, which)) = self.next_timer() {
            if t > until || (!inclusive && t == until) {
                break;
            }
            self.clock = self.clock.max(t);
            match which {
                0 => self.on_tick(t)?,
                1 => self.on_cue_timer(t)?,
                _ => self.on_expiry(t)?,
            }
        }
        Ok(())
    }

    fn take_outbox(&mut self) -> Vec<Outbound> {
        std::mem::take(&mut self.outbox)
    }

    /// Fires every timer due at or before `t`.
    pub fn advance_to(&mut self, t: Millis) -> Result<Vec<Outbound>, EngineError> {
        if t < self.clock {
            return Ok(Vec::new());
        }
        self.run_timers(t, true)?;
        self.clock = t;
        Ok(self.take_outbox())
    }

    /// Ingests one trace record. Timers due strictly before it fire first.
    pub fn ingest(&mut self, rec: &TraceRecord) -> Result<Vec<Outbound>, EngineError> {
        if let Some(last) = self.pipeline.stream().last_t() {
            if rec.t < last {
                return Err(EventError::NonMonotonicTimestamp { t: rec.t, last }.into());
            }
        }
        self.run_timers(rec.t, false)?;
        let v = self.pipeline.ingest(rec)?;
        self.clock = self.clock.max(rec.t);
        if let (Some(label), Some(ctx)) = (&v.label, v.event.ctx) {
            match self.store.as_mut() {
                Some(s) => s.register_label(ctx.handle, label)?,
                None => {
                    self.mem_labels.entry(ctx.handle).or_insert_with(|| label.clone());
                }
            }
        }
        if self.cfg.persist_events {
            let body = serde_json::to_value(&v.event).expect("events serialize");
            self.persist(v.event.t, RecordKind::Event, body)?;
        }
        self.apply(&v.event)?;
        Ok(self.take_outbox())
    }

    fn close_focus(&mut self, t: Millis) {
        if let Some((ctx, start)) = self.focus.take() {
            self.recall.record_context(ctx, start, t);
        }
    }

    fn apply(&mut self, e: &ActivityEvent) -> Result<(), EngineError> {
        let t = e.t;
        match e.kind {
            EventKind::SessionStart => {
                self.next_tick = Some(t + self.cfg.tick_ms);
                self.emit_state(t)?;
            }
            EventKind::SessionEnd => {
                self.close_focus(t);
                self.last_ctx = None;
                self.next_tick = None;
                self.outbox.push(Outbound::SummaryReady {
                    week: iso_week_of(t, self.prefs.utc_offset_minutes),
                });
            }
            EventKind::AppFocus | EventKind::TabSwitch => {
                if let Some(ctx) = e.ctx {
                    if self.focus.is_none_or(|(c, _)| c.id != ctx.id) {
                        self.close_focus(t);
                        self.focus = Some((ctx, t));
                    }
                    self.last_ctx = Some(ctx);
                }
            }
            EventKind::IdleStart => self.close_focus(t),
            EventKind::IdleEnd => self.focus = self.last_ctx.map(|c| (c, t)),
            EventKind::NudgeResponse => {
                if let Some(EventPayload::NudgeResponse { nudge_id, value }) = e.payload {
                    // Responses for nudges this engine never showed are history only.
                    let _ = self.respond(nudge_id, value, t);
                }
            }
            EventKind::DoublingStart => {
                let _ = self.doubling_start(t);
            }
            EventKind::DoublingStop => {
                let _ = self.doubling_stop(t);
            }
            _ => {}
        }
        Ok(())
    }

    fn emit_state(&mut self, t: Millis) -> Result<(), EngineError> {
        let st = *self.pipeline.state();
        self.persist(t, RecordKind::StateChange, serde_json::to_value(st).expect("state serializes"))?;
        self.outbox.push(Outbound::State(st));
        Ok(())
    }

    fn on_tick(&mut self, t: Millis) -> Result<(), EngineError> {
        self.next_tick = Some(t + self.cfg.tick_ms);
        let th = self.prefs.thresholds;
        let r = self.pipeline.tick(t, &th);
        if r.refit {
            if let Some(m) = self.pipeline.detector().model() {
                let blob = hex::encode(m.to_bytes());
                self.persist(t, RecordKind::Model, json!({ "iforest": blob }))?;
            }
        }
        if r.changed {
            self.emit_state(t)?;
        }
        let seed = self.seed();
        if let Some(mut n) = nudge::evaluate(&r.state, &r.fv, &self.prefs, &self.bandit, t, self.last_nudge_at, seed) {
            if n.kind == NudgeKind::WherewasiOffer {
                if let Some(p) = self.recall.resume_prompt(self.labels()) {
                    n.text = p;
                }
            }
            self.bandit.register(&mut n);
            self.last_nudge_at = Some(t);
            self.persist(t, RecordKind::Nudge, serde_json::to_value(&n).expect("nudge serializes"))?;
            self.outbox.push(Outbound::Nudge(n));
        }
        // Check-ins ride on the tick; affirmations have their own timer.
        if self.doubling.is_active() {
            self.doubling_cues(t)?;
        }
        Ok(())
    }

    fn on_cue_timer(&mut self, t: Millis) -> Result<(), EngineError> {
        self.doubling_cues(t)
    }

    fn doubling_cues(&mut self, t: Millis) -> Result<(), EngineError> {
        let state = *self.pipeline.state();
        let fv = *self.pipeline.last_features();
        let threshold = self.cfg.features.reopen_threshold;
        let Some(s) = self.doubling.session_mut() else {
            return Ok(());
        };
        let cues = s.next_cue(t, &state, &fv, &self.prefs, threshold);
        for c in cues {
            self.persist(t, RecordKind::Cue, serde_json::to_value(&c).expect("cue serializes"))?;
            self.outbox.push(Outbound::Cue(c));
        }
        Ok(())
    }

    fn on_expiry(&mut self, t: Millis) -> Result<(), EngineError> {
        for id in self.bandit.expired(t) {
            self.resolve(id, ResponseKind::Ignored, t)?;
        }
        Ok(())
    }

    fn resolve(&mut self, id: u64, value: ResponseKind, now: Millis) -> Result<ResponseOutcome, EngineError> {
        let created = self
            .bandit
            .outstanding()
            .find(|n| n.id == id)
            .map(|n| n.created_at);
        let latency = created.map_or(0, |c| now - c);
        let out = self.bandit.record_response(id, value, latency, now)?;
        self.persist(
            now,
            RecordKind::Response,
            json!({ "nudge_id": id, "value": value, "latency_ms": latency }),
        )?;
        self.outbox.push(Outbound::NudgeResolved { nudge_id: id, value });
        Ok(out)
    }

    /// Records a user response to a shown nudge.
    pub fn respond(&mut self, id: u64, value: ResponseKind, now: Millis) -> Result<ResponseOutcome, EngineError> {
        let now = now.max(self.clock);
        self.run_timers(now, false)?;
        self.clock = now;
        self.resolve(id, value, now)
    }

    /// Drains outbound events produced by calls that do not return them.
    pub fn drain(&mut self) -> Vec<Outbound> {
        self.take_outbox()
    }

    pub fn set_preferences(&mut self, prefs: Preference, now: Millis) -> Result<(), EngineError> {
        prefs.validate()?;
        let body = serde_json::to_value(&prefs).expect("preferences serialize");
        self.persist(now.max(self.clock), RecordKind::Preferences, body)?;
        self.prefs = prefs;
        Ok(())
    }

    pub fn doubling_start(&mut self, now: Millis) -> Result<Millis, EngineError> {
        let seed = self.seed();
        let s = self.doubling.start(&self.prefs, now, seed)?;
        Ok(s.next_cue_at)
    }

    pub fn doubling_stop(&mut self, now: Millis) -> Result<DoublingSummary, EngineError> {
        Ok(self.doubling.stop(now)?)
    }

    pub fn resume_prompt(&self) -> Option<String> {
        self.recall.resume_prompt(self.labels())
    }

    /// The entry the resume prompt offers to return to.
    pub fn recall_target(&self) -> Option<RecallEntry> {
        let e = self.recall.entries();
        match e.len() {
            0 => None,
            1 => e.back().copied(),
            n => Some(e[n - 2]),
        }
    }

    pub fn resolve_label(&self, handle: LabelHandle) -> Option<String> {
        self.labels().resolve(handle)
    }

    pub fn purge_request(&mut self) -> Option<String> {
        self.store.as_mut().map(Store::purge_request)
    }

    /// Erases persisted data and every derived in-memory model, keeping the
    /// current session open.
    pub fn purge(&mut self, token: &str, now: Millis) -> Result<PurgeReport, EngineError> {
        let report = match self.store.as_mut() {
            Some(s) => s.purge(token)?,
            None => return Err(StoreError::BadToken.into()),
        };
        let now = now.max(self.clock);
        self.pipeline
            .reset_derived(now, AnomalyDetector::new(self.cfg.detector));
        self.bandit = BanditState::new();
        self.recall.clear();
        self.mem_labels.clear();
        self.focus = self.last_ctx.filter(|_| !self.pipeline.stream().is_idle()).map(|c| (c, now));
        self.outbox.push(Outbound::State(*self.pipeline.state()));
        Ok(report)
    }

    pub fn weekly_summary(&self, week: &str) -> Result<WeeklySummary, EngineError> {
        match &self.store {
            Some(s) => Ok(s.weekly_summary(week, self.prefs.utc_offset_minutes, Some(s))?),
            None => Ok(crate::store::summarize_records(&[], week, self.prefs.utc_offset_minutes, None)?),
        }
    }
}

fn load_preferences(store: &Store) -> Result<Option<Preference>, EngineError> {
    let scan = store.scan_all()?;
    Ok(scan
        .records
        .iter()
        .rev()
        .find(|r| r.kind == RecordKind::Preferences)
        .and_then(|r| serde_json::from_value(r.body.clone()).ok()))
}
