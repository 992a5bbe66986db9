//! Sliding-window behavioral features.
//!
//! The window covers `(now - W, now]`. Everything except `open_tab_count`,
//! `longest_dwell_s` and `active_since_break_s` is computed from events inside
//! the window; those three carry session-level state:
//!
//! * `open_tab_count` is opens minus closes since `session_start`.
//! * A focus *run* starts at a focus change (or at `idle_end` on the focused
//!   context) and ends at the next focus change to a different context, at
//!   `idle_start`, or at `session_end`. `longest_dwell_s` is the full length
//!   of the longest run that overlaps the window, so a single uninterrupted
//!   stretch can exceed `W`.
//! * `active_since_break_s` counts from the end of the last idle span of at
//!   least `break_idle_ms` (or from `session_start`); it reads 0 once the
//!   current idle span reaches that length.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::events::{ActivityEvent, EventKind, Millis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub window_ms: Millis,
    pub break_idle_ms: Millis,
    /// Focus entries to the same context within the window that make it
    /// "reopened".
    pub reopen_threshold: u32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window_ms: 300_000,
            break_idle_ms: 180_000,
            reopen_threshold: 3,
        }
    }
}

pub const DEFAULT_OVERLOAD_TABS: u32 = 21;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub window_end: Millis,
    pub tab_switch_rate: f64,
    pub app_switch_rate: f64,
    pub idle_fraction: f64,
    pub longest_dwell_s: f64,
    pub distinct_contexts: u32,
    pub open_tab_count: u32,
    pub reopened_count: u32,
    pub active_since_break_s: f64,
}

impl FeatureVector {
    pub const DIMS: usize = 8;

    pub fn to_array(&self) -> [f64; Self::DIMS] {
        [
            self.tab_switch_rate,
            self.app_switch_rate,
            self.idle_fraction,
            self.longest_dwell_s,
            f64::from(self.distinct_contexts),
            f64::from(self.open_tab_count),
            f64::from(self.reopened_count),
            self.active_since_break_s,
        ]
    }

    /// Short-horizon behavior mix used for anomaly scoring. Leaves out the
    /// cumulative quantities (dwell, activity, open tabs) that grow with time.
    pub fn anomaly_features(&self) -> [f64; 5] {
        [
            self.tab_switch_rate,
            self.app_switch_rate,
            self.idle_fraction,
            f64::from(self.distinct_contexts),
            f64::from(self.reopened_count),
        ]
    }
}

/// True when the open-tab count reaches `threshold` (21 by default).
pub fn overload_flag(fv: &FeatureVector, threshold: u32) -> bool {
    fv.open_tab_count >= threshold
}

#[derive(Debug, Clone, Copy)]
struct Run {
    end: Millis,
    len: Millis,
}

/// Incremental window state. Single writer; [`FeatureWindow::snapshot`] is a
/// pure read.
#[derive(Debug, Clone)]
pub struct FeatureWindow {
    cfg: FeatureConfig,
    in_session: bool,
    tab_switches: VecDeque<Millis>,
    app_focuses: VecDeque<Millis>,
    focus_entries: VecDeque<(Millis, u64)>,
    focus_counts: HashMap<u64, u32>,
    reopened: u32,
    idle_spans: VecDeque<(Millis, Millis)>,
    idle_total: Millis,
    idle_since: Option<Millis>,
    // Completed runs kept as a sliding-maximum queue: ends ascending,
    // lengths strictly descending.
    runs: VecDeque<Run>,
    current: Option<u64>,
    run_start: Option<Millis>,
    activity_start: Option<Millis>,
    open_tabs: u32,
}

impl Default for FeatureWindow {
    fn default() -> Self {
        Self::new(FeatureConfig::default())
    }
}

impl FeatureWindow {
    pub fn new(cfg: FeatureConfig) -> Self {
        FeatureWindow {
            cfg,
            in_session: false,
            tab_switches: VecDeque::new(),
            app_focuses: VecDeque::new(),
            focus_entries: VecDeque::new(),
            focus_counts: HashMap::new(),
            reopened: 0,
            idle_spans: VecDeque::new(),
            idle_total: 0,
            idle_since: None,
            runs: VecDeque::new(),
            current: None,
            run_start: None,
            activity_start: None,
            open_tabs: 0,
        }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn is_idle(&self) -> bool {
        self.idle_since.is_some()
    }

    /// Drops all window contents but keeps the session alive with the given
    /// open-tab count, as after a purge.
    pub fn reset_keeping_session(&mut self, now: Millis, open_tabs: u32, idle: bool) {
        let in_session = self.in_session;
        *self = FeatureWindow::new(self.cfg);
        self.in_session = in_session;
        self.open_tabs = open_tabs;
        if in_session {
            self.activity_start = Some(now);
            if idle {
                self.idle_since = Some(now);
            }
        }
    }

    fn evict(&mut self, cutoff: Millis) {
        while self.tab_switches.front().is_some_and(|&t| t <= cutoff) {
            self.tab_switches.pop_front();
        }
        while self.app_focuses.front().is_some_and(|&t| t <= cutoff) {
            self.app_focuses.pop_front();
        }
        while let Some(&(t, id)) = self.focus_entries.front() {
            if t > cutoff {
                break;
            }
            self.focus_entries.pop_front();
            let n = self.focus_counts.get_mut(&id).expect("counted on push");
            if *n == self.cfg.reopen_threshold {
                self.reopened -= 1;
            }
            *n -= 1;
            if *n == 0 {
                self.focus_counts.remove(&id);
            }
        }
        while let Some(&(s, e)) = self.idle_spans.front() {
            if e > cutoff {
                break;
            }
            self.idle_spans.pop_front();
            self.idle_total -= e - s;
        }
        while self.runs.front().is_some_and(|r| r.end <= cutoff) {
            self.runs.pop_front();
        }
    }

    fn close_run(&mut self, t: Millis) {
        if let Some(start) = self.run_start.take() {
            let len = t - start;
            while self.runs.back().is_some_and(|r| r.len <= len) {
                self.runs.pop_back();
            }
            self.runs.push_back(Run { end: t, len });
        }
    }

    fn close_idle(&mut self, t: Millis) {
        if let Some(s) = self.idle_since.take() {
            if t > s {
                self.idle_spans.push_back((s, t));
                self.idle_total += t - s;
            }
            if t - s >= self.cfg.break_idle_ms {
                self.activity_start = Some(t);
            }
        }
    }

    /// Folds one validated event into the window. Amortized O(1).
    pub fn update(&mut self, e: &ActivityEvent) {
        self.evict(e.t - self.cfg.window_ms);
        match e.kind {
            EventKind::SessionStart => {
                *self = FeatureWindow::new(self.cfg);
                self.in_session = true;
                self.activity_start = Some(e.t);
            }
            EventKind::SessionEnd => {
                self.close_run(e.t);
                self.close_idle(e.t);
                self.in_session = false;
                self.current = None;
                self.activity_start = None;
                self.open_tabs = 0;
            }
            EventKind::AppFocus | EventKind::TabSwitch => {
                let Some(ctx) = e.ctx else { return };
                if e.kind == EventKind::TabSwitch {
                    self.tab_switches.push_back(e.t);
                } else {
                    self.app_focuses.push_back(e.t);
                }
                self.focus_entries.push_back((e.t, ctx.id));
                let n = self.focus_counts.entry(ctx.id).or_insert(0);
                *n += 1;
                if *n == self.cfg.reopen_threshold {
                    self.reopened += 1;
                }
                let continuing = self.current == Some(ctx.id) && self.run_start.is_some();
                if !continuing {
                    self.close_run(e.t);
                    self.current = Some(ctx.id);
                    if self.idle_since.is_none() {
                        self.run_start = Some(e.t);
                    }
                }
            }
            EventKind::TabOpen => self.open_tabs += 1,
            EventKind::TabClose => self.open_tabs = self.open_tabs.saturating_sub(1),
            EventKind::IdleStart => {
                self.close_run(e.t);
                self.idle_since = Some(e.t);
            }
            EventKind::IdleEnd => {
                self.close_idle(e.t);
                if self.current.is_some() {
                    self.run_start = Some(e.t);
                }
            }
            _ => {}
        }
    }

    /// Feature vector for the window ending at `now` (`now` must not precede
    /// the last update). Does not mutate.
    pub fn snapshot(&self, now: Millis) -> FeatureVector {
        let w = self.cfg.window_ms;
        let cutoff = now - w;
        let per_min = 60_000.0 / w as f64;

        let in_window = |q: &VecDeque<Millis>| q.len() - q.partition_point(|&t| t <= cutoff);
        let tab_switch_rate = in_window(&self.tab_switches) as f64 * per_min;
        let app_switch_rate = in_window(&self.app_focuses) as f64 * per_min;

        // Entries at or before the cutoff that have not been evicted yet.
        let mut stale: HashMap<u64, u32> = HashMap::new();
        for &(t, id) in &self.focus_entries {
            if t > cutoff {
                break;
            }
            *stale.entry(id).or_insert(0) += 1;
        }
        let mut distinct = self.focus_counts.len() as u32;
        let mut reopened = self.reopened;
        for (id, d) in &stale {
            let n = self.focus_counts[id];
            if n == *d {
                distinct -= 1;
            }
            if n >= self.cfg.reopen_threshold && n - d < self.cfg.reopen_threshold {
                reopened -= 1;
            }
        }

        let mut idle = self.idle_total;
        for &(s, e) in &self.idle_spans {
            if s >= cutoff {
                break;
            }
            idle -= e.min(cutoff) - s;
        }
        if let Some(s) = self.idle_since {
            idle += now - s.max(cutoff);
        }
        let idle_fraction = (idle as f64 / w as f64).clamp(0.0, 1.0);

        let mut longest = self
            .runs
            .iter()
            .find(|r| r.end > cutoff)
            .map_or(0, |r| r.len);
        if let Some(s) = self.run_start {
            longest = longest.max(now - s);
        }

        let active = match (self.activity_start, self.idle_since) {
            (None, _) => 0,
            (Some(_), Some(s)) if now - s >= self.cfg.break_idle_ms => 0,
            (Some(a), _) => now - a,
        };

        FeatureVector {
            window_end: now,
            tab_switch_rate,
            app_switch_rate,
            idle_fraction,
            longest_dwell_s: longest as f64 / 1000.0,
            distinct_contexts: distinct,
            open_tab_count: self.open_tabs,
            reopened_count: reopened,
            active_since_break_s: active.max(0) as f64 / 1000.0,
        }
    }
}
