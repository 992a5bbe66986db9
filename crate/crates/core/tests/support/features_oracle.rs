//! Independent feature oracle shared by the property and acceptance tests.

use std::collections::HashMap;

use focusloom_core::events::{validate_event, ActivityEvent, ContextKind, EventKind, Millis, StreamState, TraceRecord};
use focusloom_core::features::{FeatureConfig, FeatureVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const APPS: [&str; 4] = ["editor", "mail", "chat", "shell"];
const TABS: [&str; 4] = ["https://a.test/x", "https://b.test/", "https://c.test/?q=1", "https://a.test/y"];

/// Random valid event stream: focus churn over a small context set, idle
/// spans of varied length, tab opens and closes, occasional session
/// restarts. Returns the events and a set of probe times.
pub fn random_stream(seed: u64) -> (Vec<ActivityEvent>, Vec<Millis>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = StreamState::new();
    let mut out = Vec::new();
    let mut probes = Vec::new();
    let mut open: Vec<&str> = Vec::new();
    let mut t: Millis = rng.random_range(0..1_000_000);
    let push = |rec: TraceRecord, st: &mut StreamState, out: &mut Vec<ActivityEvent>| {
        out.push(validate_event(&rec, st).expect("generator emits valid events").event);
    };
    push(TraceRecord::new(t, EventKind::SessionStart), &mut st, &mut out);
    let n = rng.random_range(1..120);
    for _ in 0..n {
        t += match rng.random_range(0..10) {
            0 => rng.random_range(100_000..400_000),
            1 => 0,
            _ => rng.random_range(1..20_000),
        };
        if rng.random_bool(0.3) {
            probes.push(t);
        }
        let rec = match rng.random_range(0..12) {
            0..=3 => TraceRecord::with_ctx(t, EventKind::AppFocus, ContextKind::App, APPS[rng.random_range(0..4)]),
            4..=6 => TraceRecord::with_ctx(t, EventKind::TabSwitch, ContextKind::Tab, TABS[rng.random_range(0..4)]),
            7 => {
                let l = TABS[rng.random_range(0..4)];
                open.push(l);
                TraceRecord::with_ctx(t, EventKind::TabOpen, ContextKind::Tab, l)
            }
            8 if !open.is_empty() => {
                let l = open.swap_remove(rng.random_range(0..open.len()));
                TraceRecord::with_ctx(t, EventKind::TabClose, ContextKind::Tab, l)
            }
            9 | 10 => {
                if st.is_idle() {
                    TraceRecord::new(t, EventKind::IdleEnd)
                } else {
                    TraceRecord::new(t, EventKind::IdleStart)
                }
            }
            _ => {
                if rng.random_bool(0.5) {
                    continue;
                }
                push(TraceRecord::new(t, EventKind::SessionEnd), &mut st, &mut out);
                open.clear();
                if rng.random_bool(0.3) {
                    probes.push(t + rng.random_range(0..100_000));
                    break;
                }
                t += rng.random_range(0..50_000);
                TraceRecord::new(t, EventKind::SessionStart)
            }
        };
        push(rec, &mut st, &mut out);
    }
    let last = out.last().expect("session_start").t;
    probes.retain(|&p| p >= last);
    probes.push(last);
    probes.push(last + rng.random_range(0..600_000));
    probes.sort();
    (out, probes)
}

/// Recomputes every feature from the raw event list, with no state carried
/// between calls.
pub fn batch(events: &[ActivityEvent], now: Millis, cfg: &FeatureConfig) -> FeatureVector {
    let w = cfg.window_ms;
    let cutoff = now - w;
    let from = events.iter().rposition(|e| e.kind == EventKind::SessionStart).unwrap_or(0);
    let evs = &events[from..];
    let inside = |e: &&ActivityEvent| e.t > cutoff && e.t <= now;
    let per_min = 60_000.0 / w as f64;

    let count = |k: EventKind| evs.iter().filter(inside).filter(|e| e.kind == k).count();
    let mut focus_counts: HashMap<u64, u32> = HashMap::new();
    for e in evs.iter().filter(inside).filter(|e| e.kind.is_focus()) {
        *focus_counts.entry(e.ctx.unwrap().id).or_default() += 1;
    }

    // Idle spans, runs and activity, replayed from the session start.
    let mut idle_spans = Vec::new();
    let mut idle_since = None;
    let mut runs = Vec::new();
    let mut current = None;
    let mut run_start = None;
    let mut activity = None;
    let mut tabs: u32 = 0;
    for e in evs {
        let mut close_idle = |t: Millis, idle_since: &mut Option<Millis>, activity: &mut Option<Millis>| {
            if let Some(s) = idle_since.take() {
                idle_spans.push((s, t));
                if t - s >= cfg.break_idle_ms {
                    *activity = Some(t);
                }
            }
        };
        match e.kind {
            EventKind::SessionStart => {
                activity = Some(e.t);
            }
            EventKind::SessionEnd => {
                if let Some(s) = run_start.take() {
                    runs.push((s, e.t));
                }
                close_idle(e.t, &mut idle_since, &mut activity);
                current = None;
                activity = None;
                tabs = 0;
            }
            EventKind::AppFocus | EventKind::TabSwitch => {
                let id = e.ctx.unwrap().id;
                if !(current == Some(id) && run_start.is_some()) {
                    if let Some(s) = run_start.take() {
                        runs.push((s, e.t));
                    }
                    current = Some(id);
                    if idle_since.is_none() {
                        run_start = Some(e.t);
                    }
                }
            }
            EventKind::TabOpen => tabs += 1,
            EventKind::TabClose => tabs = tabs.saturating_sub(1),
            EventKind::IdleStart => {
                if let Some(s) = run_start.take() {
                    runs.push((s, e.t));
                }
                idle_since = Some(e.t);
            }
            EventKind::IdleEnd => {
                close_idle(e.t, &mut idle_since, &mut activity);
                if current.is_some() {
                    run_start = Some(e.t);
                }
            }
            _ => {}
        }
    }
    let overlap = |s: Millis, e: Millis| (e.min(now) - s.max(cutoff)).max(0);
    let mut idle: Millis = idle_spans.iter().map(|&(s, e)| overlap(s, e)).sum();
    if let Some(s) = idle_since {
        idle += overlap(s, now);
    }
    let mut longest = runs.iter().filter(|r| r.1 > cutoff).map(|r| r.1 - r.0).max().unwrap_or(0);
    if let Some(s) = run_start {
        longest = longest.max(now - s);
    }
    let active = match (activity, idle_since) {
        (None, _) => 0,
        (Some(_), Some(s)) if now - s >= cfg.break_idle_ms => 0,
        (Some(a), _) => now - a,
    };
    FeatureVector {
        window_end: now,
        tab_switch_rate: count(EventKind::TabSwitch) as f64 * per_min,
        app_switch_rate: count(EventKind::AppFocus) as f64 * per_min,
        idle_fraction: (idle as f64 / w as f64).clamp(0.0, 1.0),
        longest_dwell_s: longest as f64 / 1000.0,
        distinct_contexts: focus_counts.len() as u32,
        open_tab_count: tabs,
        reopened_count: focus_counts.values().filter(|&&n| n >= cfg.reopen_threshold).count() as u32,
        active_since_break_s: active.max(0) as f64 / 1000.0,
    }
}

pub fn close(a: &FeatureVector, b: &FeatureVector) -> bool {
    let (x, y) = (a.to_array(), b.to_array());
    a.window_end == b.window_end && x.iter().zip(&y).all(|(p, q)| (p - q).abs() < 1e-9)
}
