use std::collections::HashMap;

use chrono::{Days, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use super::{RecordKind, StoreError, StoredRecord};
use crate::events::{ActivityEvent, ContextKind, ContextRef, EventKind, LabelHandle, Millis};
use crate::inference::{AttentionLabel, AttentionState};
use crate::nudge::{Nudge, ResponseKind};
use crate::recall::LabelResolver;

const DAY_MS: Millis = 86_400_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopContext {
    pub handle: LabelHandle,
    pub kind: ContextKind,
    pub dwell_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySummary {
    pub date: String,
    pub focused_min: f64,
    pub drift_episodes: u32,
    pub hyperfocus_episodes: u32,
    pub nudges_shown: u32,
    pub nudges_accepted: u32,
    pub top_contexts: Vec<TopContext>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklySummary {
    pub week: String,
    pub week_start: String,
    pub days: Vec<DaySummary>,
}

#[derive(Deserialize)]
struct ResponseBody {
    nudge_id: u64,
    value: ResponseKind,
}

fn parse_week(week: &str) -> Option<NaiveDate> {
    let (y, w) = week.split_once("-W")?;
    if y.len() != 4 || w.len() != 2 {
        return None;
    }
    NaiveDate::from_isoywd_opt(y.parse().ok()?, w.parse().ok()?, Weekday::Mon)
}

struct Week {
    start: Millis,
}

impl Week {
    fn day_of(&self, t: Millis) -> Option<usize> {
        let d = (t - self.start).div_euclid(DAY_MS);
        (0..7).contains(&d).then_some(d as usize)
    }

    /// Calls `f(day, ms)` for each day-clipped piece of `[a, b)`.
    fn split(&self, a: Millis, b: Millis, mut f: impl FnMut(usize, Millis)) {
        for d in 0..7 {
            let ds = self.start + d as Millis * DAY_MS;
            let lo = a.max(ds);
            let hi = b.min(ds + DAY_MS);
            if hi > lo {
                f(d, hi - lo);
            }
        }
    }
}

/// Aggregates already-decrypted records; see [`super::Store::weekly_summary`].
pub fn summarize(
    records: &[StoredRecord],
    week: &str,
    utc_offset_minutes: i32,
    labels: Option<&dyn LabelResolver>,
) -> Result<WeeklySummary, StoreError> {
    let monday = parse_week(week).ok_or_else(|| StoreError::BadWeek(week.to_string()))?;
    let start_local = monday
        .and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_utc()
        .timestamp_millis();
    let wk = Week {
        start: start_local - Millis::from(utc_offset_minutes) * 60_000,
    };

    let mut focused_ms = [0 as Millis; 7];
    let mut drift = [0u32; 7];
    let mut hyper = [0u32; 7];
    let mut shown = [0u32; 7];
    let mut accepted = [0u32; 7];
    let mut dwell: [HashMap<ContextRef, Millis>; 7] = Default::default();
    let mut nudge_day: HashMap<u64, Option<usize>> = HashMap::new();
    let mut accepted_ids: HashMap<u64, ()> = HashMap::new();

    let mut state: Option<(AttentionLabel, Millis)> = None;
    let mut focus: Option<(ContextRef, Millis)> = None;
    let mut last_ctx: Option<ContextRef> = None;
    let mut last_t = Millis::MIN;

    let close_state = |state: &mut Option<(AttentionLabel, Millis)>, t: Millis, acc: &mut [Millis; 7]| {
        if let Some((AttentionLabel::Focused, s)) = state.take() {
            wk.split(s, t, |d, ms| acc[d] += ms);
        }
    };
    let close_focus = |focus: &mut Option<(ContextRef, Millis)>, t: Millis, acc: &mut [HashMap<ContextRef, Millis>; 7]| {
        if let Some((c, s)) = focus.take() {
            wk.split(s, t, |d, ms| *acc[d].entry(c).or_default() += ms);
        }
    };

    for r in records {
        last_t = last_t.max(r.t);
        match r.kind {
            RecordKind::StateChange => {
                let Ok(st) = serde_json::from_value::<AttentionState>(r.body.clone()) else {
                    continue;
                };
                close_state(&mut state, r.t, &mut focused_ms);
                state = Some((st.label, r.t));
                if let Some(d) = wk.day_of(r.t) {
                    match st.label {
                        AttentionLabel::Drift => drift[d] += 1,
                        AttentionLabel::Hyperfocus => hyper[d] += 1,
                        _ => {}
                    }
                }
            }
            RecordKind::Event => {
                let Ok(ev) = serde_json::from_value::<ActivityEvent>(r.body.clone()) else {
                    continue;
                };
                match ev.kind {
                    EventKind::AppFocus | EventKind::TabSwitch => {
                        close_focus(&mut focus, ev.t, &mut dwell);
                        focus = ev.ctx.map(|c| (c, ev.t));
                        last_ctx = ev.ctx;
                    }
                    EventKind::IdleStart => close_focus(&mut focus, ev.t, &mut dwell),
                    EventKind::IdleEnd => focus = last_ctx.map(|c| (c, ev.t)),
                    EventKind::SessionEnd => {
                        close_focus(&mut focus, ev.t, &mut dwell);
                        close_state(&mut state, ev.t, &mut focused_ms);
                        last_ctx = None;
                    }
                    _ => {}
                }
            }
            RecordKind::Nudge => {
                if let Ok(n) = serde_json::from_value::<Nudge>(r.body.clone()) {
                    let d = wk.day_of(n.created_at);
                    if nudge_day.insert(n.id, d).is_none() {
                        if let Some(d) = d {
                            shown[d] += 1;
                        }
                    }
                }
            }
            RecordKind::Response => {
                if let Ok(b) = serde_json::from_value::<ResponseBody>(r.body.clone()) {
                    if b.value == ResponseKind::Accepted && accepted_ids.insert(b.nudge_id, ()).is_none() {
                        if let Some(Some(d)) = nudge_day.get(&b.nudge_id) {
                            accepted[*d] += 1;
                        }
                    }
                }
            }
            _ => {}
        }
    }
    close_state(&mut state, last_t, &mut focused_ms);
    close_focus(&mut focus, last_t, &mut dwell);

    let days = (0..7)
        .map(|d| {
            let mut top: Vec<(ContextRef, Millis)> = dwell[d].iter().map(|(c, ms)| (*c, *ms)).collect();
            // Deterministic: longest dwell first, then by id.
            top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.id.cmp(&b.0.id)));
            top.truncate(3);
            DaySummary {
                date: (monday + Days::new(d as u64)).to_string(),
                focused_min: focused_ms[d] as f64 / 60_000.0,
                drift_episodes: drift[d],
                hyperfocus_episodes: hyper[d],
                nudges_shown: shown[d],
                nudges_accepted: accepted[d],
                top_contexts: top
                    .into_iter()
                    .map(|(c, ms)| TopContext {
                        handle: c.handle,
                        kind: c.kind,
                        dwell_s: ms as f64 / 1000.0,
                        label: labels.and_then(|l| l.resolve(c.handle)),
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(WeeklySummary {
        week: week.to_string(),
        week_start: monday.to_string(),
        days,
    })
}

/// ISO week string (`"YYYY-Www"`) containing `t` at the given UTC offset.
pub fn iso_week_of(t: Millis, utc_offset_minutes: i32) -> String {
    use chrono::Datelike;
    let local = t + Millis::from(utc_offset_minutes) * 60_000;
    let dt = chrono::DateTime::from_timestamp_millis(local).unwrap_or_default();
    let w = dt.iso_week();
    format!("{:04}-W{:02}", w.year(), w.week())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    const MON: Millis = 1_704_067_200_000; // 2024-01-01, ISO 2024-W01

    fn rec(seq: u64, t: Millis, kind: RecordKind, body: serde_json::Value) -> StoredRecord {
        StoredRecord { seq, t, kind, body }
    }

    fn state(t: Millis, label: &str) -> StoredRecord {
        rec(0, t, RecordKind::StateChange, json!({"label": label, "since": t, "confidence": 1.0, "anomaly_score": 0.0}))
    }

    #[test]
    fn empty_is_all_zero() {
        let s = summarize(&[], "2024-W01", 0, None).unwrap();
        assert_eq!(s.week_start, "2024-01-01");
        assert_eq!(s.days.len(), 7);
        assert_eq!(s.days[6].date, "2024-01-07");
        assert!(s.days.iter().all(|d| d.focused_min == 0.0 && d.nudges_shown == 0 && d.top_contexts.is_empty()));
    }

    #[test]
    fn bad_week() {
        for w in ["2024-01", "2024-W54", "24-W01", "2024-W1"] {
            assert!(summarize(&[], w, 0, None).is_err(), "{w}");
        }
    }

    #[test]
    fn focused_minutes_split_at_midnight() {
        let recs = vec![
            state(MON + DAY_MS - 30 * 60_000, "focused"),
            state(MON + DAY_MS + 45 * 60_000, "drift"),
            state(MON + DAY_MS + 50 * 60_000, "focused"),
            rec(0, MON + DAY_MS + 60 * 60_000, RecordKind::Event, json!({"t": MON + DAY_MS + 60 * 60_000, "kind": "session_end"})),
        ];
        let s = summarize(&recs, "2024-W01", 0, None).unwrap();
        assert_eq!(s.days[0].focused_min, 30.0);
        assert_eq!(s.days[1].focused_min, 55.0);
        assert_eq!(s.days[1].drift_episodes, 1);
    }

    #[test]
    fn accepted_counts_on_creation_day_and_never_exceed_shown() {
        let nudge = |id: u64, t: Millis| {
            rec(0, t, RecordKind::Nudge, json!({
                "id": id, "kind": "reflective", "style": "gentle_popup", "text": "x",
                "state": "drift", "created_at": t, "expires_at": t + 300_000
            }))
        };
        let resp = |id: u64, t: Millis, v: &str| rec(0, t, RecordKind::Response, json!({"nudge_id": id, "value": v}));
        let late = MON + DAY_MS - 60_000;
        let recs = vec![
            nudge(1, late),
            resp(1, late + 120_000, "accepted"),
            resp(1, late + 130_000, "accepted"),
            nudge(2, MON + DAY_MS + 1000),
            resp(2, MON + DAY_MS + 2000, "dismissed"),
            resp(99, MON + DAY_MS + 3000, "accepted"),
        ];
        let s = summarize(&recs, "2024-W01", 0, None).unwrap();
        assert_eq!((s.days[0].nudges_shown, s.days[0].nudges_accepted), (1, 1));
        assert_eq!((s.days[1].nudges_shown, s.days[1].nudges_accepted), (1, 0));
    }

    #[test]
    fn top_contexts_by_dwell() {
        let ctx = |l: &str| ContextRef::from_label(ContextKind::App, l).unwrap().0;
        let focus = |t: Millis, l: &str| {
            rec(0, t, RecordKind::Event, serde_json::to_value(ActivityEvent {
                t,
                kind: EventKind::AppFocus,
                ctx: Some(ctx(l)),
                payload: None,
            }).unwrap())
        };
        let min = 60_000;
        let recs = vec![
            focus(MON, "a"),
            focus(MON + 10 * min, "b"),
            focus(MON + 40 * min, "c"),
            focus(MON + 45 * min, "d"),
            focus(MON + 47 * min, "a"),
            rec(0, MON + 60 * min, RecordKind::Event, json!({"t": MON + 60 * min, "kind": "session_end"})),
        ];
        let s = summarize(&recs, "2024-W01", 0, None).unwrap();
        let top: Vec<(u64, f64)> = s.days[0].top_contexts.iter().map(|c| (c.handle.0, c.dwell_s)).collect();
        assert_eq!(top, vec![(ctx("b").id, 1800.0), (ctx("a").id, 1380.0), (ctx("c").id, 300.0)]);
    }

    #[test]
    fn offsets_shift_day_boundaries() {
        assert_eq!(iso_week_of(MON, 0), "2024-W01");
        assert_eq!(iso_week_of(MON, -60), "2023-W52");
        let recs = vec![state(MON + 30 * 60_000, "drift")];
        let s = summarize(&recs, "2024-W01", 60, None).unwrap();
        assert_eq!(s.days[0].drift_episodes, 1);
        let s = summarize(&recs, "2024-W01", -60, None).unwrap();
        assert_eq!(s.days[0].drift_episodes, 0);
    }
}
