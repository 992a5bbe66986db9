//! Persona-driven trace generator.
//!
//! The generator walks a latent regime sequence and emits the events a
//! tracker would see. Each non-focused regime also yields a ground-truth
//! interval: the stretch during which the regime is observable through a
//! five-minute window at the default rule thresholds.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::persona::{InvalidPersona, Persona, Span};
use crate::events::{ContextKind, EventKind, Millis, TraceRecord};
use crate::inference::AttentionLabel;

/// 2024-01-01T00:00:00Z, a Monday.
pub const SIM_EPOCH_MS: Millis = 1_704_067_200_000;

const MINUTE: f64 = 60_000.0;
const WINDOW_MS: Millis = 300_000;
/// Tab switches a five-minute window must hold for 6 per minute.
const DRIFT_SWITCHES: usize = 30;
const DRIFT_SETTLE_MS: Millis = 120_000;
const HYPERFOCUS_MS: Millis = 2_700_000;
/// A stall reads as idle once 4 of the last 5 minutes were idle, and is
/// recognized after that lasts 10 minutes.
const STALL_ONSET_MS: Millis = 240_000 + 600_000;
const STALL_TAIL_MS: Millis = 60_000;
const OVERRUN_MS: Millis = 5_400_000;
/// Idle time before a pause counts as a break and resets activity.
const BREAK_REGISTERS_MS: Millis = 180_000;
/// The overrun ping-pong starts this long before it becomes fatigue, so the
/// window is saturated by then.
const OVERRUN_LEAD_MS: Millis = 300_000;
/// Longest stretch of activity a non-overrun block may reach.
const BLOCK_CAP_MS: Millis = 75 * 60_000;

const APPS: [&str; 3] = ["editor", "terminal", "notes"];
const WORK_TABS: [&str; 2] = ["https://docs.example.org/", "https://tracker.example.org/"];
const TAB_POOL: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthInterval {
    pub label: AttentionLabel,
    pub start: Millis,
    pub end: Millis,
}

/// Non-focused regime intervals, sorted and disjoint; everything else is
/// focused.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub intervals: Vec<TruthInterval>,
}

impl GroundTruth {
    /// Label at `t`; intervals are half-open.
    pub fn label_at(&self, t: Millis) -> AttentionLabel {
        let i = self.intervals.partition_point(|iv| iv.end <= t);
        match self.intervals.get(i) {
            Some(iv) if iv.start <= t => iv.label,
            _ => AttentionLabel::Focused,
        }
    }

    /// Every label held at some instant of `[a, b]`.
    pub fn labels_within(&self, a: Millis, b: Millis) -> Vec<AttentionLabel> {
        let mut out = vec![self.label_at(a)];
        let i = self.intervals.partition_point(|iv| iv.end <= a);
        let mut cursor = a;
        for iv in &self.intervals[i..] {
            if iv.start > b {
                break;
            }
            if iv.start > cursor {
                out.push(AttentionLabel::Focused);
            }
            out.push(iv.label);
            cursor = iv.end;
        }
        if cursor <= b {
            out.push(self.label_at(b));
        }
        out.sort();
        out.dedup();
        out
    }

    pub fn count(&self, label: AttentionLabel) -> usize {
        self.intervals.iter().filter(|iv| iv.label == label).count()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GenStats {
    pub drift_episodes: u64,
    /// Ordinary-work time during which a drift could begin.
    pub drift_exposure_h: f64,
    pub hyperfocus_blocks: u64,
    pub stalls: u64,
    pub overruns: u64,
    pub breaks: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub persona: String,
    pub seed: u64,
    pub start: Millis,
    pub end: Millis,
    pub records: Vec<TraceRecord>,
    pub truth: GroundTruth,
    pub stats: GenStats,
}

impl SimTrace {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            writeln!(w, "{}", r.to_line())?;
        }
        Ok(())
    }
}

struct Gen<'a> {
    p: &'a Persona,
    rng: ChaCha8Rng,
    t: Millis,
    end: Millis,
    records: Vec<TraceRecord>,
    truth: Vec<TruthInterval>,
    stats: GenStats,
    current: Option<(ContextKind, String)>,
    open_tabs: Vec<String>,
    /// Remaining drift-eligible work before the next drift arrival.
    drift_clock: f64,
    activity_start: Millis,
}

impl Gen<'_> {
    fn uniform(&mut self, [lo, hi]: Span) -> f64 {
        if hi > lo {
            self.rng.random_range(lo..=hi)
        } else {
            lo
        }
    }

    fn exp(&mut self, per_ms: f64) -> f64 {
        if per_ms <= 0.0 {
            return f64::INFINITY;
        }
        Exp::new(per_ms).expect("positive rate").sample(&mut self.rng)
    }

    fn after(&mut self, per_min: f64) -> Millis {
        let d = self.exp(per_min / MINUTE);
        if d.is_finite() {
            self.t + (d.round() as Millis).max(1)
        } else {
            Millis::MAX
        }
    }

    fn push(&mut self, rec: TraceRecord) {
        self.records.push(rec);
    }

    fn focus(&mut self, kind: ContextKind, label: &str) {
        let ev = match kind {
            ContextKind::App => EventKind::AppFocus,
            ContextKind::Tab => EventKind::TabSwitch,
        };
        self.push(TraceRecord::with_ctx(self.t, ev, kind, label));
        self.current = Some((kind, label.to_string()));
    }

    fn is_current(&self, label: &str) -> bool {
        self.current.as_ref().is_some_and(|(_, l)| l == label)
    }

    fn ordinary_switch(&mut self) {
        loop {
            let (kind, label) = if self.rng.random_bool(self.p.tab_share) {
                (ContextKind::Tab, WORK_TABS[self.rng.random_range(0..WORK_TABS.len())])
            } else {
                (ContextKind::App, APPS[self.rng.random_range(0..APPS.len())])
            };
            if !self.is_current(label) {
                self.focus(kind, label);
                return;
            }
        }
    }

    fn enter_app(&mut self) {
        loop {
            let label = APPS[self.rng.random_range(0..APPS.len())];
            if !self.is_current(label) {
                self.focus(ContextKind::App, label);
                return;
            }
        }
    }

    fn churn_tabs(&mut self) {
        let [lo, hi] = self.p.tabs;
        let n = self.open_tabs.len() as u32;
        let open = if n <= lo {
            true
        } else if n >= hi {
            false
        } else {
            self.rng.random_bool(0.5)
        };
        if open {
            let label = format!("https://site{}.example.com/", self.rng.random_range(0..TAB_POOL));
            self.push(TraceRecord::with_ctx(self.t, EventKind::TabOpen, ContextKind::Tab, &label));
            self.open_tabs.push(label);
        } else if n > 0 {
            let i = self.rng.random_range(0..self.open_tabs.len());
            let label = self.open_tabs.swap_remove(i);
            self.push(TraceRecord::with_ctx(self.t, EventKind::TabClose, ContextKind::Tab, &label));
        }
    }

    fn idle(&mut self, ms: Millis) {
        self.push(TraceRecord::new(self.t, EventKind::IdleStart));
        self.t += ms.max(1);
        self.push(TraceRecord::new(self.t, EventKind::IdleEnd));
    }

    fn mark(&mut self, label: AttentionLabel, start: Millis, end: Millis) {
        if start < end {
            self.truth.push(TruthInterval { label, start, end });
        }
    }

    /// Ordinary switching for `work_ms`. With `drift` set, drift arrivals
    /// interrupt it; an arrival that would not fit before the block cap
    /// waits for the next block.
    fn ordinary(&mut self, work_ms: Millis, drift: bool) {
        let stop = self.t + work_ms;
        let mut drift = drift && self.p.drift_per_hour > 0.0;
        let mut not_before = self.t;
        let blip_rate = self.p.idle_blips_per_hour / 60.0;
        let mut next_switch = self.after(self.p.base_switch_rate);
        let mut next_blip = self.after(blip_rate);
        let mut next_churn = self.after(self.p.tab_churn_per_min);
        loop {
            let eligible = drift && self.t >= not_before;
            let drift_at = if eligible {
                self.t + self.drift_clock.max(0.0).ceil() as Millis
            } else {
                Millis::MAX
            };
            let finish = stop.max(not_before).max(self.t);
            let next = next_switch.min(next_blip).min(next_churn).min(drift_at).min(finish);
            if eligible {
                let dt = (next - self.t) as f64;
                self.drift_clock -= dt;
                self.stats.drift_exposure_h += dt.min((self.end - self.t).max(0) as f64) / 3_600_000.0;
            }
            self.t = next;
            if next == finish && next < drift_at {
                return;
            }
            if next == drift_at {
                let dur = (self.uniform(self.p.drift_min) * MINUTE) as Millis;
                if self.t - self.activity_start + dur + 2 * WINDOW_MS > BLOCK_CAP_MS {
                    self.drift_clock = 0.0;
                    drift = false;
                    continue;
                }
                let settled = self.drift_episode(dur);
                self.drift_clock = self.exp(self.p.drift_per_hour / 3_600_000.0);
                not_before = settled;
                next_switch = self.after(self.p.base_switch_rate);
                next_blip = self.after(blip_rate);
                next_churn = self.after(self.p.tab_churn_per_min);
            } else if next == next_switch {
                self.ordinary_switch();
                next_switch = self.after(self.p.base_switch_rate);
            } else if next == next_blip {
                let ms = (self.uniform(self.p.idle_blip_s) * 1000.0) as Millis;
                self.idle(ms);
                next_switch = next_switch.max(self.after(self.p.base_switch_rate));
                next_churn = next_churn.max(self.t + 1);
                next_blip = self.after(blip_rate);
            } else {
                self.churn_tabs();
                next_churn = self.after(self.p.tab_churn_per_min);
            }
        }
    }

    /// Rapid tab hopping across the drift sites for `dur`, then back to an
    /// app. Returns when the episode has left the window.
    fn drift_episode(&mut self, dur: Millis) -> Millis {
        let start = self.t;
        let gap = MINUTE / self.p.drift_switch_rate;
        let mut times = Vec::new();
        loop {
            let g = (gap * self.rng.random_range(0.8..=1.2)).round() as Millis;
            if self.t + g > start + dur {
                break;
            }
            self.t += g;
            loop {
                let label = format!("https://feed{}.example.net/", self.rng.random_range(0..self.p.drift_sites));
                if !self.is_current(&label) {
                    self.focus(ContextKind::Tab, &label);
                    break;
                }
            }
            times.push(self.t);
        }
        self.t = start + dur;
        self.enter_app();
        if start < self.end {
            self.stats.drift_episodes += 1;
        }
        let n = times.len();
        if n < DRIFT_SWITCHES {
            return self.t;
        }
        let on = times[DRIFT_SWITCHES - 1] + DRIFT_SETTLE_MS;
        let off = times[n - DRIFT_SWITCHES] + WINDOW_MS;
        self.mark(AttentionLabel::Drift, on, off);
        off + 30_000
    }

    fn ordinary_block(&mut self) {
        self.enter_app();
        let ms = (self.uniform(self.p.work_block_min) * MINUTE) as Millis;
        self.ordinary(ms, true);
    }

    /// One context for an hour or so, then a tab switch to surface and a
    /// few minutes of ordinary work.
    fn hyperfocus_block(&mut self) {
        let start = self.t;
        self.enter_app();
        let dur = (self.uniform(self.p.hyperfocus_min) * MINUTE) as Millis;
        self.t = start + dur;
        self.mark(AttentionLabel::Hyperfocus, start + HYPERFOCUS_MS, self.t);
        self.focus(ContextKind::Tab, WORK_TABS[0]);
        let tail = (self.rng.random_range(2.0..=5.0) * MINUTE) as Millis;
        self.ordinary(tail, false);
        self.stats.hyperfocus_blocks += 1;
    }

    /// Skipped break: ordinary work runs into a fast back-and-forth between
    /// two apps until a break finally comes.
    fn overrun_block(&mut self) {
        self.enter_app();
        let lead = self.activity_start + OVERRUN_MS - OVERRUN_LEAD_MS;
        self.ordinary((lead - self.t).max(0), false);
        let tail = (self.uniform(self.p.overrun_tail_min) * MINUTE) as Millis;
        let stop = self.activity_start + OVERRUN_MS + tail;
        let gap = MINUTE / self.p.overrun_switch_rate;
        let pair = [APPS[0], APPS[2]];
        let mut i = 0;
        loop {
            let g = (gap * self.rng.random_range(0.8..=1.2)).round() as Millis;
            if self.t + g > stop {
                break;
            }
            self.t += g;
            if self.is_current(pair[i]) {
                i ^= 1;
            }
            self.focus(ContextKind::App, pair[i]);
        }
        self.t = self.t.max(stop);
        self.mark(
            AttentionLabel::Fatigue,
            self.activity_start + OVERRUN_MS,
            self.t + BREAK_REGISTERS_MS,
        );
        self.stats.overruns += 1;
    }

    fn rest(&mut self, stall: bool) {
        let start = self.t;
        if stall {
            let ms = (self.uniform(self.p.stall_min) * MINUTE) as Millis;
            self.idle(ms);
            self.mark(AttentionLabel::Inertia, start + STALL_ONSET_MS, self.t + STALL_TAIL_MS);
            self.stats.stalls += 1;
        } else {
            let ms = (self.uniform(self.p.break_min) * MINUTE) as Millis;
            self.idle(ms);
            self.stats.breaks += 1;
        }
        self.activity_start = self.t;
    }
}

/// Generates `duration_h` hours of activity starting at [`SIM_EPOCH_MS`].
/// Deterministic per `(persona, duration_h, seed)`.
pub fn generate(persona: &Persona, duration_h: f64, seed: u64) -> Result<SimTrace, InvalidPersona> {
    persona.validate()?;
    if !(duration_h.is_finite() && duration_h > 0.0) {
        return Err(InvalidPersona("duration must be positive".into()));
    }
    let start = SIM_EPOCH_MS;
    let end = start + (duration_h * 3_600_000.0).round() as Millis;
    let mut g = Gen {
        p: persona,
        rng: ChaCha8Rng::seed_from_u64(seed),
        t: start,
        end,
        records: Vec::new(),
        truth: Vec::new(),
        stats: GenStats::default(),
        current: None,
        open_tabs: Vec::new(),
        drift_clock: 0.0,
        activity_start: start,
    };
    g.drift_clock = g.exp(persona.drift_per_hour / 3_600_000.0);
    g.push(TraceRecord::new(start, EventKind::SessionStart));
    let initial = (persona.tabs[0] + persona.tabs[1]) / 2;
    for _ in 0..initial {
        g.churn_tabs();
    }

    let (p_hyper, p_overrun, p_stall) = persona.block_probs();
    while g.t < end {
        let u: f64 = g.rng.random();
        if u < p_hyper {
            g.hyperfocus_block();
        } else if u < p_hyper + p_overrun {
            g.overrun_block();
        } else {
            g.ordinary_block();
        }
        if persona.rests() {
            let stall = g.rng.random_bool(p_stall);
            g.rest(stall);
        }
    }

    let mut records = g.records;
    records.retain(|r| r.t < end);
    records.push(TraceRecord::new(end, EventKind::SessionEnd));
    let mut intervals: Vec<TruthInterval> = g
        .truth
        .into_iter()
        .filter(|iv| iv.start < end)
        .map(|iv| TruthInterval {
            end: iv.end.min(end),
            ..iv
        })
        .collect();
    intervals.sort_by_key(|iv| iv.start);
    debug_assert!(intervals.windows(2).all(|w| w[0].end <= w[1].start));

    Ok(SimTrace {
        persona: persona.name.clone(),
        seed,
        start,
        end,
        records,
        truth: GroundTruth { intervals },
        stats: g.stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{validate_event, StreamState};

    fn valid(trace: &SimTrace) {
        let mut st = StreamState::new();
        for (i, r) in trace.records.iter().enumerate() {
            validate_event(r, &mut st).unwrap_or_else(|e| panic!("record {i} {r:?}: {e}"));
        }
    }

    #[test]
    fn traces_validate_and_are_deterministic() {
        for persona in [Persona::default(), Persona::drift_heavy(), Persona::steady(), Persona::flat()] {
            let a = generate(&persona, 24.0, 7).unwrap();
            valid(&a);
            assert_eq!(a, generate(&persona, 24.0, 7).unwrap());
            assert_ne!(a.records, generate(&persona, 24.0, 8).unwrap().records);
            assert_eq!(a.records.last().unwrap().kind, "session_end");
        }
    }

    #[test]
    fn flat_persona_is_all_focused() {
        let t = generate(&Persona::flat(), 6.0, 1).unwrap();
        assert!(t.truth.intervals.is_empty());
        assert!(t.records.iter().all(|r| r.kind != "idle_start"));
    }

    #[test]
    fn default_persona_visits_every_regime() {
        let t = generate(&Persona::default(), 24.0, 42).unwrap();
        for label in [
            AttentionLabel::Drift,
            AttentionLabel::Hyperfocus,
            AttentionLabel::Inertia,
            AttentionLabel::Fatigue,
        ] {
            assert!(t.truth.count(label) > 0, "{label}");
        }
    }

    #[test]
    fn truth_lookup() {
        let g = GroundTruth {
            intervals: vec![
                TruthInterval {
                    label: AttentionLabel::Drift,
                    start: 100,
                    end: 200,
                },
                TruthInterval {
                    label: AttentionLabel::Inertia,
                    start: 200,
                    end: 300,
                },
            ],
        };
        assert_eq!(g.label_at(99), AttentionLabel::Focused);
        assert_eq!(g.label_at(100), AttentionLabel::Drift);
        assert_eq!(g.label_at(200), AttentionLabel::Inertia);
        assert_eq!(g.label_at(300), AttentionLabel::Focused);
        assert_eq!(
            g.labels_within(150, 250),
            vec![AttentionLabel::Drift, AttentionLabel::Inertia]
        );
        assert_eq!(
            g.labels_within(50, 350),
            vec![AttentionLabel::Focused, AttentionLabel::Drift, AttentionLabel::Inertia]
        );
        assert_eq!(g.labels_within(0, 10), vec![AttentionLabel::Focused]);
    }

    /// Arrivals over drift-eligible work are Poisson, so the count sits
    /// within three standard deviations of rate times exposure.
    #[test]
    fn drift_count_matches_poisson_mean() {
        let p = Persona::drift_heavy();
        for seed in 0..5 {
            let t = generate(&p, 24.0, seed).unwrap();
            let mean = p.drift_per_hour * t.stats.drift_exposure_h;
            let n = t.stats.drift_episodes as f64;
            assert!(
                (n - mean).abs() <= 3.0 * mean.sqrt(),
                "seed {seed}: {n} episodes vs mean {mean:.1}"
            );
        }
    }

    #[test]
    fn rejects_bad_duration() {
        assert!(generate(&Persona::default(), 0.0, 1).is_err());
        assert!(generate(&Persona::default(), f64::NAN, 1).is_err());
    }
}
