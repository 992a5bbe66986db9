//! Consent-gated nudges with Thompson-sampled delivery style.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doubling::Tone;
use crate::events::Millis;
use crate::features::{overload_flag, FeatureVector, DEFAULT_OVERLOAD_TABS};
use crate::inference::{AttentionLabel, AttentionState, RuleThresholds};

pub const REFLECTIVE_TEXT: &str = "Want to pick up where you left off?";
pub const PRESENCE_TEXT: &str = "Still here with you";
pub const BREATHER_TEXT: &str = "You've been going strong\u{2014}need a breather?";
pub const DOPBOOST_TEXT: &str = "Want a quick DopBoost? I've got a Glow Factor or Zen Zest ready.";
pub const WHEREWASI_TEXT: &str = "Lots open right now. Want to see where you were?";

/// Acceptances slower than this earn no reward.
pub const REWARD_LATENCY_MS: Millis = 120_000;
/// Consecutive negative responses that suppress a style in one context.
pub const SUPPRESS_AFTER: u32 = 3;
pub const SUPPRESS_FOR_MS: Millis = 7 * 24 * 3600 * 1000;
const RESOLVED_MEMORY: usize = 4096;

pub fn accountability_text(goal: &str) -> String {
    format!("Checking in on your goal: {goal}. How's it going?")
}

macro_rules! str_enum {
    ($name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($var),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$var => $s),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl std::str::FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                $name::ALL.iter().copied().find(|v| v.as_str() == s)
                    .ok_or_else(|| format!("unknown {}: {s:?}", stringify!($name)))
            }
        }
    };
}

str_enum!(NudgeKind {
    Reflective => "reflective",
    Presence => "presence",
    Breather => "breather",
    Dopboost => "dopboost",
    AccountabilityCheckin => "accountability_checkin",
    WherewasiOffer => "wherewasi_offer",
});

str_enum!(NudgeStyle {
    GentlePopup => "gentle_popup",
    QuietCheckin => "quiet_checkin",
    VoiceText => "voice_text",
});

str_enum!(DopBoostMode {
    MoodFuel => "mood_fuel",
    ZenZest => "zen_zest",
    RewardRush => "reward_rush",
    FocusRitual => "focus_ritual",
});

str_enum!(ResponseKind {
    Accepted => "accepted",
    Dismissed => "dismissed",
    Snoozed => "snoozed",
    Ignored => "ignored",
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nudge {
    pub id: u64,
    pub kind: NudgeKind,
    pub style: NudgeStyle,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dopboost_mode: Option<DopBoostMode>,
    /// Attention label the nudge answered; selects the bandit context.
    pub state: AttentionLabel,
    pub created_at: Millis,
    pub expires_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NudgeError {
    #[error("unknown nudge id {0}")]
    UnknownNudgeId(u64),
    #[error("nudge {0} already has a response")]
    DuplicateResponse(u64),
    #[error("every enabled style is suppressed in this context")]
    AllStylesSuppressed,
    #[error("no DopBoost modes enabled")]
    NoModesEnabled,
    #[error("invalid preference: {0}")]
    InvalidPreference(String),
}

/// Local wall-clock time of day, serialized as `"HH:MM"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LocalTime(u16);

impl LocalTime {
    pub fn new(h: u16, m: u16) -> Option<Self> {
        (h < 24 && m < 60).then_some(LocalTime(h * 60 + m))
    }

    pub fn minutes(self) -> u16 {
        self.0
    }
}

impl TryFrom<String> for LocalTime {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        let bad = || format!("expected HH:MM, got {s:?}");
        let (h, m) = s.split_once(':').ok_or_else(bad)?;
        if h.len() != 2 || m.len() != 2 {
            return Err(bad());
        }
        let h = h.parse().map_err(|_| bad())?;
        let m = m.parse().map_err(|_| bad())?;
        LocalTime::new(h, m).ok_or_else(bad)
    }
}

impl From<LocalTime> for String {
    fn from(t: LocalTime) -> String {
        format!("{:02}:{:02}", t.0 / 60, t.0 % 60)
    }
}

/// Half-open local-time interval; wraps past midnight when `end < start`.
/// `start == end` is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuietInterval {
    pub start: LocalTime,
    pub end: LocalTime,
}

impl QuietInterval {
    pub fn contains(&self, minute_of_day: u16) -> bool {
        let (s, e) = (self.start.0, self.end.0);
        if s <= e {
            s <= minute_of_day && minute_of_day < e
        } else {
            minute_of_day >= s || minute_of_day < e
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnabledStyles {
    pub gentle_popup: bool,
    pub quiet_checkin: bool,
    pub voice_text: bool,
}

impl Default for EnabledStyles {
    fn default() -> Self {
        EnabledStyles {
            gentle_popup: true,
            quiet_checkin: true,
            voice_text: false,
        }
    }
}

impl EnabledStyles {
    pub fn is_enabled(&self, s: NudgeStyle) -> bool {
        match s {
            NudgeStyle::GentlePopup => self.gentle_popup,
            NudgeStyle::QuietCheckin => self.quiet_checkin,
            NudgeStyle::VoiceText => self.voice_text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accountability {
    pub goal_text: String,
    pub window_start: Millis,
    pub window_end: Millis,
    pub checkin_interval_s: u64,
}

impl Accountability {
    pub fn active(&self, t: Millis) -> bool {
        self.window_start <= t && t < self.window_end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BodyDoubleSettings {
    pub tone: Tone,
    pub min_s: u64,
    pub max_s: u64,
}

impl Default for BodyDoubleSettings {
    fn default() -> Self {
        BodyDoubleSettings {
            tone: Tone::Calm,
            min_s: 420,
            max_s: 720,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Preference {
    /// Master switch; off disables every delivery.
    pub consent: bool,
    pub enabled_styles: EnabledStyles,
    pub quiet_hours: Vec<QuietInterval>,
    /// Offset of local time from UTC, used to place quiet hours.
    pub utc_offset_minutes: i32,
    pub min_gap_s: u64,
    /// Unanswered nudges resolve as ignored after this long.
    pub nudge_ttl_s: u64,
    pub accountability_mode: Option<Accountability>,
    pub dopboost_enabled_modes: Vec<DopBoostMode>,
    pub body_double: BodyDoubleSettings,
    pub overload_tab_threshold: u32,
    pub thresholds: RuleThresholds,
}

impl Default for Preference {
    fn default() -> Self {
        Preference {
            consent: true,
            enabled_styles: EnabledStyles::default(),
            quiet_hours: Vec::new(),
            utc_offset_minutes: 0,
            min_gap_s: 900,
            nudge_ttl_s: 300,
            accountability_mode: None,
            dopboost_enabled_modes: DopBoostMode::ALL.to_vec(),
            body_double: BodyDoubleSettings::default(),
            overload_tab_threshold: DEFAULT_OVERLOAD_TABS,
            thresholds: RuleThresholds::default(),
        }
    }
}

impl Preference {
    pub fn validate(&self) -> Result<(), NudgeError> {
        let bad = |m: &str| Err(NudgeError::InvalidPreference(m.to_string()));
        if self.min_gap_s < 60 {
            return bad("min_gap_s must be >= 60");
        }
        if self.nudge_ttl_s == 0 {
            return bad("nudge_ttl_s must be positive");
        }
        if self.utc_offset_minutes.abs() > 14 * 60 {
            return bad("utc_offset_minutes out of range");
        }
        if let Some(a) = &self.accountability_mode {
            if a.window_end <= a.window_start {
                return bad("accountability window is empty");
            }
            if a.checkin_interval_s < self.min_gap_s {
                return bad("checkin_interval_s must be >= min_gap_s");
            }
        }
        let bd = &self.body_double;
        if bd.min_s < 60 || bd.max_s < bd.min_s {
            return bad("body_double cadence must satisfy 60 <= min_s <= max_s");
        }
        self.thresholds
            .validate()
            .map_err(|e| NudgeError::InvalidPreference(e.to_string()))
    }

    pub fn minute_of_day(&self, t: Millis) -> u16 {
        let local = t.div_euclid(60_000) + i64::from(self.utc_offset_minutes);
        local.rem_euclid(1440) as u16
    }

    pub fn in_quiet_hours(&self, t: Millis) -> bool {
        let m = self.minute_of_day(t);
        self.quiet_hours.iter().any(|q| q.contains(m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArmKey {
    pub state: AttentionLabel,
    pub kind: NudgeKind,
    pub style: NudgeStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arm {
    pub alpha: u64,
    pub beta: u64,
    pub consecutive_negatives: u32,
    pub suppressed_until: Option<Millis>,
}

impl Default for Arm {
    fn default() -> Self {
        Arm {
            alpha: 1,
            beta: 1,
            consecutive_negatives: 0,
            suppressed_until: None,
        }
    }
}

impl Arm {
    pub fn suppressed_at(&self, now: Millis) -> bool {
        self.suppressed_until.is_some_and(|u| now < u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArmSnapshot {
    #[serde(flatten)]
    pub key: ArmKey,
    #[serde(flatten)]
    pub arm: Arm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResponseOutcome {
    pub key: ArmKey,
    pub reward: bool,
    pub suppressed: bool,
}

/// Draws once from each `Beta(alpha, beta)` and returns the index of the
/// largest draw (first on ties).
pub fn thompson_argmax<R: Rng + ?Sized>(params: &[(u64, u64)], rng: &mut R) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &(a, b)) in params.iter().enumerate() {
        let x = Beta::new(a as f64, b as f64)
            .expect("alpha, beta >= 1")
            .sample(rng);
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

#[derive(Debug, Clone, Default)]
pub struct BanditState {
    arms: BTreeMap<ArmKey, Arm>,
    outstanding: BTreeMap<u64, Nudge>,
    resolved: VecDeque<u64>,
    resolved_set: HashSet<u64>,
    next_id: u64,
}

impl BanditState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn arm(&self, key: &ArmKey) -> Arm {
        self.arms.get(key).copied().unwrap_or_default()
    }

    pub fn arms(&self) -> Vec<ArmSnapshot> {
        self.arms
            .iter()
            .map(|(k, a)| ArmSnapshot { key: *k, arm: *a })
            .collect()
    }

    pub fn outstanding(&self) -> impl Iterator<Item = &Nudge> {
        self.outstanding.values()
    }

    /// Assigns an id to a nudge about to be shown and starts tracking it.
    pub fn register(&mut self, nudge: &mut Nudge) -> u64 {
        self.next_id += 1;
        nudge.id = self.next_id;
        self.outstanding.insert(nudge.id, nudge.clone());
        nudge.id
    }

    /// Ids of shown nudges whose expiry has passed.
    pub fn expired(&self, now: Millis) -> Vec<u64> {
        self.outstanding
            .values()
            .filter(|n| n.expires_at <= now)
            .map(|n| n.id)
            .collect()
    }

    /// Thompson-samples a style for `(state, kind)` among enabled,
    /// unsuppressed styles.
    pub fn select_style(
        &self,
        state: AttentionLabel,
        kind: NudgeKind,
        enabled: &EnabledStyles,
        now: Millis,
        seed: u64,
    ) -> Result<NudgeStyle, NudgeError> {
        let candidates: Vec<NudgeStyle> = NudgeStyle::ALL
            .iter()
            .copied()
            .filter(|&style| {
                enabled.is_enabled(style) && !self.arm(&ArmKey { state, kind, style }).suppressed_at(now)
            })
            .collect();
        match candidates.len() {
            0 => Err(NudgeError::AllStylesSuppressed),
            1 => Ok(candidates[0]),
            _ => {
                let params: Vec<(u64, u64)> = candidates
                    .iter()
                    .map(|&style| {
                        let a = self.arm(&ArmKey { state, kind, style });
                        (a.alpha, a.beta)
                    })
                    .collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok(candidates[thompson_argmax(&params, &mut rng)])
            }
        }
    }

    pub fn record_response(
        &mut self,
        id: u64,
        response: ResponseKind,
        latency_ms: Millis,
        now: Millis,
    ) -> Result<ResponseOutcome, NudgeError> {
        let Some(nudge) = self.outstanding.remove(&id) else {
            return Err(if self.resolved_set.contains(&id) {
                NudgeError::DuplicateResponse(id)
            } else {
                NudgeError::UnknownNudgeId(id)
            });
        };
        self.resolved.push_back(id);
        self.resolved_set.insert(id);
        if self.resolved.len() > RESOLVED_MEMORY {
            if let Some(old) = self.resolved.pop_front() {
                self.resolved_set.remove(&old);
            }
        }

        let key = ArmKey {
            state: nudge.state,
            kind: nudge.kind,
            style: nudge.style,
        };
        let arm = self.arms.entry(key).or_default();
        let reward = response == ResponseKind::Accepted && (0..=REWARD_LATENCY_MS).contains(&latency_ms);
        if reward {
            arm.alpha += 1;
        } else {
            arm.beta += 1;
        }
        let mut suppressed = false;
        match response {
            ResponseKind::Accepted => arm.consecutive_negatives = 0,
            ResponseKind::Snoozed => {}
            ResponseKind::Dismissed | ResponseKind::Ignored => {
                arm.consecutive_negatives += 1;
                if arm.consecutive_negatives >= SUPPRESS_AFTER {
                    arm.consecutive_negatives = 0;
                    arm.suppressed_until = Some(now + SUPPRESS_FOR_MS);
                    suppressed = true;
                }
            }
        }
        Ok(ResponseOutcome {
            key,
            reward,
            suppressed,
        })
    }
}

pub fn dopboost_pick(prefs: &Preference, seed: u64) -> Result<DopBoostMode, NudgeError> {
    let modes: Vec<DopBoostMode> = DopBoostMode::ALL
        .iter()
        .copied()
        .filter(|m| prefs.dopboost_enabled_modes.contains(m))
        .collect();
    if modes.is_empty() {
        return Err(NudgeError::NoModesEnabled);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(modes[rng.random_range(0..modes.len())])
}

/// Decides whether to nudge now. Pure in its arguments; the returned nudge
/// has id 0 until [`BanditState::register`] is called.
///
/// Gates, in order: consent, quiet hours, minimum gap since the last nudge,
/// then accountability mode (only scheduled check-ins inside its window).
pub fn evaluate(
    state: &AttentionState,
    fv: &FeatureVector,
    prefs: &Preference,
    bandit: &BanditState,
    clock: Millis,
    last_nudge_at: Option<Millis>,
    seed: u64,
) -> Option<Nudge> {
    if !prefs.consent || prefs.in_quiet_hours(clock) {
        return None;
    }
    let since_last = last_nudge_at.map(|t| clock - t);
    if since_last.is_some_and(|d| d < prefs.min_gap_s as Millis * 1000) {
        return None;
    }

    let mut mode = None;
    let (kind, text) = match &prefs.accountability_mode {
        Some(acc) if acc.active(clock) => {
            let due = since_last.is_none_or(|d| d >= acc.checkin_interval_s as Millis * 1000);
            if !due {
                return None;
            }
            (NudgeKind::AccountabilityCheckin, accountability_text(&acc.goal_text))
        }
        _ => match state.label {
            AttentionLabel::Drift
                if state.held_for(clock) as f64 >= prefs.thresholds.drift_persist_s * 1000.0 =>
            {
                (NudgeKind::Reflective, REFLECTIVE_TEXT.to_string())
            }
            AttentionLabel::Hyperfocus => (NudgeKind::Breather, BREATHER_TEXT.to_string()),
            AttentionLabel::Fatigue => match dopboost_pick(prefs, seed ^ 0xd0b0) {
                Ok(m) => {
                    mode = Some(m);
                    (NudgeKind::Dopboost, DOPBOOST_TEXT.to_string())
                }
                Err(_) => (NudgeKind::Breather, BREATHER_TEXT.to_string()),
            },
            AttentionLabel::Inertia => (NudgeKind::Presence, PRESENCE_TEXT.to_string()),
            AttentionLabel::Focused if overload_flag(fv, prefs.overload_tab_threshold) => {
                (NudgeKind::WherewasiOffer, WHEREWASI_TEXT.to_string())
            }
            _ => return None,
        },
    };
    let style = bandit
        .select_style(state.label, kind, &prefs.enabled_styles, clock, seed)
        .unwrap_or(NudgeStyle::QuietCheckin);
    Some(Nudge {
        id: 0,
        kind,
        style,
        text,
        dopboost_mode: mode,
        state: state.label,
        created_at: clock,
        expires_at: clock + prefs.nudge_ttl_s.max(1) as Millis * 1000,
    })
}

/// Arm-selection policy over a fixed number of Bernoulli arms.
pub trait BanditPolicy {
    fn arms(&self) -> usize;
    fn select(&mut self, rng: &mut ChaCha8Rng) -> usize;
    fn update(&mut self, arm: usize, reward: bool);
}

/// Beta-Bernoulli Thompson sampling; the same posterior update as
/// [`BanditState`].
#[derive(Debug, Clone)]
pub struct ThompsonPolicy {
    params: Vec<(u64, u64)>,
}

impl ThompsonPolicy {
    pub fn new(arms: usize) -> Self {
        ThompsonPolicy {
            params: vec![(1, 1); arms],
        }
    }

    pub fn params(&self) -> &[(u64, u64)] {
        &self.params
    }
}

impl BanditPolicy for ThompsonPolicy {
    fn arms(&self) -> usize {
        self.params.len()
    }

    fn select(&mut self, rng: &mut ChaCha8Rng) -> usize {
        thompson_argmax(&self.params, rng)
    }

    fn update(&mut self, arm: usize, reward: bool) {
        let p = &mut self.params[arm];
        if reward {
            p.0 += 1;
        } else {
            p.1 += 1;
        }
    }
}

#[derive(Debug, Clone)]
pub struct UniformPolicy {
    arms: usize,
}

impl UniformPolicy {
    pub fn new(arms: usize) -> Self {
        UniformPolicy { arms }
    }
}

impl BanditPolicy for UniformPolicy {
    fn arms(&self) -> usize {
        self.arms
    }

    fn select(&mut self, rng: &mut ChaCha8Rng) -> usize {
        rng.random_range(0..self.arms)
    }

    fn update(&mut self, _arm: usize, _reward: bool) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    const T0: Millis = 1_704_067_200_000; // 2024-01-01T00:00Z

    fn drift_state(held_s: i64, now: Millis) -> AttentionState {
        AttentionState {
            label: AttentionLabel::Drift,
            since: now - held_s * 1000,
            ..AttentionState::focused(0)
        }
    }

    fn fv(now: Millis) -> FeatureVector {
        FeatureVector {
            window_end: now,
            ..Default::default()
        }
    }

    fn shown(b: &mut BanditState, style: NudgeStyle, now: Millis) -> u64 {
        let mut n = Nudge {
            id: 0,
            kind: NudgeKind::Reflective,
            style,
            text: REFLECTIVE_TEXT.into(),
            dopboost_mode: None,
            state: AttentionLabel::Drift,
            created_at: now,
            expires_at: now + 300_000,
        };
        b.register(&mut n)
    }

    #[test]
    fn reflective_after_persisted_drift() {
        let now = T0 + 3_600_000;
        let n = evaluate(&drift_state(150, now), &fv(now), &Preference::default(), &BanditState::new(), now, None, 1)
            .unwrap();
        assert_eq!(n.kind, NudgeKind::Reflective);
        assert_eq!(n.text, "Want to pick up where you left off?");
        assert!(n.expires_at > n.created_at);
        assert!(evaluate(&drift_state(60, now), &fv(now), &Preference::default(), &BanditState::new(), now, None, 1)
            .is_none());
    }

    #[test]
    fn state_to_kind_mapping() {
        let now = T0;
        let p = Preference::default();
        let b = BanditState::new();
        let with = |label| AttentionState {
            label,
            since: now,
            ..AttentionState::focused(0)
        };
        let n = evaluate(&with(AttentionLabel::Hyperfocus), &fv(now), &p, &b, now, None, 0).unwrap();
        assert_eq!((n.kind, n.text.as_str()), (NudgeKind::Breather, "You've been going strong—need a breather?"));
        let n = evaluate(&with(AttentionLabel::Fatigue), &fv(now), &p, &b, now, None, 0).unwrap();
        assert_eq!(n.kind, NudgeKind::Dopboost);
        assert_eq!(n.text, "Want a quick DopBoost? I've got a Glow Factor or Zen Zest ready.");
        assert!(n.dopboost_mode.is_some());
        let n = evaluate(&with(AttentionLabel::Inertia), &fv(now), &p, &b, now, None, 0).unwrap();
        assert_eq!((n.kind, n.text.as_str()), (NudgeKind::Presence, "Still here with you"));
        assert!(evaluate(&with(AttentionLabel::Focused), &fv(now), &p, &b, now, None, 0).is_none());
        let crowded = FeatureVector {
            open_tab_count: 25,
            ..fv(now)
        };
        let n = evaluate(&with(AttentionLabel::Focused), &crowded, &p, &b, now, None, 0).unwrap();
        assert_eq!(n.kind, NudgeKind::WherewasiOffer);

        let no_modes = Preference {
            dopboost_enabled_modes: vec![],
            ..Preference::default()
        };
        let n = evaluate(&with(AttentionLabel::Fatigue), &fv(now), &no_modes, &b, now, None, 0).unwrap();
        assert_eq!((n.kind, n.dopboost_mode), (NudgeKind::Breather, None));
    }

    #[test]
    fn gates() {
        let now = T0 + 23 * 3_600_000; // 23:00 UTC
        let st = drift_state(300, now);
        let b = BanditState::new();
        let quiet = Preference {
            quiet_hours: vec![QuietInterval {
                start: LocalTime::new(22, 0).unwrap(),
                end: LocalTime::new(7, 0).unwrap(),
            }],
            ..Preference::default()
        };
        assert!(evaluate(&st, &fv(now), &quiet, &b, now, None, 0).is_none());
        // Same instant is 09:00 at UTC+10.
        let shifted = Preference {
            utc_offset_minutes: 600,
            ..quiet.clone()
        };
        assert!(evaluate(&st, &fv(now), &shifted, &b, now, None, 0).is_some());

        let off = Preference {
            consent: false,
            ..Preference::default()
        };
        assert!(evaluate(&st, &fv(now), &off, &b, now, None, 0).is_none());

        let p = Preference::default();
        assert!(evaluate(&st, &fv(now), &p, &b, now, Some(now - 899_999), 0).is_none());
        assert!(evaluate(&st, &fv(now), &p, &b, now, Some(now - 900_000), 0).is_some());
    }

    #[test]
    fn accountability_window_only_checkins() {
        let now = T0 + 10_000_000;
        let p = Preference {
            accountability_mode: Some(Accountability {
                goal_text: "draft the proposal".into(),
                window_start: now - 1000,
                window_end: now + 7_200_000,
                checkin_interval_s: 1800,
            }),
            ..Preference::default()
        };
        let b = BanditState::new();
        let n = evaluate(&drift_state(300, now), &fv(now), &p, &b, now, None, 0).unwrap();
        assert_eq!(n.kind, NudgeKind::AccountabilityCheckin);
        assert!(n.text.contains("draft the proposal"));
        assert!(evaluate(&drift_state(300, now), &fv(now), &p, &b, now, Some(now - 1_000_000), 0).is_none());
        assert!(evaluate(&AttentionState::focused(0), &fv(now), &p, &b, now, Some(now - 1_800_000), 0).is_some());
    }

    #[test]
    fn local_time_parsing() {
        let t: LocalTime = serde_json::from_str("\"07:05\"").unwrap();
        assert_eq!(t.minutes(), 425);
        assert_eq!(serde_json::to_string(&t).unwrap(), "\"07:05\"");
        for bad in ["\"24:00\"", "\"7:05\"", "\"07-05\"", "\"07:60\""] {
            assert!(serde_json::from_str::<LocalTime>(bad).is_err(), "{bad}");
        }
        let q = QuietInterval {
            start: LocalTime::new(9, 0).unwrap(),
            end: LocalTime::new(9, 0).unwrap(),
        };
        assert!(!q.contains(540));
    }

    #[test]
    fn preference_validation() {
        assert!(Preference::default().validate().is_ok());
        let p = Preference {
            min_gap_s: 59,
            ..Preference::default()
        };
        assert!(p.validate().is_err());
        let p = Preference {
            accountability_mode: Some(Accountability {
                goal_text: String::new(),
                window_start: 0,
                window_end: 10,
                checkin_interval_s: 60,
            }),
            ..Preference::default()
        };
        assert!(p.validate().is_err());
        let p: Preference = serde_json::from_str(r#"{"min_gap_s": 1200}"#).unwrap();
        assert_eq!(p.min_gap_s, 1200);
        assert!(p.consent);
    }

    #[test]
    fn conjugate_update() {
        let mut b = BanditState::new();
        let id = shown(&mut b, NudgeStyle::GentlePopup, T0);
        let out = b.record_response(id, ResponseKind::Accepted, 5_000, T0 + 5_000).unwrap();
        assert!(out.reward);
        let a = b.arm(&out.key);
        assert_eq!((a.alpha, a.beta), (2, 1));
        assert_eq!(
            b.record_response(id, ResponseKind::Accepted, 0, T0),
            Err(NudgeError::DuplicateResponse(id))
        );
        assert_eq!(
            b.record_response(999, ResponseKind::Dismissed, 0, T0),
            Err(NudgeError::UnknownNudgeId(999))
        );
        // Late acceptance is not a reward.
        let id = shown(&mut b, NudgeStyle::GentlePopup, T0);
        let out = b.record_response(id, ResponseKind::Accepted, 120_001, T0).unwrap();
        assert!(!out.reward);
        assert_eq!(b.arm(&out.key).beta, 2);
    }

    #[test]
    fn three_negatives_suppress_for_a_week() {
        let mut b = BanditState::new();
        let mut now = T0;
        let mut last = None;
        for resp in [ResponseKind::Dismissed, ResponseKind::Snoozed, ResponseKind::Ignored, ResponseKind::Dismissed] {
            let id = shown(&mut b, NudgeStyle::GentlePopup, now);
            last = Some(b.record_response(id, resp, 1000, now).unwrap());
            now += 60_000;
        }
        let out = last.unwrap();
        assert!(out.suppressed);
        let arm = b.arm(&out.key);
        assert_eq!(arm.suppressed_until, Some(now - 60_000 + SUPPRESS_FOR_MS));
        assert_eq!(arm.beta, 5);

        let only_popup = EnabledStyles {
            gentle_popup: true,
            quiet_checkin: false,
            voice_text: false,
        };
        assert_eq!(
            b.select_style(AttentionLabel::Drift, NudgeKind::Reflective, &only_popup, now, 0),
            Err(NudgeError::AllStylesSuppressed)
        );
        // Other contexts are unaffected; suppression lapses after 7 days.
        assert_eq!(
            b.select_style(AttentionLabel::Inertia, NudgeKind::Presence, &only_popup, now, 0),
            Ok(NudgeStyle::GentlePopup)
        );
        let later = arm.suppressed_until.unwrap();
        assert_eq!(
            b.select_style(AttentionLabel::Drift, NudgeKind::Reflective, &only_popup, later, 0),
            Ok(NudgeStyle::GentlePopup)
        );
    }

    #[test]
    fn accept_resets_negative_streak() {
        let mut b = BanditState::new();
        for resp in [ResponseKind::Dismissed, ResponseKind::Dismissed, ResponseKind::Accepted, ResponseKind::Dismissed] {
            let id = shown(&mut b, NudgeStyle::QuietCheckin, T0);
            assert!(!b.record_response(id, resp, 0, T0).unwrap().suppressed);
        }
    }

    #[test]
    fn suppressed_style_falls_back_to_quiet_checkin() {
        let mut b = BanditState::new();
        for _ in 0..3 {
            let id = shown(&mut b, NudgeStyle::GentlePopup, T0);
            b.record_response(id, ResponseKind::Dismissed, 0, T0).unwrap();
        }
        let p = Preference {
            enabled_styles: EnabledStyles {
                gentle_popup: true,
                quiet_checkin: false,
                voice_text: false,
            },
            ..Preference::default()
        };
        let now = T0 + 1000;
        let n = evaluate(&drift_state(200, now), &fv(now), &p, &b, now, None, 0).unwrap();
        assert_eq!(n.style, NudgeStyle::QuietCheckin);
    }

    #[test]
    fn thompson_prefers_strong_arm() {
        // Monte-Carlo: P(X > Y) for X~Beta(50,2), Y~Beta(2,50) is essentially 1.
        let mut b = BanditState::new();
        let key = |style| ArmKey {
            state: AttentionLabel::Drift,
            kind: NudgeKind::Reflective,
            style,
        };
        b.arms.insert(key(NudgeStyle::GentlePopup), Arm { alpha: 50, beta: 2, ..Arm::default() });
        b.arms.insert(key(NudgeStyle::QuietCheckin), Arm { alpha: 2, beta: 50, ..Arm::default() });
        let en = EnabledStyles::default();
        let wins = (0..1000)
            .filter(|&s| {
                b.select_style(AttentionLabel::Drift, NudgeKind::Reflective, &en, T0, s)
                    == Ok(NudgeStyle::GentlePopup)
            })
            .count();
        assert!(wins >= 950, "{wins}");
        assert_eq!(
            b.select_style(AttentionLabel::Drift, NudgeKind::Reflective, &en, T0, 7),
            b.select_style(AttentionLabel::Drift, NudgeKind::Reflective, &en, T0, 7)
        );
    }

    #[test]
    fn dopboost_modes() {
        let zen = Preference {
            dopboost_enabled_modes: vec![DopBoostMode::ZenZest],
            ..Preference::default()
        };
        assert_eq!(dopboost_pick(&zen, 3), Ok(DopBoostMode::ZenZest));
        let none = Preference {
            dopboost_enabled_modes: vec![],
            ..Preference::default()
        };
        assert_eq!(dopboost_pick(&none, 3), Err(NudgeError::NoModesEnabled));
        let p = Preference::default();
        assert_eq!(dopboost_pick(&p, 11), dopboost_pick(&p, 11));
    }

    #[test]
    fn dopboost_uniform_within_three_sigma() {
        let p = Preference::default();
        let n = 10_000u64;
        let mut counts = [0u64; 4];
        for s in 0..n {
            let m = dopboost_pick(&p, s).unwrap();
            counts[DopBoostMode::ALL.iter().position(|x| *x == m).unwrap()] += 1;
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 2500.0).abs() <= 3.0 * sigma, "{counts:?}");
        }
        // Chi-square, 3 dof, p = 0.001 critical value.
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 2500.0).powi(2) / 2500.0).sum();
        assert!(chi2 < 16.27, "{chi2}");
    }

    #[test]
    fn expiry_listing() {
        let mut b = BanditState::new();
        let id = shown(&mut b, NudgeStyle::GentlePopup, T0);
        assert!(b.expired(T0 + 299_999).is_empty());
        assert_eq!(b.expired(T0 + 300_000), vec![id]);
    }
}
