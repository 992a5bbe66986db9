//! Digital body-doubling sessions: presence cues on a randomized rhythm plus
//! check-ins when attention circles or tabs keep coming back.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::Millis;
use crate::features::FeatureVector;
use crate::inference::{AttentionLabel, AttentionState};
use crate::nudge::Preference;

pub const CALM_AFFIRMATION: &str = "Still with you \u{2014} let's keep going";
pub const ENERGETIC_AFFIRMATION: &str = "Still with you \u{2014} you've got momentum, let's keep going!";
pub const REFLECTION_TEXT: &str = "You've been circling between tasks. Want to reset or re-center?";
/// Minimum spacing of check-in cues.
pub const CHECKIN_GAP_MS: Millis = 600_000;

pub fn reopened_text(times: u32) -> String {
    format!("Would you like to reflect on that tab you've reopened {times} times?")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tone {
    #[default]
    Calm,
    Energetic,
    SilentPulse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueKind {
    Affirmation,
    Reflection,
    ReopenedPrompt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cue {
    pub kind: CueKind,
    pub tone: Tone,
    /// Absent for silent-pulse sessions, which emit markers only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub at: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DoublingError {
    #[error("a body-doubling session is already active")]
    SessionAlreadyActive,
    #[error("no body-doubling session is active")]
    NoActiveSession,
    #[error("consent is off")]
    ConsentOff,
    #[error("cadence bounds must satisfy 60 <= min_s <= max_s")]
    InvalidCadence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublingSummary {
    pub duration_s: f64,
    pub cues_emitted: u64,
}

#[derive(Debug, Clone)]
pub struct DoublingSession {
    pub started_at: Millis,
    pub min_s: u64,
    pub max_s: u64,
    pub tone: Tone,
    pub next_cue_at: Millis,
    pub last_checkin_at: Option<Millis>,
    pub seed: u64,
    pub cues_emitted: u64,
    rng: ChaCha8Rng,
}

impl DoublingSession {
    pub fn start(prefs: &Preference, now: Millis, seed: u64) -> Result<Self, DoublingError> {
        if !prefs.consent {
            return Err(DoublingError::ConsentOff);
        }
        let bd = prefs.body_double;
        if bd.min_s < 60 || bd.max_s < bd.min_s {
            return Err(DoublingError::InvalidCadence);
        }
        let mut s = DoublingSession {
            started_at: now,
            min_s: bd.min_s,
            max_s: bd.max_s,
            tone: bd.tone,
            next_cue_at: now,
            last_checkin_at: None,
            seed,
            cues_emitted: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.next_cue_at = now + s.draw_gap();
        Ok(s)
    }

    fn draw_gap(&mut self) -> Millis {
        let lo = self.min_s as Millis * 1000;
        let hi = self.max_s as Millis * 1000;
        self.rng.random_range(lo..=hi)
    }

    fn text(&self, s: impl Into<String>) -> Option<String> {
        (self.tone != Tone::SilentPulse).then(|| s.into())
    }

    /// Cues due at `now`. The affirmation timer is rescheduled whenever it
    /// fires, including inside quiet hours where nothing is emitted.
    /// Check-ins (drift reflection first, then the reopened-tab prompt) share
    /// one minimum spacing.
    pub fn next_cue(
        &mut self,
        now: Millis,
        state: &AttentionState,
        fv: &FeatureVector,
        prefs: &Preference,
        reopen_threshold: u32,
    ) -> Vec<Cue> {
        let quiet = prefs.in_quiet_hours(now);
        let mut out = Vec::new();
        if now >= self.next_cue_at {
            self.next_cue_at = now + self.draw_gap();
            if !quiet {
                let text = match self.tone {
                    Tone::Calm => self.text(CALM_AFFIRMATION),
                    Tone::Energetic => self.text(ENERGETIC_AFFIRMATION),
                    Tone::SilentPulse => None,
                };
                out.push(Cue {
                    kind: CueKind::Affirmation,
                    tone: self.tone,
                    text,
                    at: now,
                });
            }
        }

        let checkin_ok = !quiet && self.last_checkin_at.is_none_or(|t| now - t >= CHECKIN_GAP_MS);
        if checkin_ok {
            let drift_held = state.label == AttentionLabel::Drift
                && state.held_for(now) as f64 >= prefs.thresholds.drift_persist_s * 1000.0;
            let checkin = if drift_held {
                Some((CueKind::Reflection, REFLECTION_TEXT.to_string()))
            } else if fv.reopened_count > 0 {
                Some((CueKind::ReopenedPrompt, reopened_text(reopen_threshold)))
            } else {
                None
            };
            if let Some((kind, text)) = checkin {
                self.last_checkin_at = Some(now);
                out.push(Cue {
                    kind,
                    tone: self.tone,
                    text: self.text(text),
                    at: now,
                });
            }
        }
        self.cues_emitted += out.len() as u64;
        out
    }

    pub fn stop(self, now: Millis) -> DoublingSummary {
        DoublingSummary {
            duration_s: (now - self.started_at).max(0) as f64 / 1000.0,
            cues_emitted: self.cues_emitted,
        }
    }
}

/// At most one active session.
#[derive(Debug, Clone, Default)]
pub struct Doubling {
    session: Option<DoublingSession>,
}

impl Doubling {
    pub fn session(&self) -> Option<&DoublingSession> {
        self.session.as_ref()
    }

    pub fn session_mut(&mut self) -> Option<&mut DoublingSession> {
        self.session.as_mut()
    }

    pub fn is_active(&self) -> bool {
        self.session.is_some()
    }

    pub fn start(&mut self, prefs: &Preference, now: Millis, seed: u64) -> Result<&DoublingSession, DoublingError> {
        if self.session.is_some() {
            return Err(DoublingError::SessionAlreadyActive);
        }
        Ok(self.session.insert(DoublingSession::start(prefs, now, seed)?))
    }

    pub fn stop(&mut self, now: Millis) -> Result<DoublingSummary, DoublingError> {
        self.session
            .take()
            .map(|s| s.stop(now))
            .ok_or(DoublingError::NoActiveSession)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nudge::{BodyDoubleSettings, LocalTime, QuietInterval};

    fn focused() -> AttentionState {
        AttentionState::focused(0)
    }

    fn prefs(tone: Tone) -> Preference {
        Preference {
            body_double: BodyDoubleSettings {
                tone,
                ..Default::default()
            },
            ..Preference::default()
        }
    }

    #[test]
    fn start_is_reproducible_and_in_bounds() {
        let p = prefs(Tone::Calm);
        let a = DoublingSession::start(&p, 1000, 9).unwrap();
        let b = DoublingSession::start(&p, 1000, 9).unwrap();
        assert_eq!(a.next_cue_at, b.next_cue_at);
        assert!((1000 + 420_000..=1000 + 720_000).contains(&a.next_cue_at));
    }

    #[test]
    fn guards() {
        let mut d = Doubling::default();
        let off = Preference {
            consent: false,
            ..Preference::default()
        };
        assert_eq!(d.start(&off, 0, 0).err(), Some(DoublingError::ConsentOff));
        d.start(&Preference::default(), 0, 0).unwrap();
        assert_eq!(
            d.start(&Preference::default(), 0, 0).err(),
            Some(DoublingError::SessionAlreadyActive)
        );
        d.stop(10).unwrap();
        assert_eq!(d.stop(10), Err(DoublingError::NoActiveSession));
    }

    #[test]
    fn nothing_before_due_when_focused() {
        let p = prefs(Tone::Calm);
        let mut s = DoublingSession::start(&p, 0, 1).unwrap();
        let due = s.next_cue_at;
        assert!(s.next_cue(due - 1, &focused(), &FeatureVector::default(), &p, 3).is_empty());
        let cues = s.next_cue(due, &focused(), &FeatureVector::default(), &p, 3);
        assert_eq!(cues.len(), 1);
        assert_eq!(cues[0].text.as_deref(), Some("Still with you — let's keep going"));
    }

    #[test]
    fn scripted_half_hour_session() {
        let p = prefs(Tone::Calm);
        let mut s = DoublingSession::start(&p, 0, 4).unwrap();
        let mut emitted = 0;
        let mut t = 0;
        while t <= 1_800_000 {
            emitted += s.next_cue(t, &focused(), &FeatureVector::default(), &p, 3).len();
            t += 1000;
        }
        let summary = s.stop(1_800_000);
        assert_eq!(summary.duration_s, 1800.0);
        assert_eq!(summary.cues_emitted, emitted as u64);
        // 1800 s at 420-720 s spacing fits 2 to 4 affirmations.
        assert!((2..=4).contains(&summary.cues_emitted), "{summary:?}");
    }

    #[test]
    fn drift_reflection_and_spacing() {
        let p = prefs(Tone::Calm);
        let mut s = DoublingSession::start(&p, 0, 2).unwrap();
        let drift = AttentionState {
            label: AttentionLabel::Drift,
            since: 0,
            ..focused()
        };
        let cues = s.next_cue(150_000, &drift, &FeatureVector::default(), &p, 3);
        assert_eq!(cues.len(), 1);
        assert_eq!(cues[0].kind, CueKind::Reflection);
        assert_eq!(
            cues[0].text.as_deref(),
            Some("You've been circling between tasks. Want to reset or re-center?")
        );
        let later = s.next_cue(150_000 + 599_999, &drift, &FeatureVector::default(), &p, 3);
        assert!(later.iter().all(|c| c.kind == CueKind::Affirmation));
        let later = s.next_cue(150_000 + 600_000, &drift, &FeatureVector::default(), &p, 3);
        assert!(later.iter().any(|c| c.kind == CueKind::Reflection));
    }

    #[test]
    fn reopened_prompt() {
        let p = prefs(Tone::Calm);
        let mut s = DoublingSession::start(&p, 0, 2).unwrap();
        let fv = FeatureVector {
            reopened_count: 1,
            ..Default::default()
        };
        let cues = s.next_cue(1000, &focused(), &fv, &p, 3);
        assert_eq!(
            cues[0].text.as_deref(),
            Some("Would you like to reflect on that tab you've reopened 3 times?")
        );
    }

    #[test]
    fn silent_pulse_has_no_text() {
        let p = prefs(Tone::SilentPulse);
        let mut s = DoublingSession::start(&p, 0, 3).unwrap();
        let drift = AttentionState {
            label: AttentionLabel::Drift,
            since: 0,
            ..focused()
        };
        let mut all = Vec::new();
        for t in (0..8 * 3_600_000).step_by(30_000) {
            all.extend(s.next_cue(t, &drift, &FeatureVector::default(), &p, 3));
        }
        assert!(!all.is_empty());
        assert!(all.iter().all(|c| c.text.is_none()));
    }

    #[test]
    fn quiet_hours_reschedule_without_emitting() {
        let p = Preference {
            quiet_hours: vec![QuietInterval {
                start: LocalTime::new(0, 0).unwrap(),
                end: LocalTime::new(12, 0).unwrap(),
            }],
            ..prefs(Tone::Calm)
        };
        let mut s = DoublingSession::start(&p, 0, 5).unwrap();
        let due = s.next_cue_at;
        assert!(s.next_cue(due, &focused(), &FeatureVector::default(), &p, 3).is_empty());
        assert!(s.next_cue_at > due);
    }
}
