use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nudge::NudgeStyle;

/// Inclusive `[lo, hi]` bounds for a uniform draw.
pub type Span = [f64; 2];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid persona: {0}")]
pub struct InvalidPersona(pub String);

/// Probability that a delivered nudge of each style is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StyleAcceptance {
    pub gentle_popup: f64,
    pub quiet_checkin: f64,
    pub voice_text: f64,
}

impl Default for StyleAcceptance {
    fn default() -> Self {
        StyleAcceptance {
            gentle_popup: 0.5,
            quiet_checkin: 0.35,
            voice_text: 0.2,
        }
    }
}

impl StyleAcceptance {
    pub fn get(&self, style: NudgeStyle) -> f64 {
        match style {
            NudgeStyle::GentlePopup => self.gentle_popup,
            NudgeStyle::QuietCheckin => self.quiet_checkin,
            NudgeStyle::VoiceText => self.voice_text,
        }
    }
}

/// Behavioral parameters of a simulated user.
///
/// A day is a sequence of work blocks, each followed by a rest. A block is
/// ordinary work (optionally interrupted by drift episodes), a single-context
/// hyperfocus stretch, or an overrun where the break is skipped and the user
/// ends up ping-ponging between two apps. A rest is a short break or a long
/// stall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Persona {
    pub name: String,
    /// Focus changes per minute during ordinary work.
    pub base_switch_rate: f64,
    /// Share of ordinary focus changes that are tab switches.
    pub tab_share: f64,
    pub work_block_min: Span,
    pub break_min: Span,
    pub idle_blips_per_hour: f64,
    pub idle_blip_s: Span,
    /// Drift arrivals per hour of ordinary work (Poisson).
    pub drift_per_hour: f64,
    pub drift_min: Span,
    pub drift_switch_rate: f64,
    pub drift_sites: u32,
    pub hyperfocus_per_day: f64,
    pub hyperfocus_min: Span,
    pub stall_per_day: f64,
    pub stall_min: Span,
    pub overrun_per_day: f64,
    pub overrun_switch_rate: f64,
    pub overrun_tail_min: Span,
    /// Bounds of the open-tab random walk.
    pub tabs: [u32; 2],
    pub tab_churn_per_min: f64,
    pub acceptance: StyleAcceptance,
    /// Share of non-accepted nudges that are dismissed rather than ignored.
    pub dismiss_share: f64,
}

impl Default for Persona {
    fn default() -> Self {
        Persona {
            name: "default".into(),
            base_switch_rate: 0.8,
            tab_share: 0.4,
            work_block_min: [40.0, 60.0],
            break_min: [5.0, 12.0],
            idle_blips_per_hour: 2.0,
            idle_blip_s: [20.0, 90.0],
            drift_per_hour: 0.6,
            drift_min: [6.0, 12.0],
            drift_switch_rate: 15.0,
            drift_sites: 8,
            hyperfocus_per_day: 2.0,
            hyperfocus_min: [60.0, 80.0],
            stall_per_day: 2.0,
            stall_min: [18.0, 30.0],
            overrun_per_day: 2.0,
            overrun_switch_rate: 10.0,
            overrun_tail_min: [10.0, 20.0],
            tabs: [6, 26],
            tab_churn_per_min: 0.3,
            acceptance: StyleAcceptance::default(),
            dismiss_share: 0.5,
        }
    }
}

/// Blocks plus rests average a little over an hour.
const BLOCKS_PER_DAY: f64 = 22.0;

impl Persona {
    pub fn drift_heavy() -> Self {
        Persona {
            name: "drift_heavy".into(),
            drift_per_hour: 2.0,
            drift_min: [4.0, 8.0],
            ..Persona::default()
        }
    }

    /// Ordinary work only: no drift, stalls, overruns or hyperfocus.
    pub fn steady() -> Self {
        Persona {
            name: "steady".into(),
            drift_per_hour: 0.0,
            hyperfocus_per_day: 0.0,
            stall_per_day: 0.0,
            overrun_per_day: 0.0,
            ..Persona::default()
        }
    }

    /// Never idle, never drifting: a single uninterrupted stream of ordinary
    /// switching.
    pub fn flat() -> Self {
        Persona {
            name: "flat".into(),
            idle_blips_per_hour: 0.0,
            work_block_min: [30.0, 30.0],
            break_min: [0.0, 0.0],
            ..Persona::steady()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Persona::default()),
            "drift_heavy" => Some(Persona::drift_heavy()),
            "steady" => Some(Persona::steady()),
            "flat" => Some(Persona::flat()),
            _ => None,
        }
    }

    pub(crate) fn block_probs(&self) -> (f64, f64, f64) {
        (
            self.hyperfocus_per_day / BLOCKS_PER_DAY,
            self.overrun_per_day / BLOCKS_PER_DAY,
            self.stall_per_day / BLOCKS_PER_DAY,
        )
    }

    /// Breaks of zero length mean the persona never rests.
    pub(crate) fn rests(&self) -> bool {
        self.break_min[1] > 0.0
    }

    pub fn validate(&self) -> Result<(), InvalidPersona> {
        let bad = |m: &str| Err(InvalidPersona(m.to_string()));
        let rates = [
            self.base_switch_rate,
            self.idle_blips_per_hour,
            self.drift_per_hour,
            self.drift_switch_rate,
            self.hyperfocus_per_day,
            self.stall_per_day,
            self.overrun_per_day,
            self.overrun_switch_rate,
            self.tab_churn_per_min,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("rates must be finite and >= 0");
        }
        let probs = [
            self.tab_share,
            self.acceptance.gentle_popup,
            self.acceptance.quiet_checkin,
            self.acceptance.voice_text,
            self.dismiss_share,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probabilities must lie in [0, 1]");
        }
        let spans = [
            ("work_block_min", self.work_block_min),
            ("break_min", self.break_min),
            ("idle_blip_s", self.idle_blip_s),
            ("drift_min", self.drift_min),
            ("hyperfocus_min", self.hyperfocus_min),
            ("stall_min", self.stall_min),
            ("overrun_tail_min", self.overrun_tail_min),
        ];
        for (name, [lo, hi]) in spans {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(InvalidPersona(format!("{name} must satisfy 0 <= lo <= hi")));
            }
        }
        if self.base_switch_rate <= 0.0 {
            return bad("base_switch_rate must be positive");
        }
        if self.work_block_min[0] < 5.0 || self.work_block_min[1] > 70.0 {
            return bad("work blocks must last 5 to 70 minutes");
        }
        // Rests must separate cleanly into breaks (never stalls) and stalls.
        if self.break_min[1] >= 12.5 || (self.rests() && self.break_min[0] < 3.5) {
            return bad("breaks must last 3.5 to 12.5 minutes, or be 0 to disable rests");
        }
        if self.stall_per_day > 0.0 && self.stall_min[0] < 15.0 {
            return bad("stalls must last at least 15 minutes");
        }
        if self.idle_blip_s[1] >= 150.0 {
            return bad("idle blips must stay under 150 seconds");
        }
        if self.drift_per_hour > 0.0 {
            if self.drift_switch_rate < 9.0 {
                return bad("drift_switch_rate must be at least 9 per minute");
            }
            if self.drift_min[0] < 3.0 || self.drift_min[1] > 15.0 {
                return bad("drift episodes must last 3 to 15 minutes");
            }
            if self.drift_sites < 4 {
                return bad("drift needs at least 4 sites");
            }
        }
        if self.hyperfocus_per_day > 0.0
            && (self.hyperfocus_min[0] < 50.0 || self.hyperfocus_min[1] > 80.0)
        {
            return bad("hyperfocus blocks must last 50 to 80 minutes");
        }
        if self.overrun_per_day > 0.0 && self.overrun_switch_rate < 6.0 {
            return bad("overrun_switch_rate must be at least 6 per minute");
        }
        let (h, o, s) = self.block_probs();
        if h + o > 1.0 || s > 1.0 {
            return bad("per-day block counts exceed the number of blocks in a day");
        }
        if (h > 0.0 || o > 0.0 || s > 0.0) && !self.rests() {
            return bad("hyperfocus, stalls and overruns need breaks");
        }
        if self.tabs[0] > self.tabs[1] {
            return bad("tabs must satisfy min <= max");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["default", "drift_heavy", "steady", "flat"] {
            Persona::preset(name).unwrap().validate().unwrap();
        }
        assert!(Persona::preset("nope").is_none());
    }

    #[test]
    fn rejects_out_of_range() {
        let p = Persona {
            drift_per_hour: -1.0,
            ..Persona::default()
        };
        assert!(p.validate().is_err());
        let p = Persona {
            acceptance: StyleAcceptance {
                gentle_popup: 1.5,
                ..Default::default()
            },
            ..Persona::default()
        };
        assert!(p.validate().is_err());
        let p = Persona {
            break_min: [5.0, 14.0],
            ..Persona::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn json_defaults_fill_missing_fields() {
        let p: Persona = serde_json::from_str(r#"{"name":"x","drift_per_hour":1.5}"#).unwrap();
        assert_eq!(p.drift_per_hour, 1.5);
        assert_eq!(p.base_switch_rate, 0.8);
    }
}
