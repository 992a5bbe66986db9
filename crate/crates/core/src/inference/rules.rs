use serde::{Deserialize, Serialize};

use super::{AttentionLabel, AttentionState, ConditionOnsets, InferenceError};
use crate::features::FeatureVector;

/// Tab-switch rate below which a long dwell counts as hyperfocus.
pub const HYPERFOCUS_MAX_SWITCH_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleThresholds {
    pub drift_rate_per_min: f64,
    pub drift_min_contexts: u32,
    pub drift_persist_s: f64,
    pub hyperfocus_dwell_s: f64,
    pub inertia_idle_fraction: f64,
    pub inertia_window_s: f64,
    pub fatigue_active_s: f64,
    pub fatigue_anomaly: f64,
}

impl Default for RuleThresholds {
    fn default() -> Self {
        RuleThresholds {
            drift_rate_per_min: 6.0,
            drift_min_contexts: 4,
            drift_persist_s: 120.0,
            hyperfocus_dwell_s: 2700.0,
            inertia_idle_fraction: 0.8,
            inertia_window_s: 600.0,
            fatigue_active_s: 5400.0,
            fatigue_anomaly: 0.6,
        }
    }
}

impl RuleThresholds {
    pub fn validate(&self) -> Result<(), InferenceError> {
        let positive = [
            self.drift_rate_per_min,
            f64::from(self.drift_min_contexts),
            self.drift_persist_s,
            self.hyperfocus_dwell_s,
            self.inertia_window_s,
            self.fatigue_active_s,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(InferenceError::InvalidParameter(
                "rule thresholds must be positive",
            ));
        }
        for f in [self.inertia_idle_fraction, self.fatigue_anomaly] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(InferenceError::InvalidParameter(
                    "rule fractions must lie in (0, 1]",
                ));
            }
        }
        Ok(())
    }
}

enum Cond {
    AtLeast(f64, f64),
    Below(f64, f64),
}

impl Cond {
    fn holds(&self) -> bool {
        match *self {
            Cond::AtLeast(v, t) => v >= t,
            Cond::Below(v, t) => v < t,
        }
    }

    /// Relative distance to the threshold on the satisfied side (0 if unmet).
    fn margin(&self) -> f64 {
        let (d, t) = match *self {
            Cond::AtLeast(v, t) => (v - t, t),
            Cond::Below(v, t) => (t - v, t),
        };
        if self.holds() {
            (d / t).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    /// Relative distance still to go before the condition holds.
    fn shortfall(&self) -> f64 {
        let (d, t) = match *self {
            Cond::AtLeast(v, t) => (t - v, t),
            Cond::Below(v, t) => (v - t, t),
        };
        if self.holds() {
            0.0
        } else {
            (d / t).clamp(0.0, 1.0)
        }
    }
}

fn min_margin(conds: &[Cond]) -> f64 {
    conds.iter().map(Cond::margin).fold(1.0, f64::min)
}

fn max_shortfall(conds: &[Cond]) -> f64 {
    conds.iter().map(Cond::shortfall).fold(0.0, f64::max)
}

/// Maps a feature vector to an attention state.
///
/// Precedence is fixed: inertia > drift > fatigue > hyperfocus > focused.
/// Inertia and drift need their conditions to hold continuously for
/// `inertia_window_s` and `drift_persist_s`; the onset of each condition is
/// carried in `prev.onsets`. `since` changes only when the label changes.
/// Confidence is `0.5 + 0.5 * m`, where `m` is the smallest relative margin
/// of the binding rule's conditions (for focused: the smallest shortfall of
/// any rule).
pub fn classify(
    fv: &FeatureVector,
    anomaly_score: f64,
    prev: &AttentionState,
    th: &RuleThresholds,
) -> AttentionState {
    let now = fv.window_end;

    let idle = [Cond::AtLeast(fv.idle_fraction, th.inertia_idle_fraction)];
    let churn = [
        Cond::AtLeast(fv.tab_switch_rate, th.drift_rate_per_min),
        Cond::AtLeast(
            f64::from(fv.distinct_contexts),
            f64::from(th.drift_min_contexts),
        ),
    ];
    let fatigue = [
        Cond::AtLeast(fv.active_since_break_s, th.fatigue_active_s),
        Cond::AtLeast(anomaly_score, th.fatigue_anomaly),
    ];
    let hyper = [
        Cond::AtLeast(fv.longest_dwell_s, th.hyperfocus_dwell_s),
        Cond::Below(fv.tab_switch_rate, HYPERFOCUS_MAX_SWITCH_RATE),
    ];

    let onset = |holds: bool, prev: Option<i64>| holds.then(|| prev.unwrap_or(now).min(now));
    let onsets = ConditionOnsets {
        idle_since: onset(idle.iter().all(Cond::holds), prev.onsets.idle_since),
        churn_since: onset(churn.iter().all(Cond::holds), prev.onsets.churn_since),
    };
    let persisted = |since: Option<i64>, secs: f64| {
        since.is_some_and(|s| (now - s) as f64 >= secs * 1000.0)
    };

    let (label, margin) = if persisted(onsets.idle_since, th.inertia_window_s) {
        (AttentionLabel::Inertia, min_margin(&idle))
    } else if persisted(onsets.churn_since, th.drift_persist_s) {
        (AttentionLabel::Drift, min_margin(&churn))
    } else if fatigue.iter().all(Cond::holds) {
        (AttentionLabel::Fatigue, min_margin(&fatigue))
    } else if hyper.iter().all(Cond::holds) {
        (AttentionLabel::Hyperfocus, min_margin(&hyper))
    } else {
        let m = [
            max_shortfall(&idle),
            max_shortfall(&churn),
            max_shortfall(&fatigue),
            max_shortfall(&hyper),
        ]
        .into_iter()
        .fold(1.0, f64::min);
        (AttentionLabel::Focused, m)
    };

    AttentionState {
        label,
        since: if label == prev.label { prev.since } else { now },
        confidence: 0.5 + 0.5 * margin,
        anomaly_score,
        onsets,
    }
}
