//! Attention-state inference.
//!
//! The rule classifier in [`rules`] is authoritative. [`iforest`] supplies the
//! anomaly score the fatigue rule consumes, and [`knn`] is an optional
//! alternative classifier trained on labeled traces.
//!
//! Other model families (sequence models, tree ensembles, kernel methods) can
//! be plugged in by implementing [`StateModel`].

pub mod iforest;
pub mod knn;
pub mod rules;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::Millis;
use crate::features::FeatureVector;

pub use iforest::{c_factor, AnomalyDetector, DetectorConfig, IsolationForestModel};
pub use knn::KnnModel;
pub use rules::{classify, RuleThresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionLabel {
    Focused,
    Drift,
    Hyperfocus,
    Fatigue,
    Inertia,
}

impl AttentionLabel {
    pub const ALL: [AttentionLabel; 5] = [
        AttentionLabel::Focused,
        AttentionLabel::Drift,
        AttentionLabel::Hyperfocus,
        AttentionLabel::Fatigue,
        AttentionLabel::Inertia,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionLabel::Focused => "focused",
            AttentionLabel::Drift => "drift",
            AttentionLabel::Hyperfocus => "hyperfocus",
            AttentionLabel::Fatigue => "fatigue",
            AttentionLabel::Inertia => "inertia",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AttentionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionLabel {
    type Err = InferenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttentionLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| InferenceError::UnknownLabel(s.to_string()))
    }
}

/// Onset times of the rule conditions that must persist before they bind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConditionOnsets {
    pub churn_since: Option<Millis>,
    pub idle_since: Option<Millis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionState {
    pub label: AttentionLabel,
    pub since: Millis,
    pub confidence: f64,
    pub anomaly_score: f64,
    #[serde(default, skip_serializing)]
    pub onsets: ConditionOnsets,
}

impl AttentionState {
    /// Baseline state at `t`.
    pub fn focused(t: Millis) -> Self {
        AttentionState {
            label: AttentionLabel::Focused,
            since: t,
            confidence: 1.0,
            anomaly_score: 0.0,
            onsets: ConditionOnsets::default(),
        }
    }

    pub fn held_for(&self, now: Millis) -> Millis {
        now - self.since
    }
}

/// Extension point for additional state models.
pub trait StateModel {
    fn predict(&self, fv: &FeatureVector) -> Result<AttentionLabel, InferenceError>;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("c(n) requires n >= 1")]
    NonPositiveN,
    #[error("need at least {need} points, got {have}")]
    TooFewPoints { have: usize, need: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("expected {expected} dimensions, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("anomaly model has not been fitted")]
    UnfittedModel,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("k = {k} exceeds {points} training points")]
    KTooLarge { k: usize, points: usize },
    #[error("k must be odd and positive, got {0}")]
    InvalidK(usize),
    #[error("unknown attention label {0:?}")]
    UnknownLabel(String),
    #[error("model blob: {0}")]
    Decode(&'static str),
}
