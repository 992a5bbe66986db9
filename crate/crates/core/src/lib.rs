//! Attention-state inference and soft interventions over a local activity
//! stream: feature windows, rule and model-based classifiers, a
//! Thompson-sampling nudge policy, body-doubling cues, an encrypted
//! append-only store, and a persona simulator to evaluate all of it.

pub mod doubling;
pub mod engine;
pub mod events;
pub mod features;
pub mod inference;
pub mod nudge;
pub mod recall;
pub mod sim;
pub mod store;

pub use doubling::{Cue, CueKind, DoublingError, DoublingSummary, Tone};
pub use engine::{Engine, EngineConfig, EngineError, Outbound};
pub use events::{
    ActivityEvent, ContextKind, ContextRef, EventError, EventKind, LabelHandle, Millis, TraceRecord,
};
pub use features::{FeatureConfig, FeatureVector};
pub use inference::{AttentionLabel, AttentionState, InferenceError, RuleThresholds};
pub use nudge::{Nudge, NudgeError, NudgeKind, NudgeStyle, Preference, ResponseKind};
pub use recall::{RecallEntry, RecallTrail};
pub use store::{Store, StoreError, WeeklySummary};
