//! Synthetic users: persona-driven traces with ground truth, and the
//! harness that scores the classifier, the bandit and delivery cadence.

pub mod eval;
pub mod generate;
pub mod persona;

pub use eval::{
    audit_cadence, calibrate_detector, evaluate_classifier, evaluate_policy, predict_ticks, replay_pipeline,
    run_engine, score_predictions, CadenceAudit, CalibrationError, ClassifierReport, PolicyReport, RunLog,
    StateMetrics, ONSET_TOLERANCE_MS,
};
pub use generate::{generate, GenStats, GroundTruth, SimTrace, TruthInterval, SIM_EPOCH_MS};
pub use persona::{InvalidPersona, Persona, Span, StyleAcceptance};
