//! Evaluation harness: classifier accuracy against ground truth, bandit
//! regret, and cadence audits over engine runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::generate::{generate, GroundTruth, SimTrace};
use super::persona::{InvalidPersona, Persona};
use crate::doubling::CueKind;
use crate::engine::{Engine, EngineConfig, EngineError, Outbound, Pipeline, TickResult};
use crate::events::{EventError, EventKind, Millis};
use crate::features::FeatureConfig;
use crate::inference::{
    AnomalyDetector, AttentionLabel, DetectorConfig, InferenceError, IsolationForestModel, RuleThresholds,
};
use crate::nudge::{BanditPolicy, Preference, ResponseKind};
use crate::store::Store;

pub const ONSET_TOLERANCE_MS: Millis = 30_000;
const LABELS: usize = AttentionLabel::ALL.len();

/// Feeds `trace` through a fresh pipeline, ticking every `tick_ms` from the
/// session start. An event and a tick at the same instant: event first.
pub fn replay_pipeline(
    trace: &SimTrace,
    features: FeatureConfig,
    detector: AnomalyDetector,
    th: &RuleThresholds,
    tick_ms: Millis,
    mut on_tick: impl FnMut(Millis, &TickResult),
) -> Result<(), EventError> {
    let mut p = Pipeline::new(features, detector);
    let mut next_tick = None;
    for rec in &trace.records {
        while let Some(t) = next_tick.filter(|&t| t < rec.t) {
            let r = p.tick(t, th);
            on_tick(t, &r);
            next_tick = Some(t + tick_ms);
        }
        let v = p.ingest(rec)?;
        match v.event.kind {
            EventKind::SessionStart => next_tick = Some(rec.t + tick_ms),
            EventKind::SessionEnd => next_tick = None,
            _ => {}
        }
    }
    Ok(())
}

/// Predicted label at every tick.
pub fn predict_ticks(
    trace: &SimTrace,
    detector: AnomalyDetector,
    th: &RuleThresholds,
) -> Result<Vec<(Millis, AttentionLabel)>, EventError> {
    let mut out = Vec::new();
    replay_pipeline(trace, FeatureConfig::default(), detector, th, 30_000, |t, r| {
        out.push((t, r.state.label))
    })?;
    Ok(out)
}

/// Fits the fatigue detector on a day of the persona's behavior without
/// overruns, standing in for a user's accumulated history.
pub fn calibrate_detector(
    persona: &Persona,
    hours: f64,
    seed: u64,
    cfg: &DetectorConfig,
) -> Result<IsolationForestModel, CalibrationError> {
    let baseline = Persona {
        overrun_per_day: 0.0,
        ..persona.clone()
    };
    let trace = generate(&baseline, hours, seed)?;
    let inert = AnomalyDetector::new(DetectorConfig {
        warmup: usize::MAX,
        ..*cfg
    });
    let mut points = Vec::new();
    replay_pipeline(
        &trace,
        FeatureConfig::default(),
        inert,
        &RuleThresholds::default(),
        30_000,
        |_, r| points.push(r.fv.anomaly_features()),
    )?;
    Ok(IsolationForestModel::fit(&points, cfg.trees, cfg.psi, cfg.seed)?)
}

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Persona(#[from] InvalidPersona),
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateMetrics {
    pub label: AttentionLabel,
    /// Ticks whose (tolerance-adjusted) truth is this label.
    pub support: u64,
    pub predicted: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierReport {
    pub ticks: u64,
    pub accuracy: f64,
    /// `confusion[truth][predicted]`, indexed by [`AttentionLabel::index`].
    pub confusion: [[u64; LABELS]; LABELS],
    pub states: Vec<StateMetrics>,
}

impl ClassifierReport {
    pub fn recall(&self, label: AttentionLabel) -> Option<f64> {
        self.states[label.index()].recall
    }

    /// Smallest recall over labels that occur in the truth.
    pub fn min_recall(&self) -> f64 {
        self.states.iter().filter_map(|s| s.recall).fold(1.0, f64::min)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<11} {:>8} {:>9} {:>9} {:>7}", "state", "support", "predicted", "precision", "recall");
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        for m in &self.states {
            let _ = writeln!(
                s,
                "{:<11} {:>8} {:>9} {:>9} {:>7}",
                m.label.as_str(),
                m.support,
                m.predicted,
                fmt(m.precision),
                fmt(m.recall)
            );
        }
        let _ = writeln!(s, "ticks {}  accuracy {:.4}", self.ticks, self.accuracy);
        s
    }
}

/// Scores predictions against truth. A prediction that matches the truth
/// anywhere within `tolerance_ms` of its tick counts as correct.
pub fn score_predictions(
    preds: &[(Millis, AttentionLabel)],
    truth: &GroundTruth,
    tolerance_ms: Millis,
) -> ClassifierReport {
    let mut confusion = [[0u64; LABELS]; LABELS];
    for &(t, pred) in preds {
        let actual = if truth.labels_within(t - tolerance_ms, t + tolerance_ms).contains(&pred) {
            pred
        } else {
            truth.label_at(t)
        };
        confusion[actual.index()][pred.index()] += 1;
    }
    report(confusion)
}

fn report(confusion: [[u64; LABELS]; LABELS]) -> ClassifierReport {
    let ticks: u64 = confusion.iter().flatten().sum();
    let correct: u64 = (0..LABELS).map(|i| confusion[i][i]).sum();
    let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
    let states = AttentionLabel::ALL
        .iter()
        .map(|&label| {
            let i = label.index();
            let support = confusion[i].iter().sum();
            let predicted = confusion.iter().map(|row| row[i]).sum();
            StateMetrics {
                label,
                support,
                predicted,
                precision: ratio(confusion[i][i], predicted),
                recall: ratio(confusion[i][i], support),
            }
        })
        .collect();
    ClassifierReport {
        ticks,
        accuracy: ratio(correct, ticks).unwrap_or(0.0),
        confusion,
        states,
    }
}

/// Rule classifier over the trace's ticks with the 30 s onset tolerance.
pub fn evaluate_classifier(
    trace: &SimTrace,
    th: &RuleThresholds,
    model: Option<IsolationForestModel>,
) -> Result<ClassifierReport, EventError> {
    let detector = match model {
        Some(m) => AnomalyDetector::with_model(m),
        None => AnomalyDetector::new(DetectorConfig::default()),
    };
    let preds = predict_ticks(trace, detector, th)?;
    Ok(score_predictions(&preds, &trace.truth, ONSET_TOLERANCE_MS))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyReport {
    pub rounds: usize,
    pub best_arm: usize,
    pub accepted: u64,
    /// Cumulative expected regret against always playing the best arm.
    pub regret: Vec<f64>,
    #[serde(skip)]
    pub choices: Vec<usize>,
}

impl PolicyReport {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.rounds.max(1) as f64
    }

    /// Share of the final `last` rounds that played the best arm.
    pub fn best_fraction(&self, last: usize) -> f64 {
        let tail = &self.choices[self.choices.len().saturating_sub(last)..];
        tail.iter().filter(|&&a| a == self.best_arm).count() as f64 / tail.len().max(1) as f64
    }

    /// Regret accrued in each third of the horizon.
    pub fn regret_by_thirds(&self) -> [f64; 3] {
        let n = self.regret.len();
        let at = |i: usize| if i == 0 { 0.0 } else { self.regret[i - 1] };
        let (a, b) = (n / 3, 2 * n / 3);
        [at(a), at(b) - at(a), at(n) - at(b)]
    }
}

/// Plays `policy` against Bernoulli arms with acceptance probabilities
/// `probs` for `rounds` rounds.
pub fn evaluate_policy<P: BanditPolicy + ?Sized>(
    policy: &mut P,
    probs: &[f64],
    rounds: usize,
    seed: u64,
) -> PolicyReport {
    assert_eq!(policy.arms(), probs.len(), "policy and arm count disagree");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let best_arm = (0..probs.len())
        .max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a)))
        .expect("at least one arm");
    let best = probs[best_arm];
    let mut regret = Vec::with_capacity(rounds);
    let mut choices = Vec::with_capacity(rounds);
    let mut total = 0.0;
    let mut accepted = 0;
    for _ in 0..rounds {
        let arm = policy.select(&mut rng);
        let reward = rng.random_bool(probs[arm]);
        policy.update(arm, reward);
        accepted += u64::from(reward);
        total += best - probs[arm];
        regret.push(total);
        choices.push(arm);
    }
    PolicyReport {
        rounds,
        best_arm,
        accepted,
        regret,
        choices,
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunLog {
    /// Outbound events with the engine clock at emission.
    pub events: Vec<(Millis, Outbound)>,
    pub responses: u64,
    pub accepted: u64,
}

impl RunLog {
    pub fn nudge_times(&self) -> Vec<Millis> {
        self.events
            .iter()
            .filter_map(|(_, o)| match o {
                Outbound::Nudge(n) => Some(n.created_at),
                _ => None,
            })
            .collect()
    }

    pub fn affirmation_times(&self) -> Vec<Millis> {
        self.events
            .iter()
            .filter_map(|(_, o)| match o {
                Outbound::Cue(c) if c.kind == CueKind::Affirmation => Some(c.at),
                _ => None,
            })
            .collect()
    }
}

/// Drives an engine through `trace`, answering each nudge the way `persona`
/// would: accept with the style's probability, otherwise dismiss or ignore.
/// With `doubling` set a body-doubling session runs for the whole trace.
pub fn run_engine(
    trace: &SimTrace,
    persona: &Persona,
    prefs: Preference,
    cfg: EngineConfig,
    model: Option<IsolationForestModel>,
    store: Option<Store>,
    doubling: bool,
) -> Result<(Engine, RunLog), EngineError> {
    let mut engine = Engine::new(cfg, prefs, store)?;
    if let Some(m) = model {
        engine = engine.with_model(m);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7e57_0f5e);
    let mut pending: BTreeMap<(Millis, u64), ResponseKind> = BTreeMap::new();
    let mut log = RunLog::default();

    let mut record = |engine: &Engine, out: Vec<Outbound>, log: &mut RunLog, pending: &mut BTreeMap<_, _>| {
        for o in out {
            if let Outbound::Nudge(n) = &o {
                let latency = rng.random_range(5_000..=60_000);
                let value = if rng.random_bool(persona.acceptance.get(n.style)) {
                    Some(ResponseKind::Accepted)
                } else if rng.random_bool(persona.dismiss_share) {
                    Some(ResponseKind::Dismissed)
                } else {
                    None
                };
                if let Some(v) = value {
                    pending.insert((n.created_at + latency, n.id), v);
                }
            }
            log.events.push((engine.clock(), o));
        }
    };

    for rec in &trace.records {
        while let Some((&(t, id), &v)) = pending.iter().next().filter(|((t, _), _)| *t <= rec.t) {
            pending.remove(&(t, id));
            let out = engine.advance_to(t)?;
            record(&engine, out, &mut log, &mut pending);
            if engine.respond(id, v, t).is_ok() {
                log.responses += 1;
                log.accepted += u64::from(v == ResponseKind::Accepted);
            }
            let out = engine.drain();
            record(&engine, out, &mut log, &mut pending);
        }
        let out = engine.ingest(rec)?;
        record(&engine, out, &mut log, &mut pending);
        if doubling && rec.kind == EventKind::SessionStart.as_str() && engine.doubling_start(rec.t).is_ok() {
            let out = engine.drain();
            record(&engine, out, &mut log, &mut pending);
        }
    }
    let out = engine.advance_to(trace.end)?;
    record(&engine, out, &mut log, &mut pending);
    Ok((engine, log))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CadenceAudit {
    pub nudges: u64,
    pub affirmations: u64,
    pub quiet_hour_nudges: u64,
    pub short_gaps: u64,
    pub consent_off_nudges: u64,
    pub affirmation_gap_violations: u64,
}

impl CadenceAudit {
    pub fn violations(&self) -> u64 {
        self.quiet_hour_nudges + self.short_gaps + self.consent_off_nudges + self.affirmation_gap_violations
    }
}

fn quiet_between(prefs: &Preference, a: Millis, b: Millis) -> bool {
    (a..=b).step_by(60_000).chain([b]).any(|t| prefs.in_quiet_hours(t))
}

/// Exhaustive check of a run log against the delivery rules in `prefs`.
/// An affirmation gap must lie within the cadence bounds unless quiet hours
/// swallowed the cues in between.
pub fn audit_cadence(log: &RunLog, prefs: &Preference, min_s: u64, max_s: u64) -> CadenceAudit {
    let nudges = log.nudge_times();
    let affirmations = log.affirmation_times();
    let mut a = CadenceAudit {
        nudges: nudges.len() as u64,
        affirmations: affirmations.len() as u64,
        ..Default::default()
    };
    let min_gap = prefs.min_gap_s as Millis * 1000;
    for &t in &nudges {
        a.quiet_hour_nudges += u64::from(prefs.in_quiet_hours(t));
        a.consent_off_nudges += u64::from(!prefs.consent);
    }
    a.short_gaps = nudges.windows(2).filter(|w| w[1] - w[0] < min_gap).count() as u64;
    let (lo, hi) = (min_s as Millis * 1000, max_s as Millis * 1000);
    for w in affirmations.windows(2) {
        let gap = w[1] - w[0];
        let ok = if quiet_between(prefs, w[0], w[1]) {
            gap >= lo
        } else {
            (lo..=hi).contains(&gap)
        };
        a.affirmation_gap_violations += u64::from(!ok);
    }
    a
}
