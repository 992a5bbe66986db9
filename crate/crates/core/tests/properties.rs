#[path = "support/features_oracle.rs"]
mod features_oracle;

use std::collections::HashSet;

use focusloom_core::events::{hash_context, ContextKind, ContextRef, EventKind, TraceRecord};
use focusloom_core::features::{FeatureConfig, FeatureVector, FeatureWindow};
use focusloom_core::inference::{classify, AttentionState, RuleThresholds};
use focusloom_core::recall::{RecallConfig, RecallTrail};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use features_oracle::{batch, close, random_stream};

#[test]
fn incremental_window_matches_batch_on_1000_traces() {
    let cfg = FeatureConfig::default();
    let mut checked = 0;
    for seed in 0..1000 {
        let (events, probes) = random_stream(seed);
        let mut w = FeatureWindow::new(cfg);
        let mut i = 0;
        for &p in &probes {
            while i < events.len() && events[i].t <= p {
                w.update(&events[i]);
                i += 1;
                // Probe right after each event as well.
                let t = events[i - 1].t;
                if i == events.len() || events[i].t > t {
                    let inc = w.snapshot(t);
                    let bat = batch(&events[..i], t, &cfg);
                    assert!(close(&inc, &bat), "seed {seed} at {t}\ninc {inc:?}\nbat {bat:?}");
                    checked += 1;
                }
            }
            let inc = w.snapshot(p);
            let bat = batch(&events[..i], p, &cfg);
            assert!(close(&inc, &bat), "seed {seed} probe {p}\ninc {inc:?}\nbat {bat:?}");
            checked += 1;
        }
    }
    assert!(checked > 10_000);
}

#[test]
fn no_hash_collisions_over_100k_labels() {
    let mut seen = HashSet::new();
    for i in 0..100_000 {
        let (kind, label) = if i % 2 == 0 {
            (ContextKind::App, format!("app-{i}"))
        } else {
            (ContextKind::Tab, format!("https://host{i}.example/"))
        };
        assert!(seen.insert(hash_context(kind, &label).unwrap()), "collision at {i}");
    }
    // Same text under different kinds hashes apart.
    assert_ne!(
        hash_context(ContextKind::App, "x.test").unwrap(),
        hash_context(ContextKind::Tab, "x.test").unwrap()
    );
}

#[test]
fn recall_trail_stays_bounded_and_ordered() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cfg = RecallConfig::default();
    let mut trail = RecallTrail::new(cfg);
    let ctxs: Vec<ContextRef> = (0..50)
        .map(|i| ContextRef::from_label(ContextKind::App, &format!("c{i}")).unwrap().0)
        .collect();
    let mut t = 0;
    for _ in 0..10_000 {
        let enter = t + rng.random_range(0..5_000);
        let exit = enter + rng.random_range(0..120_000);
        // Mostly in order, sometimes a late report of an earlier stretch.
        let (enter, exit) = if rng.random_bool(0.1) {
            (enter - 200_000, exit - 200_000)
        } else {
            t = exit;
            (enter, exit)
        };
        trail.record_context(ctxs[rng.random_range(0..ctxs.len())], enter, exit);
        assert!(trail.len() <= cfg.capacity);
        let e = trail.entries();
        assert!(e.iter().zip(e.iter().skip(1)).all(|(a, b)| a.last_seen <= b.last_seen));
        assert!(e.iter().zip(e.iter().skip(1)).all(|(a, b)| a.ctx.id != b.ctx.id));
    }
}

fn any_kind() -> impl Strategy<Value = EventKind> {
    proptest::sample::select(EventKind::ALL.to_vec())
}

proptest! {
    #[test]
    fn trace_lines_round_trip(
        t in any::<i64>(),
        kind in any_kind(),
        label in proptest::option::of("[a-z]{1,12}"),
        tab in any::<bool>(),
        id in any::<u64>(),
    ) {
        let ctx_kind = if tab { ContextKind::Tab } else { ContextKind::App };
        let mut rec = match &label {
            Some(l) => TraceRecord::with_ctx(t, kind, ctx_kind, l),
            None => TraceRecord::new(t, kind),
        };
        if kind == EventKind::NudgeShown {
            rec = rec.with_payload(serde_json::json!({ "nudge_id": id }));
        }
        let back: TraceRecord = serde_json::from_str(&rec.to_line()).unwrap();
        prop_assert_eq!(back, rec);
    }

    #[test]
    fn classify_is_deterministic(
        tab in 0.0f64..20.0,
        app in 0.0f64..20.0,
        idle in 0.0f64..=1.0,
        dwell in 0.0f64..5000.0,
        distinct in 0u32..12,
        active in 0.0f64..10_000.0,
        score in 0.0f64..=1.0,
        onset in proptest::option::of(0i64..1_000_000),
    ) {
        let fv = FeatureVector {
            window_end: 1_000_000,
            tab_switch_rate: tab,
            app_switch_rate: app,
            idle_fraction: idle,
            longest_dwell_s: dwell,
            distinct_contexts: distinct,
            active_since_break_s: active,
            ..Default::default()
        };
        let mut prev = AttentionState::focused(0);
        prev.onsets.churn_since = onset;
        prev.onsets.idle_since = onset;
        let th = RuleThresholds::default();
        let a = classify(&fv, score, &prev, &th);
        let b = classify(&fv, score, &prev, &th);
        prop_assert_eq!(a, b);
        prop_assert!((0.5..=1.0).contains(&a.confidence));
    }
}
