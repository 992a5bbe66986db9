//! Deterministic inputs shared by the benchmarks.

use focusloom_core::events::{ContextKind, EventKind, Millis, TraceRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const T0: Millis = 1_704_067_200_000;

/// `n` standard-normal points in `dims` dimensions.
pub fn gaussian_points(n: usize, dims: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..dims).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

/// One session of `n` records: tab switches, app focus changes and tab opens
/// 0.2 to 3 s apart.
pub fn busy_stream(n: usize, seed: u64) -> Vec<TraceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tabs: Vec<String> = (0..24).map(|i| format!("https://site{i}.example.com/")).collect();
    let mut t = T0;
    let mut out = Vec::with_capacity(n);
    out.push(TraceRecord::new(t, EventKind::SessionStart));
    while out.len() < n {
        t += rng.random_range(200..3_000);
        out.push(match rng.random_range(0..10) {
            0..=5 => TraceRecord::with_ctx(t, EventKind::TabSwitch, ContextKind::Tab, &tabs[rng.random_range(0..24)]),
            6..=8 => TraceRecord::with_ctx(
                t,
                EventKind::AppFocus,
                ContextKind::App,
                ["editor", "terminal", "notes"][rng.random_range(0..3)],
            ),
            _ => TraceRecord::with_ctx(t, EventKind::TabOpen, ContextKind::Tab, &tabs[rng.random_range(0..24)]),
        });
    }
    out
}
