//! "Where Was I?" trail of recent work contexts.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::events::{ContextRef, LabelHandle, Millis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecallConfig {
    pub capacity: usize,
    pub min_dwell_s: f64,
}

impl Default for RecallConfig {
    fn default() -> Self {
        RecallConfig {
            capacity: 20,
            min_dwell_s: 15.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallEntry {
    pub ctx: ContextRef,
    pub first_seen: Millis,
    pub last_seen: Millis,
    pub dwell_s: f64,
}

/// Resolves label handles to display text at render time.
pub trait LabelResolver {
    fn resolve(&self, handle: LabelHandle) -> Option<String>;
}

impl LabelResolver for HashMap<LabelHandle, String> {
    fn resolve(&self, handle: LabelHandle) -> Option<String> {
        self.get(&handle).cloned()
    }
}

/// Resolves nothing; every label renders as its generic noun.
pub struct NoLabels;

impl LabelResolver for NoLabels {
    fn resolve(&self, _: LabelHandle) -> Option<String> {
        None
    }
}

/// Bounded trail ordered by `last_seen`, oldest first. Neighbors never share
/// a context.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RecallTrail {
    cfg: RecallConfig,
    entries: VecDeque<RecallEntry>,
}

impl RecallTrail {
    pub fn new(cfg: RecallConfig) -> Self {
        RecallTrail {
            cfg,
            entries: VecDeque::with_capacity(cfg.capacity + 1),
        }
    }

    pub fn entries(&self) -> &VecDeque<RecallEntry> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn last(&self) -> Option<&RecallEntry> {
        self.entries.back()
    }

    /// Records a visit to `ctx` over `[enter_t, exit_t]`. Visits shorter than
    /// the minimum dwell are dropped. A visit adjacent (by `last_seen`) to an
    /// entry for the same context is merged into it.
    pub fn record_context(&mut self, ctx: ContextRef, enter_t: Millis, exit_t: Millis) {
        if exit_t < enter_t {
            return;
        }
        let dwell_s = (exit_t - enter_t) as f64 / 1000.0;
        if dwell_s < self.cfg.min_dwell_s {
            return;
        }
        let pos = self.entries.partition_point(|e| e.last_seen <= exit_t);
        if pos > 0 && self.entries[pos - 1].ctx.id == ctx.id {
            let e = &mut self.entries[pos - 1];
            e.first_seen = e.first_seen.min(enter_t);
            e.last_seen = exit_t;
            e.dwell_s += dwell_s;
            return;
        }
        if let Some(e) = self.entries.get_mut(pos) {
            if e.ctx.id == ctx.id {
                e.first_seen = e.first_seen.min(enter_t);
                e.dwell_s += dwell_s;
                return;
            }
        }
        self.entries.insert(
            pos,
            RecallEntry {
                ctx,
                first_seen: enter_t,
                last_seen: exit_t,
                dwell_s,
            },
        );
        while self.entries.len() > self.cfg.capacity {
            self.entries.pop_front();
        }
    }

    /// Renders the resume prompt from the two most recent entries.
    pub fn resume_prompt(&self, labels: &dyn LabelResolver) -> Option<String> {
        let name = |e: &RecallEntry| {
            labels
                .resolve(e.ctx.handle)
                .unwrap_or_else(|| e.ctx.kind.generic_noun().to_string())
        };
        let n = self.entries.len();
        match n {
            0 => None,
            1 => Some(format!(
                "You were last working on {}. Want to return?",
                name(&self.entries[0])
            )),
            _ => Some(format!(
                "You were last working on {}, then checked {}. Want to return?",
                name(&self.entries[n - 2]),
                name(&self.entries[n - 1])
            )),
        }
    }
}
