//! Fan-out of engine events to SSE subscribers with resumable ids.

use std::collections::VecDeque;
use std::sync::Mutex;

use focusloom_core::Outbound;
use tokio::sync::broadcast;

pub const BACKLOG: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SseItem {
    pub id: u64,
    pub event: &'static str,
    pub data: String,
}

struct Inner {
    next_id: u64,
    backlog: VecDeque<SseItem>,
}

pub struct Hub {
    inner: Mutex<Inner>,
    tx: broadcast::Sender<SseItem>,
}

impl Default for Hub {
    fn default() -> Self {
        Self::new()
    }
}

impl Hub {
    pub fn new() -> Self {
        let (tx, _) = broadcast::channel(BACKLOG);
        Hub {
            inner: Mutex::new(Inner {
                next_id: 1,
                backlog: VecDeque::with_capacity(BACKLOG),
            }),
            tx,
        }
    }

    /// Assigns the next id and delivers to live subscribers.
    pub fn publish(&self, out: &Outbound) -> u64 {
        let data = serde_json::to_string(out).expect("outbound serializes");
        let mut g = self.inner.lock().expect("hub lock");
        let item = SseItem {
            id: g.next_id,
            event: out.event_name(),
            data,
        };
        g.next_id += 1;
        if g.backlog.len() == BACKLOG {
            g.backlog.pop_front();
        }
        g.backlog.push_back(item.clone());
        // No receivers is fine.
        let _ = self.tx.send(item.clone());
        item.id
    }

    /// Backlog entries after `last_id` plus a receiver for everything newer.
    /// Both are taken under one lock so nothing is lost or repeated.
    pub fn subscribe(&self, last_id: Option<u64>) -> (Vec<SseItem>, broadcast::Receiver<SseItem>) {
        let g = self.inner.lock().expect("hub lock");
        let after = last_id.unwrap_or(u64::MAX);
        let replay = match last_id {
            Some(_) => g.backlog.iter().filter(|i| i.id > after).cloned().collect(),
            None => Vec::new(),
        };
        (replay, self.tx.subscribe())
    }

    pub fn last_id(&self) -> u64 {
        self.inner.lock().expect("hub lock").next_id - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use focusloom_core::AttentionState;

    fn state() -> Outbound {
        Outbound::State(AttentionState::focused(0))
    }

    #[test]
    fn ids_are_monotone_and_resume_skips_seen() {
        let hub = Hub::new();
        for _ in 0..5 {
            hub.publish(&state());
        }
        let (replay, _rx) = hub.subscribe(Some(3));
        assert_eq!(replay.iter().map(|i| i.id).collect::<Vec<_>>(), vec![4, 5]);
        let (fresh, _rx) = hub.subscribe(None);
        assert!(fresh.is_empty());
        assert_eq!(hub.last_id(), 5);
    }

    #[test]
    fn live_receiver_sees_later_items() {
        let hub = Hub::new();
        hub.publish(&state());
        let (_, mut rx) = hub.subscribe(Some(1));
        let id = hub.publish(&state());
        assert_eq!(rx.try_recv().unwrap().id, id);
    }
}
