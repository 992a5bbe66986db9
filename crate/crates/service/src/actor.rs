//! Single owner of the engine. Every mutation is a job on one queue, so the
//! effects of concurrent requests are totally ordered.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use focusloom_core::{Engine, Millis, Outbound};
use tokio::sync::{mpsc, oneshot, watch};

use crate::hub::Hub;

/// Source of "now" for requests that do not carry a timestamp.
#[derive(Debug, Clone)]
pub enum Clock {
    System,
    /// Test clock; never behind the engine's own clock.
    Manual(Arc<AtomicI64>),
}

impl Clock {
    pub fn manual(t: Millis) -> Self {
        Clock::Manual(Arc::new(AtomicI64::new(t)))
    }

    fn read(&self) -> Millis {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as Millis)
                .unwrap_or(0),
            Clock::Manual(a) => a.load(Ordering::SeqCst),
        }
    }

    pub fn set(&self, t: Millis) {
        if let Clock::Manual(a) = self {
            a.fetch_max(t, Ordering::SeqCst);
        }
    }
}

pub struct Core {
    pub engine: Engine,
    pub clock: Clock,
    hub: Arc<Hub>,
}

impl Core {
    pub fn now(&self) -> Millis {
        self.clock.read().max(self.engine.clock())
    }

    pub fn emit(&self, out: Vec<Outbound>) {
        for o in &out {
            self.hub.publish(o);
        }
    }

    fn flush(&mut self) {
        let out = self.engine.drain();
        self.emit(out);
    }
}

type Job = Box<dyn FnOnce(&mut Core) + Send>;

#[derive(Clone)]
pub struct EngineHandle {
    tx: mpsc::Sender<Job>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stopped;

impl EngineHandle {
    /// Spawns the engine task and, if `advance_every` is set, a timer that
    /// moves the engine to the current clock at that period.
    pub fn spawn(
        engine: Engine,
        clock: Clock,
        hub: Arc<Hub>,
        advance_every: Option<Duration>,
        mut shutdown: watch::Receiver<bool>,
    ) -> (Self, tokio::task::JoinHandle<Engine>) {
        let (tx, mut rx) = mpsc::channel::<Job>(256);
        let handle = EngineHandle { tx };
        let mut core = Core { engine, clock, hub };
        let join = tokio::spawn(async move {
            while let Some(job) = rx.recv().await {
                job(&mut core);
                core.flush();
            }
            core.engine
        });
        if let Some(period) = advance_every {
            let h = handle.clone();
            tokio::spawn(async move {
                let mut iv = tokio::time::interval(period);
                iv.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
                loop {
                    tokio::select! {
                        _ = iv.tick() => {}
                        _ = shutdown.changed() => break,
                    }
                    let r = h
                        .call(|c| {
                            let now = c.now();
                            c.engine.advance_to(now).map(|out| c.emit(out))
                        })
                        .await;
                    if r.is_err() {
                        break;
                    }
                }
            });
        }
        (handle, join)
    }

    pub async fn call<R, F>(&self, f: F) -> Result<R, Stopped>
    where
        F: FnOnce(&mut Core) -> R + Send + 'static,
        R: Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        let job: Job = Box::new(move |c| {
            let _ = tx.send(f(c));
        });
        self.tx.send(job).await.map_err(|_| Stopped)?;
        rx.await.map_err(|_| Stopped)
    }

    /// For callers outside the runtime.
    pub fn call_blocking<R, F>(&self, f: F) -> Result<R, Stopped>
    where
        F: FnOnce(&mut Core) -> R + Send + 'static,
        R: Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        let job: Job = Box::new(move |c| {
            let _ = tx.send(f(c));
        });
        self.tx.blocking_send(job).map_err(|_| Stopped)?;
        rx.blocking_recv().map_err(|_| Stopped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use focusloom_core::{EngineConfig, Preference};

    #[tokio::test]
    async fn concurrent_jobs_are_serialized() {
        let engine = Engine::new(EngineConfig::default(), Preference::default(), None).unwrap();
        let (_tx, rx) = watch::channel(false);
        let (h, _join) = EngineHandle::spawn(engine, Clock::manual(0), Arc::new(Hub::new()), None, rx);
        let mut pending = Vec::new();
        for i in 0..50i64 {
            let h = h.clone();
            pending.push(tokio::spawn(async move {
                h.call(move |c| {
                    c.clock.set(i);
                    c.now()
                })
                .await
                .unwrap()
            }));
        }
        let mut seen = Vec::new();
        for p in pending {
            seen.push(p.await.unwrap());
        }
        assert!(seen.iter().all(|&t| (0..50).contains(&t)));
        assert_eq!(h.call(|c| c.now()).await.unwrap(), 49);
    }
}
