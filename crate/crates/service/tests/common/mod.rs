#![allow(dead_code)]

use std::time::Duration;

use focusloom_core::{ContextKind, Engine, EngineConfig, EventKind, Millis, Preference, Store, TraceRecord};
use focusloom_service::{Clock, LoopbackClient, NetAudit, Service, ServiceConfig};
use tokio::runtime::Runtime;

pub const T0: Millis = 1_704_067_200_000;

pub struct Harness {
    pub rt: Runtime,
    pub svc: Option<Service>,
    pub client: LoopbackClient,
}

impl Harness {
    pub fn start(store: Option<Store>, debug: bool, keepalive: Duration) -> Harness {
        let engine = Engine::new(EngineConfig::default(), Preference::default(), store).unwrap();
        Self::with_engine(engine, debug, keepalive)
    }

    pub fn with_engine(engine: Engine, debug: bool, keepalive: Duration) -> Harness {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let cfg = ServiceConfig {
            port: 0,
            debug,
            keepalive,
            advance_every: None,
            clock: Clock::manual(T0),
        };
        let svc = rt.block_on(Service::start(cfg, engine, NetAudit::new())).unwrap();
        let client = svc.client();
        Harness {
            rt,
            svc: Some(svc),
            client,
        }
    }

    pub fn dev() -> Harness {
        Self::start(None, true, Duration::from_secs(15))
    }

    pub fn audit(&self) -> NetAudit {
        self.svc.as_ref().unwrap().audit().clone()
    }

    pub fn stop(mut self) -> Engine {
        let svc = self.svc.take().unwrap();
        self.rt.block_on(svc.shutdown()).unwrap()
    }
}

pub fn tab(t: Millis, label: &str) -> TraceRecord {
    TraceRecord::with_ctx(t, EventKind::TabSwitch, ContextKind::Tab, label)
}

/// Session with 15 tab switches per minute over 8 origins.
pub fn churn(start: Millis, minutes: i64) -> Vec<TraceRecord> {
    let mut v = vec![TraceRecord::new(start, EventKind::SessionStart)];
    for i in 0..minutes * 15 {
        v.push(tab(start + 1000 + i * 4000, &format!("https://site{}.example", i % 8)));
    }
    v
}

pub fn records_json(recs: &[TraceRecord]) -> serde_json::Value {
    serde_json::to_value(recs).unwrap()
}
