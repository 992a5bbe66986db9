//! Loopback-only HTTP and server-sent-events front end for the engine.
//!
//! All mutations go through one engine task ([`actor::EngineHandle`]); the
//! listener and every outbound socket go through [`net::NetAudit`].

pub mod actor;
pub mod api;
pub mod hub;
pub mod net;
pub mod routes;

use std::net::{Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use focusloom_core::Engine;
use tokio::sync::watch;
use tokio::task::JoinHandle;

pub use actor::{Clock, Core, EngineHandle, Stopped};
pub use api::{ApiEnvelope, ApiError, ErrorBody};
pub use hub::Hub;
pub use net::{HttpResponse, LoopbackClient, NetAudit, NetEvent, NetOp, SseFrame, SseReader};

pub const DEFAULT_PORT: u16 = 48620;
pub const PORT_ENV: &str = "FOCUSLOOM_PORT";

/// Port from `FOCUSLOOM_PORT`, falling back to [`DEFAULT_PORT`].
pub fn port_from_env() -> Result<u16, String> {
    match std::env::var(PORT_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{PORT_ENV}={v:?} is not a port number")),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// 0 picks an ephemeral port.
    pub port: u16,
    /// Serve the `/debug` routes.
    pub debug: bool,
    pub keepalive: Duration,
    /// Period of the timer that advances the engine to the current clock.
    pub advance_every: Option<Duration>,
    pub clock: Clock,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            port: DEFAULT_PORT,
            debug: false,
            keepalive: Duration::from_secs(15),
            advance_every: Some(Duration::from_secs(1)),
            clock: Clock::System,
        }
    }
}

pub struct Service {
    addr: SocketAddr,
    engine: EngineHandle,
    hub: Arc<Hub>,
    audit: NetAudit,
    shutdown: watch::Sender<bool>,
    server: JoinHandle<std::io::Result<()>>,
    engine_task: JoinHandle<Engine>,
}

impl Service {
    /// Binds 127.0.0.1 and starts serving on the current tokio runtime.
    pub async fn start(cfg: ServiceConfig, engine: Engine, audit: NetAudit) -> std::io::Result<Service> {
        let listener = audit
            .bind(SocketAddr::from((Ipv4Addr::LOCALHOST, cfg.port)))
            .await?;
        let addr = axum::serve::Listener::local_addr(&listener)?;
        let hub = Arc::new(Hub::new());
        let (shutdown, rx) = watch::channel(false);
        let (handle, engine_task) =
            EngineHandle::spawn(engine, cfg.clock.clone(), hub.clone(), cfg.advance_every, rx.clone());
        let state = routes::AppState {
            engine: handle.clone(),
            hub: hub.clone(),
            keepalive: cfg.keepalive,
            shutdown: rx.clone(),
        };
        let app = routes::router(state, cfg.debug);
        let mut stop = rx;
        let server = tokio::spawn(async move {
            axum::serve(listener, app.into_make_service_with_connect_info::<net::PeerAddr>())
                .with_graceful_shutdown(async move {
                    let _ = stop.wait_for(|v| *v).await;
                })
                .await
        });
        Ok(Service {
            addr,
            engine: handle,
            hub,
            audit,
            shutdown,
            server,
            engine_task,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn engine(&self) -> &EngineHandle {
        &self.engine
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    pub fn audit(&self) -> &NetAudit {
        &self.audit
    }

    pub fn client(&self) -> LoopbackClient {
        LoopbackClient::new(self.addr, self.audit.clone())
    }

    /// Stops accepting, ends open event streams and returns the engine.
    pub async fn shutdown(self) -> std::io::Result<Engine> {
        let _ = self.shutdown.send(true);
        self.server.await.map_err(std::io::Error::other)??;
        drop(self.engine);
        self.engine_task.await.map_err(std::io::Error::other)
    }
}
