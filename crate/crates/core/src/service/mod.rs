//! The long-running SFC process: reader controllers feeding one engine
//! task, the HTTP API in front of it and the optional wall-clock ticker.

mod actor;
mod config;
mod controller;

use std::net::SocketAddr;
use std::time::Duration;

use log::info;
use thiserror::Error;
use tokio::task::JoinHandle;

pub use actor::{wall_clock_us, EngineHandle, ServiceStats};
pub use config::{ClockSource, ReaderLink, ServiceConfig};
pub use controller::{run_controller, Backoff, LinkError, ROSPEC_ID};

use crate::engine::{Engine, EngineError};
use crate::erp::{parse_dispatch_xml, router, serve_api, ApiState, EngineAccess};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("dispatch file: {0}")]
    Dispatch(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
}

impl ServeError {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            ServeError::Config(_) | ServeError::Dispatch(_) => 2,
            ServeError::Bind { .. } => 3,
            ServeError::Engine(_) => 6,
        }
    }
}

pub struct Service {
    handle: EngineHandle,
    api_addr: SocketAddr,
    tasks: Vec<JoinHandle<()>>,
    api_task: JoinHandle<std::io::Result<()>>,
}

impl Service {
    /// Starts every part of the service. Nothing is bound before the
    /// configuration, the log and the dispatch file have been accepted.
    pub async fn start(config: ServiceConfig) -> Result<Self, ServeError> {
        config.validate()?;
        let engine_cfg = config.engine_config();
        let engine = match &config.log_path {
            Some(p) => Engine::open(engine_cfg, p)?,
            None => Engine::new(engine_cfg),
        }
        .without_record_retention();

        let dispatch = match &config.dispatch_file {
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| ServeError::Dispatch(format!("{}: {e}", p.display())))?;
                Some(parse_dispatch_xml(&bytes).map_err(|e| ServeError::Dispatch(format!("{}: {e}", p.display())))?)
            }
            None => None,
        };

        let (handle, engine_task) = EngineHandle::spawn(engine, config.clock);
        if let Some(list) = dispatch {
            handle.import_dispatch(list).await.map_err(|e| ServeError::Dispatch(e.to_string()))?;
        }

        let state = ApiState { engine: std::sync::Arc::new(handle.clone()), live: Some(handle.live()) };
        let app = router(state, config.ui_dir.clone());
        let (api_addr, api_task) = serve_api(&config.api_listen, app)
            .await
            .map_err(|source| ServeError::Bind { addr: config.api_listen.clone(), source })?;
        info!("API listening on http://{api_addr}/");

        let mut tasks = vec![engine_task];
        let backoff = Backoff {
            initial: Duration::from_millis(config.reconnect_initial_ms),
            max: Duration::from_millis(config.reconnect_max_ms),
        };
        for link in &config.data_points {
            tasks.push(tokio::spawn(run_controller(link.clone(), handle.clone(), backoff)));
        }
        if config.clock == ClockSource::Wall {
            let h = handle.clone();
            let period = Duration::from_millis(config.tick_interval_ms);
            tasks.push(tokio::spawn(async move {
                let mut every = tokio::time::interval(period);
                loop {
                    every.tick().await;
                    if !h.tick(wall_clock_us()) {
                        return;
                    }
                }
            }));
        }
        Ok(Service { handle, api_addr, tasks, api_task })
    }

    pub fn api_addr(&self) -> SocketAddr {
        self.api_addr
    }

    pub fn handle(&self) -> &EngineHandle {
        &self.handle
    }

    /// Runs until the HTTP server stops.
    pub async fn wait(self) -> std::io::Result<()> {
        let r = self.api_task.await.unwrap_or_else(|e| Err(std::io::Error::other(e)));
        for t in self.tasks {
            t.abort();
        }
        r
    }

    pub fn shutdown(self) {
        self.api_task.abort();
        for t in self.tasks {
            t.abort();
        }
    }
}
