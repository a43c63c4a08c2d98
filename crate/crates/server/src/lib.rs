//! HTTP/JSON front end for the descrix kernel.
//!
//! Every route lives under `/api/v1` and, apart from `/health`, requires an
//! `Authorization: Bearer <token>` header naming one of the configured agents.

pub mod config;
pub mod error;
mod extract;
mod routes;

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::Context;
use axum::Router;
use descrix_core::{Agent, IdGenerator, Kernel, KernelConfig};
use tokio::net::TcpListener;

pub use config::{AgentConfig, ServerConfig, CONFIG_ENV};
pub use error::{ApiError, ErrorEnvelope};

#[derive(Clone)]
pub struct AppState {
    kernel: Arc<Kernel>,
    tokens: Arc<HashMap<String, Agent>>,
    forbid_breaking: bool,
}

impl AppState {
    pub fn new(kernel: Arc<Kernel>, config: &ServerConfig) -> Self {
        AppState {
            kernel,
            tokens: Arc::new(config.tokens()),
            forbid_breaking: config.forbid_breaking_publishes,
        }
    }

    pub fn kernel(&self) -> &Arc<Kernel> {
        &self.kernel
    }

    fn agent(&self, token: &str) -> Option<Agent> {
        self.tokens.get(token).cloned()
    }
}

pub fn kernel_config(config: &ServerConfig) -> KernelConfig {
    let mut k = KernelConfig::new(&config.data_dir);
    k.sync = !config.no_sync;
    k.ids = match config.deterministic_ids {
        Some(seed) => IdGenerator::Seeded(seed),
        None => IdGenerator::Random,
    };
    k
}

pub fn router(state: AppState) -> Router {
    Router::new().nest("/api/v1", routes::api()).with_state(state)
}

/// A bound, not yet running server.
pub struct Server {
    listener: TcpListener,
    app: Router,
    state: AppState,
}

impl Server {
    pub async fn bind(config: &ServerConfig) -> anyhow::Result<Server> {
        let kernel_config = kernel_config(config);
        let kernel = tokio::task::spawn_blocking(move || Kernel::open(kernel_config))
            .await?
            .with_context(|| format!("opening store at {}", config.data_dir.display()))?;
        for (item, bytes) in &kernel.recovery().truncated {
            tracing::warn!(%item, bytes, "dropped an incomplete trailing record");
        }
        let state = AppState::new(Arc::new(kernel), config);
        let listener = TcpListener::bind(config.listen_addr)
            .await
            .with_context(|| format!("binding {}", config.listen_addr))?;
        Ok(Server {
            app: router(state.clone()),
            listener,
            state,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn state(&self) -> &AppState {
        &self.state
    }

    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> anyhow::Result<()> {
        axum::serve(self.listener, self.app)
            .with_graceful_shutdown(shutdown)
            .await
            .context("serving")
    }
}

/// Opens the store, binds, announces the address on stdout and serves until
/// interrupted.
pub async fn serve(config: ServerConfig) -> anyhow::Result<()> {
    let server = Server::bind(&config).await?;
    println!("listening on {}", server.local_addr());
    tracing::info!(addr = %server.local_addr(), data_dir = %config.data_dir.display(), "serving");
    server
        .run(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
