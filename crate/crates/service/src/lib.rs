//! HTTP/JSON front end for the privacy layer.

mod config;
mod error;
mod registry;
mod routes;
mod workspace;

use std::net::SocketAddr;

pub use config::LayerConfig;
pub use error::{ApiError, WorkspaceError};
pub use registry::ReportRegistry;
pub use routes::{router, AppState, Identity};
pub use workspace::{read_manifest, TableRegistry, TableSource, Workspace};

/// Serves `state` on an already bound listener until the future is dropped
/// or the process receives Ctrl-C.
pub async fn serve_on(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Opens the workspace described by `config` and serves it on
/// `config.listen`.
pub async fn serve(config: LayerConfig) -> Result<(), WorkspaceError> {
    let addr: SocketAddr =
        config.listen.parse().map_err(|e| WorkspaceError::Config(format!("listen {:?}: {e}", config.listen)))?;
    let ws = Workspace::open(config)?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| WorkspaceError::Io(format!("{addr}: {e}")))?;
    tracing::info!(%addr, tables = ?ws.catalog.table_ids(), "listening");
    serve_on(listener, AppState::new(&ws)).await.map_err(|e| WorkspaceError::Io(e.to_string()))
}
