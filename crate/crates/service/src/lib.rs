//! JSON-over-HTTP facade for annotation sessions, recommendations,
//! reports and link export. All routes live under `/v1`.
pub mod config;
pub mod error;
mod routes;
pub mod state;

pub use config::{CatalogPaths, ConfigError, ServiceConfig};
pub use error::{ApiError, ErrorCode};
pub use routes::{router, IDEMPOTENCY_KEY};
pub use state::{AppState, LoadError, Resources};

/// Binds the configured address and serves until Ctrl-C.
pub async fn serve(app: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(app.config().bind).await?;
    tracing::info!(addr = %listener.local_addr()?, sessions = app.session_count(), "listening");
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
