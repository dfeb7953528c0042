//! Session service for interactive segmentation.
//!
//! Each session owns one image, its dictionary and graph, and a marking that
//! clients edit with polyline strokes. Propagation runs on blocking worker
//! threads, at most one run per session at a time; strokes that arrive
//! meanwhile are folded into a single follow-up run. See [`routes`] for the
//! endpoint table.

pub mod app;
pub mod error;
pub mod routes;
pub mod state;
pub mod stroke;

pub use app::{AppState, Limits, SessionConfig, SessionEvent};
pub use error::ApiError;
pub use routes::router;

/// Serves the API on `addr` until the process is stopped.
pub async fn serve(addr: std::net::SocketAddr, limits: Limits) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(limits))).await
}
