//! Command line and HTTP service for reviewing candidate sample matches.

pub mod api;
pub mod cli;
pub mod pipeline;

use std::net::SocketAddr;

use anyhow::{Context, Result};
use batchline::review::Session;

/// Serves the review API until interrupted.
pub async fn serve(session: Session, addr: SocketAddr) -> Result<()> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let pairs = session.report().pairs.len();
    let triples = session.graph().len();
    let app = api::router(api::AppState::new(session));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, triples, pairs, "serving");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
