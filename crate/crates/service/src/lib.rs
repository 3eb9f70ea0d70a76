//! HTTP back-end: frozen models, in-memory sessions and the JSON API the
//! inpainting interface talks to.
//!
//! Matrices are row-major arrays of arrays with frequency ascending along
//! the rows, matching the codemap and gram layouts of `spectro-core`.

mod api;
mod error;
mod state;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::routing::{delete, get, post};
use axum::Router;
use spectro_core::bundle::ModelBundle;

pub use api::{InpaintRequest, InstrumentRef, SampleRequest, SessionPayload, StatusPayload};
pub use error::ApiError;
pub use state::{AppState, Session};

pub const CHECKPOINT_ENV: &str = "SPECTRO_CHECKPOINT_DIR";
const MAX_UPLOAD: usize = 32 << 20;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/status", get(api::status))
        .route("/sessions/sample", post(api::sample))
        .route("/sessions/analyze", post(api::analyze))
        .route("/sessions/{id}/inpaint", post(api::inpaint))
        .route("/sessions/{id}/audio", get(api::audio))
        .route("/sessions/{id}", delete(api::remove).get(api::get_session))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(Arc::new(state))
}

/// Loads a checkpoint directory, refusing inconsistent or corrupt models.
pub fn load_registry(dir: &Path) -> spectro_core::Result<ModelBundle> {
    ModelBundle::load(dir)
}

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub addr: SocketAddr,
    pub checkpoints: Option<PathBuf>,
    /// Session snapshot written on shutdown.
    pub snapshot: Option<PathBuf>,
}

/// Serves until Ctrl-C.
pub async fn run(opts: ServeOptions) -> anyhow::Result<()> {
    let models = match &opts.checkpoints {
        Some(dir) => {
            let b = load_registry(dir).map_err(|e| anyhow::anyhow!("loading checkpoints from {}: {e}", dir.display()))?;
            tracing::info!(dir = %dir.display(), top = ?b.hierarchy().top_shape, "models loaded");
            Some(b)
        }
        None => {
            tracing::warn!("no checkpoint directory; model endpoints will answer 503");
            None
        }
    };
    let state = AppState::new(models);
    let shared = state.clone();
    let listener = tokio::net::TcpListener::bind(opts.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    if let Some(path) = &opts.snapshot {
        shared.snapshot(path)?;
        tracing::info!(path = %path.display(), "sessions saved");
    }
    Ok(())
}
