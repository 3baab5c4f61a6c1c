//! HTTP service for running keyboard combination trials.
//!
//! Trials are stored as per-trial event logs under a data directory and
//! mutated with optimistic concurrency: every cohort carries the revision the
//! client last saw. Simulation studies run on the blocking pool and export
//! their results next to the trials.

pub mod api;
pub mod error;
pub mod jobs;
pub mod schema;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use api::{router, AppState};
pub use error::{ApiError, ApiResult, FieldError};
pub use store::{TrialResource, TrialStore};

impl AppState {
    /// Opens the stores rooted at `data`.
    pub fn open(data: impl Into<PathBuf>) -> ApiResult<Self> {
        let data = data.into();
        Ok(AppState {
            trials: Arc::new(TrialStore::open(&data)?),
            jobs: Arc::new(jobs::JobRegistry::new(data)),
        })
    }
}

/// Serves the API on `addr` until the process is stopped.
pub async fn serve(data: impl Into<PathBuf>, addr: SocketAddr) -> ApiResult<()> {
    let state = AppState::open(data)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ApiError::io(addr.to_string(), e))?;
    axum::serve(listener, router(state))
        .await
        .map_err(|e| ApiError::io(addr.to_string(), e))
}
