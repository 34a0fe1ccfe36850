//! HTTP service for live active-CF sessions.
//!
//! A session holds one user's rating history. The service answers with the
//! next query to ask, accepts ratings, and reports recommendations. Sessions
//! are logged to an append-only file and rebuilt from it on restart.
//!
//! | Method | Path | |
//! |---|---|---|
//! | POST | `/sessions` | create a session, optional [`SessionOverrides`] body |
//! | GET | `/sessions/{id}/query?top_k=N` | next query ([`QueryResponse`]) |
//! | POST | `/sessions/{id}/ratings` | `{"item": j, "rating": r}` |
//! | GET | `/sessions/{id}/recommendations?top_n=N` | ranked unrated items |
//! | GET | `/sessions/{id}` | history and diagnostics |
//! | GET | `/items` | item labels and rating scale |
//! | GET | `/healthz` | liveness |
//!
//! Errors are JSON `{"code": ..., "message": ...}`.

pub mod api;
pub mod engine;
pub mod error;
pub mod session;
pub mod store;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

pub use api::router;
pub use engine::{Engine, QueryResponse, SessionConfig, SessionOverrides};
pub use error::{ApiError, ErrorBody};
pub use session::Sessions;
pub use store::{Store, StoreError};

/// Builds the session registry, replaying `store_path` when given.
pub fn open_sessions(engine: Engine, store_path: Option<&Path>) -> Result<Arc<Sessions>, StoreError> {
    let engine = Arc::new(engine);
    let sessions = match store_path {
        Some(p) => {
            let (store, records) = Store::open(p)?;
            let n = records.len();
            let s = Sessions::restore(engine, store, records)?;
            tracing::info!(records = n, sessions = s.len(), "replayed session store");
            s
        }
        None => Sessions::new(engine, Store::in_memory()),
    };
    Ok(Arc::new(sessions))
}

/// Serves until Ctrl-C.
pub async fn serve(sessions: Arc<Sessions>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(sessions))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
