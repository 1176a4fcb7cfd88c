//! Command-line tools and the local review service.

pub mod commands;
pub mod config;
pub mod logbuf;
pub mod service;

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Result;
use chrono::Utc;

pub use config::Config;
pub use logbuf::LogBuffer;
pub use service::{router, AppState};

/// How often the service checks whether the log buffer is due.
const FLUSH_POLL: Duration = Duration::from_secs(1);

/// Serves until `shutdown` resolves, then force-flushes the log buffer.
pub async fn serve(cfg: Config, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<()> {
    cfg.validate()?;
    let defender = commands::build_defender(&cfg, commands::ocr_engine(&cfg))?;
    let state = Arc::new(AppState {
        defender,
        logs: LogBuffer::new(&cfg.log_dir, cfg.log_flush_interval(), Utc::now()),
    });
    let listener = tokio::net::TcpListener::bind(cfg.bind).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    let flusher = {
        let state = state.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(FLUSH_POLL);
            loop {
                tick.tick().await;
                // Failures are logged by the buffer and retried next tick.
                let _ = state.logs.flush_if_due(Utc::now());
            }
        })
    };
    axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).await?;
    flusher.abort();
    state.logs.flush(Utc::now())?;
    Ok(())
}
