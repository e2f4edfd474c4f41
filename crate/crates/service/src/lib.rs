//! Triage service for nail-image classification: a persistent case queue
//! ordered by urgency, clinician review, and cached explanations, served
//! over HTTP.

pub mod error;
pub mod http;
pub mod priority;
pub mod store;
pub mod triage;

pub use error::{Result, ServiceError};
pub use http::{router, token_from_env, TOKEN_ENV};
pub use priority::{priority_score, SeverityWeights};
pub use store::{
    queue_order, Case, CaseId, CaseStore, Decision, Event, Prediction, Review, Status, StoreState, EVENTS_FILE,
};
pub use triage::{Clock, ExplanationPayload, ManualClock, ModelInfo, Predictor, ReviewRequest, SystemClock, Triage};

/// Serves `router` on `addr` until ctrl-c.
pub async fn serve(app: axum::Router, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
