//! HTTP labeling service.
//!
//! Workers list their open questions and post answers through a JSON API. The
//! engine loop runs on a blocking thread and waits on the shared desk for each
//! batch; the optional UI directory is served as static files.

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use remp_core::crowd::{
    LabelRequest, ProgressSnapshot, QuestionView, SessionStatus, SharedDesk, SubmitError, SubmitReceipt,
};
use remp_core::engine::RunReport;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tower_http::services::ServeDir;

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("server I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Engine(#[from] remp_core::Error),
    #[error("engine thread failed: {0}")]
    Join(#[from] tokio::task::JoinError),
    #[error("interrupted before the session finished")]
    Interrupted,
}

#[derive(Debug, Deserialize)]
pub struct WorkerQuery {
    pub worker_id: String,
}

/// JSON body of every non-2xx API response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

struct ApiError(SubmitError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0 {
            SubmitError::Duplicate { .. } => StatusCode::CONFLICT,
            SubmitError::NotAssigned { .. } => StatusCode::FORBIDDEN,
            SubmitError::UnknownQuestion(_) => StatusCode::NOT_FOUND,
        };
        (status, Json(ErrorBody { error: self.0.to_string() })).into_response()
    }
}

type Desk = State<Arc<SharedDesk>>;

async fn session(State(desk): Desk) -> Json<SessionStatus> {
    Json(desk.lock().status())
}

async fn questions(State(desk): Desk, Query(q): Query<WorkerQuery>) -> Json<Vec<QuestionView>> {
    Json(desk.lock().questions_for(&q.worker_id))
}

async fn labels(State(desk): Desk, Json(req): Json<LabelRequest>) -> Result<Json<SubmitReceipt>, ApiError> {
    let receipt = desk.submit(&req.worker_id, req.question_id, req.answer).map_err(ApiError)?;
    tracing::debug!(worker = %req.worker_id, question = req.question_id, answer = %req.answer, "label");
    Ok(Json(receipt))
}

async fn progress(State(desk): Desk) -> Json<ProgressSnapshot> {
    Json(desk.lock().progress())
}

/// The API routes, plus static files from `ui_dir` for every other path.
pub fn router(desk: Arc<SharedDesk>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/session", get(session))
        .route("/api/questions", get(questions))
        .route("/api/labels", post(labels))
        .route("/api/progress", get(progress))
        .with_state(desk);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

#[derive(Debug, Clone, Default)]
pub struct SessionOptions {
    pub ui_dir: Option<PathBuf>,
    /// How long to keep answering API calls after the engine finishes, so
    /// that pollers see the final state.
    pub linger: Duration,
}

/// Serves the API on `listener` while `engine` runs on a blocking thread.
///
/// When `interrupt` resolves first, the desk is closed, which makes a waiting
/// engine fail, and [`ServerError::Interrupted`] is returned.
pub async fn run_session<E, I>(
    listener: TcpListener,
    desk: Arc<SharedDesk>,
    options: SessionOptions,
    engine: E,
    interrupt: I,
) -> Result<RunReport, ServerError>
where
    E: FnOnce(Arc<SharedDesk>) -> remp_core::Result<RunReport> + Send + 'static,
    I: Future<Output = ()> + Send,
{
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let app = router(desk.clone(), options.ui_dir.clone());
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stop_rx.await;
            })
            .await
    });

    let engine_desk = desk.clone();
    let mut job = tokio::task::spawn_blocking(move || engine(engine_desk));
    let outcome = tokio::select! {
        r = &mut job => r.map_err(ServerError::from).and_then(|r| r.map_err(ServerError::from)),
        _ = interrupt => {
            desk.close();
            let _ = job.await;
            Err(ServerError::Interrupted)
        }
    };
    if outcome.is_ok() && !options.linger.is_zero() {
        tokio::time::sleep(options.linger).await;
    }
    let _ = stop_tx.send(());
    server.await??;
    outcome
}
