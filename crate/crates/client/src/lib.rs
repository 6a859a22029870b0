//! Thin client for the labeling service.

use remp_core::crowd::{LabelRequest, ProgressSnapshot, QuestionView, SessionStatus, SubmitReceipt};
use remp_core::truth::Answer;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server answered {status}: {message}")]
    Api { status: StatusCode, message: String },
}

pub type Result<T> = std::result::Result<T, ClientError>;

/// What happened to a posted label.
#[derive(Debug, Clone, PartialEq)]
pub enum Submitted {
    Accepted(SubmitReceipt),
    /// The worker had already answered this question.
    Duplicate,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text).map_or(text, |b| b.error);
        Err(ClientError::Api { status, message })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::decode(self.http.get(self.url(path)).send().await?).await
    }

    pub async fn session(&self) -> Result<SessionStatus> {
        self.get("/api/session").await
    }

    pub async fn progress(&self) -> Result<ProgressSnapshot> {
        self.get("/api/progress").await
    }

    pub async fn questions(&self, worker_id: &str) -> Result<Vec<QuestionView>> {
        let resp = self
            .http
            .get(self.url("/api/questions"))
            .query(&[("worker_id", worker_id)])
            .send()
            .await?;
        Self::decode(resp).await
    }

    pub async fn submit(&self, worker_id: &str, question_id: u64, answer: Answer) -> Result<Submitted> {
        let body = LabelRequest {
            worker_id: worker_id.to_string(),
            question_id,
            answer,
        };
        let resp = self.http.post(self.url("/api/labels")).json(&body).send().await?;
        if resp.status() == StatusCode::CONFLICT {
            return Ok(Submitted::Duplicate);
        }
        Self::decode(resp).await.map(Submitted::Accepted)
    }
}
