//! Blocking HTTP client for the evaluation service.

use std::time::Duration;

use hitl_gan::queue::{AggregationPolicy, BatchStatus, RatingAck, TaskRecord, TaskSpec, TaskView};
use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use crate::server::EnqueueResponse;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("service unreachable: {0}")]
    Unreachable(String),
    #[error("service returned {status} {code}: {message}")]
    Api { status: u16, code: String, message: String },
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl ClientError {
    /// The service's error code, for API errors.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }
}

impl From<reqwest::Error> for ClientError {
    fn from(e: reqwest::Error) -> Self {
        if e.is_connect() || e.is_timeout() || e.is_request() {
            ClientError::Unreachable(e.to_string())
        } else {
            ClientError::Decode(e.to_string())
        }
    }
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
    message: String,
}

#[derive(Debug, Clone)]
pub struct ServiceClient {
    base: String,
    http: Client,
}

impl ServiceClient {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| ClientError::Unreachable(e.to_string()))?;
        Ok(ServiceClient { base: base_url.trim_end_matches('/').to_string(), http })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn check(resp: Response) -> Result<Response, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().unwrap_or_default();
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(b) => ClientError::Api { status: status.as_u16(), code: b.error, message: b.message },
            Err(_) => ClientError::Api { status: status.as_u16(), code: String::new(), message: text },
        })
    }

    fn decode<T: DeserializeOwned>(resp: Response) -> Result<T, ClientError> {
        let resp = Self::check(resp)?;
        resp.json().map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub fn health(&self) -> Result<(), ClientError> {
        Self::check(self.http.get(self.url("/health")).send()?).map(|_| ())
    }

    pub fn enqueue(
        &self,
        tasks: &[TaskSpec],
        policy: Option<&AggregationPolicy>,
    ) -> Result<EnqueueResponse, ClientError> {
        let body = json!({ "tasks": tasks, "policy": policy });
        Self::decode(self.http.post(self.url("/batches")).json(&body).send()?)
    }

    pub fn poll(&self, batch_id: &str) -> Result<BatchStatus, ClientError> {
        Self::decode(self.http.get(self.url(&format!("/batches/{batch_id}"))).send()?)
    }

    pub fn next_task(&self, rater_id: &str) -> Result<Option<TaskView>, ClientError> {
        let resp = Self::check(self.http.get(self.url("/tasks/next")).query(&[("rater", rater_id)]).send()?)?;
        if resp.status() == StatusCode::NO_CONTENT {
            return Ok(None);
        }
        resp.json().map(Some).map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub fn submit(&self, task_id: &str, rater_id: &str, level: i64) -> Result<RatingAck, ClientError> {
        let body = json!({ "rater_id": rater_id, "level": level });
        Self::decode(self.http.post(self.url(&format!("/tasks/{task_id}/ratings"))).json(&body).send()?)
    }

    pub fn task(&self, task_id: &str) -> Result<TaskRecord, ClientError> {
        Self::decode(self.http.get(self.url(&format!("/tasks/{task_id}"))).send()?)
    }
}
