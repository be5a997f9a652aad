//! Async client for the run service.

use std::time::Duration;

use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use shinka_core::api::{
    ApiError, CreateRunRequest, ErrorCode, Health, PresetInfo, ResumeRunRequest, RunStatus,
    WriteReportRequest,
};
use shinka_core::report::RunReport;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request to {url} failed: {source}")]
    Transport { url: String, source: reqwest::Error },
    #[error("{status}: {}", body.message)]
    Api { status: StatusCode, body: ApiError },
    #[error("unexpected reply from {url} ({status}): {message}")]
    Decode {
        url: String,
        status: StatusCode,
        message: String,
    },
}

impl ClientError {
    /// Error code reported by the service, if it answered with one.
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            ClientError::Api { body, .. } => Some(body.code),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn decode<T: DeserializeOwned>(url: String, response: Response) -> Result<T, ClientError> {
        let status = response.status();
        let bytes = response
            .bytes()
            .await
            .map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode {
                url,
                status,
                message: e.to_string(),
            });
        }
        match serde_json::from_slice::<ApiError>(&bytes) {
            Ok(body) => Err(ClientError::Api { status, body }),
            Err(_) => Err(ClientError::Decode {
                url,
                status,
                message: String::from_utf8_lossy(&bytes).into_owned(),
            }),
        }
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let url = self.url(path);
        let response = self
            .http
            .get(&url)
            .send()
            .await
            .map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        Self::decode(url, response).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let url = self.url(path);
        let response = self
            .http
            .post(&url)
            .json(body)
            .send()
            .await
            .map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        Self::decode(url, response).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.get("/health").await
    }

    pub async fn presets(&self) -> Result<Vec<PresetInfo>, ClientError> {
        self.get("/v1/presets").await
    }

    pub async fn create_run(&self, req: &CreateRunRequest) -> Result<RunStatus, ClientError> {
        self.post("/v1/runs", req).await
    }

    pub async fn resume_run(&self, req: &ResumeRunRequest) -> Result<RunStatus, ClientError> {
        self.post("/v1/runs/resume", req).await
    }

    pub async fn runs(&self) -> Result<Vec<RunStatus>, ClientError> {
        self.get("/v1/runs").await
    }

    pub async fn run(&self, id: &str) -> Result<RunStatus, ClientError> {
        self.get(&format!("/v1/runs/{id}")).await
    }

    pub async fn report(&self, id: &str) -> Result<RunReport, ClientError> {
        self.get(&format!("/v1/runs/{id}/report")).await
    }

    pub async fn write_report(&self, req: &WriteReportRequest) -> Result<RunReport, ClientError> {
        self.post("/v1/reports", req).await
    }

    /// Polls a run until it leaves the running state, calling `on_update`
    /// whenever its generation advances.
    pub async fn wait(
        &self,
        id: &str,
        interval: Duration,
        mut on_update: impl FnMut(&RunStatus),
    ) -> Result<RunStatus, ClientError> {
        let mut last = None;
        loop {
            let status = self.run(id).await?;
            if last != Some(status.generation) {
                last = Some(status.generation);
                on_update(&status);
            }
            if status.state.is_terminal() {
                return Ok(status);
            }
            tokio::time::sleep(interval).await;
        }
    }
}
