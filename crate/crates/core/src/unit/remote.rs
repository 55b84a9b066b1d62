//! HTTP client for a remote ranking unit.
//!
//! Request: `POST <endpoint>` with
//! `{"qid", "query", "m", "r", "slots": [{"identifier", "docid", "text"}]}`.
//! Response: `{"order": "1 2 5 4 3"}`, least relevant first.

use std::time::Duration;

use log::warn;
use parking_lot::{Condvar, Mutex};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{parse_unit_output, RankingUnit, UnitRequest, UnitResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireSlot {
    pub identifier: usize,
    pub docid: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRequest {
    pub qid: String,
    pub query: String,
    pub m: usize,
    pub r: usize,
    pub slots: Vec<WireSlot>,
}

impl From<&UnitRequest> for WireRequest {
    fn from(req: &UnitRequest) -> Self {
        Self {
            qid: req.query().qid.clone(),
            query: req.query().text.clone(),
            m: req.m(),
            r: req.r(),
            slots: req
                .slots()
                .iter()
                .map(|s| WireSlot {
                    identifier: s.identifier,
                    docid: s.passage.id.to_string(),
                    text: s.passage.text.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireResponse {
    pub order: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout: Duration,
    /// Extra attempts after the first one.
    pub retries: u32,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            retries: 2,
            max_in_flight: 8,
        }
    }
}

struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut n = self.available.lock();
        while *n == 0 {
            self.freed.wait(&mut n);
        }
        *n -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock() += 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteUnit {
    client: Client,
    cfg: RemoteConfig,
    permits: Permits,
}

impl RemoteUnit {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        if cfg.max_in_flight == 0 {
            return Err(Error::InvalidConfig("max_in_flight must be >= 1".into()));
        }
        let client = Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("http client: {e}")))?;
        let permits = Permits {
            available: Mutex::new(cfg.max_in_flight),
            freed: Condvar::new(),
        };
        Ok(Self {
            client,
            cfg,
            permits,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn backend_error(req: &UnitRequest, status: Option<u16>, message: String) -> Error {
        Error::Backend {
            qid: req.query().qid.clone(),
            docids: req.docids(),
            status,
            message,
        }
    }

    fn post_once(&self, body: &WireRequest) -> std::result::Result<(StatusCode, String), reqwest::Error> {
        let resp = self.client.post(&self.cfg.endpoint).json(body).send()?;
        let status = resp.status();
        Ok((status, resp.text()?))
    }
}

fn retryable(status: StatusCode) -> bool {
    status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS
}

/// Sends one request, retrying transport errors and 5xx/429 answers.
/// Unparseable bodies produce the identity order with `fallback = true`.
pub fn remote_rank(request: &UnitRequest, unit: &RemoteUnit) -> Result<UnitResult> {
    let body = WireRequest::from(request);
    let _permit = unit.permits.acquire();
    let mut attempt = 0;
    loop {
        let last_try = attempt >= unit.cfg.retries;
        match unit.post_once(&body) {
            Ok((status, text)) if status == StatusCode::OK => {
                let parsed = serde_json::from_str::<WireResponse>(&text)
                    .ok()
                    .and_then(|r| parse_unit_output(&r.order, request.m()));
                return Ok(match parsed {
                    Some(order) => UnitResult::new(order, text),
                    None => {
                        warn!(
                            "query {}: malformed unit output {text:?}, using original ordering",
                            request.query().qid
                        );
                        UnitResult::identity_fallback(request.m(), text)
                    }
                });
            }
            Ok((status, text)) if last_try || !retryable(status) => {
                return Err(RemoteUnit::backend_error(
                    request,
                    Some(status.as_u16()),
                    format!("HTTP {status}: {text}"),
                ));
            }
            Err(e) if last_try => {
                return Err(RemoteUnit::backend_error(request, None, e.to_string()));
            }
            _ => {}
        }
        attempt += 1;
        std::thread::sleep(Duration::from_millis(25 * u64::from(attempt)));
    }
}

impl RankingUnit for RemoteUnit {
    fn rank(&self, request: &UnitRequest) -> Result<UnitResult> {
        remote_rank(request, self)
    }
}
