//! External correction service client and in-process stubs.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::fusion::ScoredKeyword;

/// Request sent to the correction service for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionRequest {
    pub utterance_id: String,
    pub tokens: Vec<String>,
    pub keywords: Vec<ScoredKeyword>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionResponse {
    pub tokens: Vec<String>,
    pub latency: Duration,
}

#[derive(Debug, thiserror::Error)]
pub enum CorrectorError {
    #[error("corrector timed out")]
    Timeout,
    #[error("corrector protocol violation: {0}")]
    Protocol(String),
    #[error("corrector transport failure: {0}")]
    Transport(String),
}

/// A correction backend. Calls are synchronous; the engine issues at most one
/// outstanding request per stream and falls back to the uncorrected fusion on
/// any error.
pub trait Corrector: Send + Sync {
    fn name(&self) -> &str;
    fn correct(&self, req: &CorrectionRequest)
        -> std::result::Result<CorrectionResponse, CorrectorError>;
}

#[derive(Serialize)]
struct WireRequest<'a> {
    id: &'a str,
    tokens: &'a [String],
    keywords: Vec<WireKeyword<'a>>,
}

#[derive(Serialize)]
struct WireKeyword<'a> {
    text: &'a str,
    score: f64,
}

#[derive(Deserialize)]
struct WireResponse {
    tokens: Vec<String>,
}

/// HTTP client of the correction wire protocol: POST `{base}/v1/correct`
/// with `{"id", "tokens", "keywords": [{"text", "score"}]}`, response
/// `{"tokens": [..]}`.
pub struct HttpCorrector {
    agent: ureq::Agent,
    base_url: String,
    name: String,
}

impl HttpCorrector {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        let base_url = base_url.into();
        HttpCorrector {
            agent,
            name: format!("http:{base_url}"),
            base_url,
        }
    }
}

impl Corrector for HttpCorrector {
    fn name(&self) -> &str {
        &self.name
    }

    fn correct(
        &self,
        req: &CorrectionRequest,
    ) -> std::result::Result<CorrectionResponse, CorrectorError> {
        let url = format!("{}/v1/correct", self.base_url.trim_end_matches('/'));
        let wire = WireRequest {
            id: &req.utterance_id,
            tokens: &req.tokens,
            keywords: req
                .keywords
                .iter()
                .map(|k| WireKeyword {
                    text: &k.text,
                    score: k.score,
                })
                .collect(),
        };
        let started = Instant::now();
        let mut resp = self.agent.post(&url).send_json(&wire).map_err(|e| match e {
            ureq::Error::Timeout(_) => CorrectorError::Timeout,
            ureq::Error::Io(ref io)
                if matches!(
                    io.kind(),
                    std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
                ) =>
            {
                CorrectorError::Timeout
            }
            other => CorrectorError::Transport(other.to_string()),
        })?;
        let body: WireResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| CorrectorError::Protocol(format!("bad response body: {e}")))?;
        Ok(CorrectionResponse {
            tokens: body.tokens,
            latency: started.elapsed(),
        })
    }
}

/// Wrap a closure as a corrector; the standard deterministic test stub.
pub struct FnCorrector<F> {
    name: String,
    f: F,
}

impl<F> FnCorrector<F>
where
    F: Fn(&CorrectionRequest) -> std::result::Result<Vec<String>, CorrectorError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnCorrector {
            name: name.into(),
            f,
        }
    }
}

impl<F> Corrector for FnCorrector<F>
where
    F: Fn(&CorrectionRequest) -> std::result::Result<Vec<String>, CorrectorError> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn correct(
        &self,
        req: &CorrectionRequest,
    ) -> std::result::Result<CorrectionResponse, CorrectorError> {
        (self.f)(req).map(|tokens| CorrectionResponse {
            tokens,
            latency: Duration::ZERO,
        })
    }
}
