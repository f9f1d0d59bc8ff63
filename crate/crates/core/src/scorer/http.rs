//! Client for the JSON scoring protocol.
//!
//! `POST {base}/v1/score_options` with `{"prompt": .., "options": [..]}`
//! answers `{"logprobs": {"<option>": <float>, ..}}`.
//!
//! `POST {base}/v1/loglikelihood` with `{"context": .., "continuation": ..}`
//! answers `{"logprob": <float>, "num_tokens": <int>}`.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::backend::{
    BackendFailure, Likelihood, LikelihoodRequest, OptionsRequest, ScoringBackend,
};

pub const SCORE_OPTIONS_PATH: &str = "/v1/score_options";
pub const LOGLIKELIHOOD_PATH: &str = "/v1/loglikelihood";

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreOptionsRequest {
    pub prompt: String,
    pub options: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreOptionsResponse {
    pub logprobs: HashMap<String, f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct LoglikelihoodRequest {
    pub context: String,
    pub continuation: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LoglikelihoodResponse {
    pub logprob: f64,
    pub num_tokens: u32,
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let base_url = base_url.into().trim_end_matches('/').to_string();
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        HttpBackend { base_url, agent }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, BackendFailure> {
        let url = format!("{}{}", self.base_url, path);
        let resp = match self.agent.post(&url).send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().unwrap_or_default();
                return Err(if code >= 500 || code == 429 {
                    BackendFailure::Transport(format!("{url}: HTTP {code}: {text}"))
                } else if code == 404 && path == LOGLIKELIHOOD_PATH {
                    BackendFailure::Unsupported(format!("{url}: likelihood endpoint not found"))
                } else {
                    BackendFailure::Protocol(format!("{url}: HTTP {code}: {text}"))
                });
            }
            Err(ureq::Error::Transport(t)) => {
                return Err(BackendFailure::Transport(t.to_string()))
            }
        };
        let text = resp
            .into_string()
            .map_err(|e| BackendFailure::Transport(format!("{url}: reading body: {e}")))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendFailure::Protocol(format!("{url}: bad response body: {e}")))
    }
}

impl ScoringBackend for HttpBackend {
    fn identity(&self) -> String {
        format!("http:{}", self.base_url)
    }

    fn score_options(&self, req: &OptionsRequest<'_>) -> Result<Vec<f64>, BackendFailure> {
        let body = ScoreOptionsRequest {
            prompt: req.prompt.to_string(),
            options: req.options.to_vec(),
        };
        let resp: ScoreOptionsResponse = self.post(SCORE_OPTIONS_PATH, &body)?;
        req.options
            .iter()
            .map(|opt| match resp.logprobs.get(opt) {
                Some(lp) if lp.is_finite() => Ok(*lp),
                Some(lp) => Err(BackendFailure::Protocol(format!(
                    "non-finite log-probability {lp} for option {opt:?}"
                ))),
                None => Err(BackendFailure::Protocol(format!(
                    "response is missing option {opt:?}"
                ))),
            })
            .collect()
    }

    fn loglikelihood(&self, req: &LikelihoodRequest<'_>) -> Result<Likelihood, BackendFailure> {
        let body = LoglikelihoodRequest {
            context: req.context.to_string(),
            continuation: req.continuation.to_string(),
        };
        let resp: LoglikelihoodResponse = self.post(LOGLIKELIHOOD_PATH, &body)?;
        if !resp.logprob.is_finite() || resp.num_tokens == 0 {
            return Err(BackendFailure::Protocol(format!(
                "invalid likelihood response: logprob {} over {} tokens",
                resp.logprob, resp.num_tokens
            )));
        }
        Ok(Likelihood {
            logprob: resp.logprob,
            num_tokens: resp.num_tokens,
        })
    }
}
