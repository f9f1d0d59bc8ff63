use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::types::{Passage, Query};

/// What an option-scoring request is asking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    /// Rate one passage on the Likert scale.
    Likert,
    /// Pick the more relevant of two passages.
    Pairwise,
    /// Answer yes or no.
    Binary,
}

/// Request for the log-probability of each option token at the first
/// generated position.
///
/// The prompt is what an LLM sees. The query and passages travel along so
/// that test backends can answer from ids instead of text.
#[derive(Debug, Clone)]
pub struct OptionsRequest<'a> {
    pub kind: RequestKind,
    pub prompt: &'a str,
    pub options: &'a [String],
    pub query: &'a Query,
    pub passages: &'a [&'a Passage],
}

#[derive(Debug, Clone)]
pub struct LikelihoodRequest<'a> {
    pub context: &'a str,
    pub continuation: &'a str,
    pub query: &'a Query,
    pub passage: &'a Passage,
}

/// Total log-likelihood of a continuation and how many tokens it spans.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Likelihood {
    pub logprob: f64,
    pub num_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendFailure {
    /// Connection, timeout or server-side failure. Worth retrying.
    #[error("transport failure: {0}")]
    Transport(String),
    /// The backend answered with something that does not follow the protocol.
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl BackendFailure {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendFailure::Transport(_))
    }
}

/// Anything that can turn prompts into option-token log-probabilities.
///
/// Implementations must accept concurrent calls.
pub trait ScoringBackend: Send + Sync {
    /// Stable description used in cache keys, e.g. `http:http://host:8000`.
    fn identity(&self) -> String;

    /// One log-probability per entry of `req.options`, in the same order.
    fn score_options(&self, req: &OptionsRequest<'_>) -> Result<Vec<f64>, BackendFailure>;

    fn loglikelihood(&self, req: &LikelihoodRequest<'_>) -> Result<Likelihood, BackendFailure> {
        let _ = req;
        Err(BackendFailure::Unsupported(format!(
            "{} does not support likelihood requests",
            self.identity()
        )))
    }
}

impl<B: ScoringBackend + ?Sized> ScoringBackend for std::sync::Arc<B> {
    fn identity(&self) -> String {
        (**self).identity()
    }

    fn score_options(&self, req: &OptionsRequest<'_>) -> Result<Vec<f64>, BackendFailure> {
        (**self).score_options(req)
    }

    fn loglikelihood(&self, req: &LikelihoodRequest<'_>) -> Result<Likelihood, BackendFailure> {
        (**self).loglikelihood(req)
    }
}

/// Snapshot of how many requests of each kind reached a backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CallCounts {
    pub likert: u64,
    pub pairwise: u64,
    pub binary: u64,
    pub likelihood: u64,
}

impl CallCounts {
    pub fn total(&self) -> u64 {
        self.likert + self.pairwise + self.binary + self.likelihood
    }

    /// Pointwise requests of any mode.
    pub fn pointwise(&self) -> u64 {
        self.likert + self.binary + self.likelihood
    }
}

impl std::ops::Sub for CallCounts {
    type Output = CallCounts;

    fn sub(self, rhs: CallCounts) -> CallCounts {
        CallCounts {
            likert: self.likert - rhs.likert,
            pairwise: self.pairwise - rhs.pairwise,
            binary: self.binary - rhs.binary,
            likelihood: self.likelihood - rhs.likelihood,
        }
    }
}

/// Wraps a backend and counts every request that reaches it.
#[derive(Debug, Default)]
pub struct CountingBackend<B> {
    inner: B,
    likert: AtomicU64,
    pairwise: AtomicU64,
    binary: AtomicU64,
    likelihood: AtomicU64,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            likert: AtomicU64::new(0),
            pairwise: AtomicU64::new(0),
            binary: AtomicU64::new(0),
            likelihood: AtomicU64::new(0),
        }
    }

    pub fn counts(&self) -> CallCounts {
        CallCounts {
            likert: self.likert.load(Ordering::SeqCst),
            pairwise: self.pairwise.load(Ordering::SeqCst),
            binary: self.binary.load(Ordering::SeqCst),
            likelihood: self.likelihood.load(Ordering::SeqCst),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ScoringBackend> ScoringBackend for CountingBackend<B> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn score_options(&self, req: &OptionsRequest<'_>) -> Result<Vec<f64>, BackendFailure> {
        let counter = match req.kind {
            RequestKind::Likert => &self.likert,
            RequestKind::Pairwise => &self.pairwise,
            RequestKind::Binary => &self.binary,
        };
        counter.fetch_add(1, Ordering::SeqCst);
        self.inner.score_options(req)
    }

    fn loglikelihood(&self, req: &LikelihoodRequest<'_>) -> Result<Likelihood, BackendFailure> {
        self.likelihood.fetch_add(1, Ordering::SeqCst);
        self.inner.loglikelihood(req)
    }
}
