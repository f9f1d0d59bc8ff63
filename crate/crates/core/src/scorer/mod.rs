//! Turning (query, passage) and (query, passage, passage) into probabilities.
//!
//! A [`Scorer`] owns the prompt templates, the option scale, an optional
//! answer cache and a [`ScoringBackend`]. Backends only ever see prompts and
//! option tokens; renormalizing over the options happens here.

mod backend;
mod cache;
mod http;
mod oracle;
pub mod stub;
mod template;

use std::sync::Arc;
use std::time::Duration;

pub use backend::{
    BackendFailure, CallCounts, CountingBackend, Likelihood, LikelihoodRequest, OptionsRequest,
    RequestKind, ScoringBackend,
};
pub use cache::{CacheKey, CachedAnswer, ScoreCache};
pub use http::{
    HttpBackend, LoglikelihoodRequest, LoglikelihoodResponse, ScoreOptionsRequest,
    ScoreOptionsResponse, LOGLIKELIHOOD_PATH, SCORE_OPTIONS_PATH,
};
pub use oracle::{oracle_distribution, OracleBackend, OracleRelevanceTable};
pub use template::{
    render_pointwise_prompt, truncate_at_whitespace, Bindings, PromptTemplate, TemplateError,
    TemplateKind, DEFAULT_MAX_PASSAGE_CHARS,
};

use crate::error::{Error, Result};
use crate::types::{normalize_over_options, softmax, Passage, Query, ScoreDistribution, ScoreScale};

/// Labels shown for the two passages of a pairwise prompt.
pub const PAIR_LABELS: [&str; 2] = ["A", "B"];
pub const BINARY_LABELS: [&str; 2] = ["yes", "no"];

/// A scoring request that failed, with the pair it was about.
#[derive(Debug, thiserror::Error)]
#[error("query {query_id} passages [{}]: {kind}", passage_ids.join(", "))]
pub struct ScoreError {
    pub query_id: String,
    pub passage_ids: Vec<String>,
    pub kind: ScoreErrorKind,
}

#[derive(Debug, thiserror::Error)]
pub enum ScoreErrorKind {
    #[error("backend unavailable after {attempts} attempts: {failure}")]
    Exhausted { failure: BackendFailure, attempts: u32 },
    #[error("{0}")]
    Protocol(String),
    #[error("unsupported mode: {0}")]
    Unsupported(String),
    #[error("backend returned no usable probability mass: {0}")]
    Degenerate(String),
}

impl ScoreError {
    /// True when the backend could not be reached at all, as opposed to
    /// answering badly.
    pub fn is_unavailable(&self) -> bool {
        matches!(self.kind, ScoreErrorKind::Exhausted { .. })
    }
}

/// Retries for transport failures, with exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff: Duration::from_millis(200),
        }
    }
}

/// How query likelihoods are turned into a score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LikelihoodNormalization {
    /// Mean log-probability per query token.
    #[default]
    Mean,
    Total,
}

#[derive(Debug, Clone)]
pub struct Templates {
    pub pointwise: PromptTemplate,
    pub pairwise: PromptTemplate,
    pub binary: PromptTemplate,
    pub upr: PromptTemplate,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            pointwise: PromptTemplate::default_for(TemplateKind::Pointwise),
            pairwise: PromptTemplate::default_for(TemplateKind::Pairwise),
            binary: PromptTemplate::default_for(TemplateKind::Binary),
            upr: PromptTemplate::default_for(TemplateKind::Upr),
        }
    }
}

impl Templates {
    fn check(&self) -> Result<()> {
        let want = [
            (&self.pointwise, TemplateKind::Pointwise),
            (&self.pairwise, TemplateKind::Pairwise),
            (&self.binary, TemplateKind::Binary),
            (&self.upr, TemplateKind::Upr),
        ];
        for (t, kind) in want {
            if t.kind() != kind {
                return Err(TemplateError::WrongKind {
                    template: t.name().to_string(),
                    expected: kind,
                    actual: t.kind(),
                }
                .into());
            }
        }
        Ok(())
    }
}

pub struct ScorerBuilder {
    backend: Arc<dyn ScoringBackend>,
    scale: ScoreScale,
    templates: Templates,
    cache: Option<Arc<ScoreCache>>,
    retry: RetryPolicy,
    max_parallel: usize,
    likelihood: LikelihoodNormalization,
}

impl ScorerBuilder {
    pub fn scale(mut self, scale: ScoreScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn templates(mut self, templates: Templates) -> Self {
        self.templates = templates;
        self
    }

    pub fn cache(mut self, cache: Arc<ScoreCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Upper bound on requests in flight at once.
    pub fn max_parallel(mut self, n: usize) -> Self {
        self.max_parallel = n;
        self
    }

    pub fn likelihood_normalization(mut self, n: LikelihoodNormalization) -> Self {
        self.likelihood = n;
        self
    }

    pub fn build(self) -> Result<Scorer> {
        if self.max_parallel == 0 {
            return Err(Error::contract("max_parallel_requests must be at least 1"));
        }
        self.templates.check()?;
        let pool = if self.max_parallel > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(self.max_parallel)
                    .thread_name(|i| format!("scorer-{i}"))
                    .build()
                    .map_err(|e| Error::contract(format!("cannot start scorer threads: {e}")))?,
            )
        } else {
            None
        };
        Ok(Scorer {
            backend: self.backend,
            scale: self.scale,
            templates: self.templates,
            cache: self.cache,
            retry: self.retry,
            max_parallel: self.max_parallel,
            likelihood: self.likelihood,
            pool,
            pair_labels: PAIR_LABELS.map(String::from).to_vec(),
            binary_labels: BINARY_LABELS.map(String::from).to_vec(),
        })
    }
}

pub struct Scorer {
    backend: Arc<dyn ScoringBackend>,
    scale: ScoreScale,
    templates: Templates,
    cache: Option<Arc<ScoreCache>>,
    retry: RetryPolicy,
    max_parallel: usize,
    likelihood: LikelihoodNormalization,
    pool: Option<rayon::ThreadPool>,
    pair_labels: Vec<String>,
    binary_labels: Vec<String>,
}

impl std::fmt::Debug for Scorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scorer")
            .field("backend", &self.backend.identity())
            .field("scale", &self.scale)
            .field("max_parallel", &self.max_parallel)
            .field("cache", &self.cache.as_ref().map(|c| c.path().to_path_buf()))
            .finish()
    }
}

impl Scorer {
    pub fn builder(backend: Arc<dyn ScoringBackend>) -> ScorerBuilder {
        ScorerBuilder {
            backend,
            scale: ScoreScale::likert(),
            templates: Templates::default(),
            cache: None,
            retry: RetryPolicy::default(),
            max_parallel: 1,
            likelihood: LikelihoodNormalization::default(),
        }
    }

    pub fn scale(&self) -> &ScoreScale {
        &self.scale
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    pub fn max_parallel(&self) -> usize {
        self.max_parallel
    }

    /// Likert distribution for one pair, renormalized over the scale's tokens.
    pub fn score_pointwise(&self, query: &Query, passage: &Passage) -> Result<ScoreDistribution> {
        let prompt = self
            .templates
            .pointwise
            .render_single(query, passage, &self.scale.describe())?;
        let lp = self.options_logprobs(
            RequestKind::Likert,
            &self.templates.pointwise,
            &prompt,
            self.scale.tokens(),
            query,
            &[passage],
        )?;
        normalize_over_options(&lp, &self.scale).map_err(|e| self.degenerate(e, query, &[passage]))
    }

    /// Probability that `first` is picked over `second` when shown in that
    /// order. The probability of `second` is one minus this.
    pub fn score_pairwise(&self, query: &Query, first: &Passage, second: &Passage) -> Result<f64> {
        if first.id == second.id {
            return Err(Error::contract(format!(
                "pairwise comparison of passage {} with itself",
                first.id
            )));
        }
        let prompt = self.templates.pairwise.render_pair(
            query,
            first,
            second,
            &self.pair_labels.join(" or "),
        )?;
        let lp = self.options_logprobs(
            RequestKind::Pairwise,
            &self.templates.pairwise,
            &prompt,
            &self.pair_labels,
            query,
            &[first, second],
        )?;
        self.first_of_two(&lp, query, &[first, second])
    }

    /// Renormalized probability of answering "yes".
    pub fn score_binary(&self, query: &Query, passage: &Passage) -> Result<f64> {
        let prompt = self.templates.binary.render_single(
            query,
            passage,
            &self.binary_labels.join(" or "),
        )?;
        let lp = self.options_logprobs(
            RequestKind::Binary,
            &self.templates.binary,
            &prompt,
            &self.binary_labels,
            query,
            &[passage],
        )?;
        self.first_of_two(&lp, query, &[passage])
    }

    /// Log-likelihood of the query given the passage, per token by default.
    pub fn upr_loglikelihood(&self, query: &Query, passage: &Passage) -> Result<f64> {
        let continuation = query.text.trim();
        if continuation.is_empty() {
            return Err(Error::contract(format!("query {} is empty", query.id)));
        }
        let context = self.templates.upr.render_context(passage)?;
        let key = self.cache.as_ref().map(|_| {
            CacheKey::new()
                .part("likelihood")
                .part(self.templates.upr.body())
                .part(&self.backend.identity())
                .part(&query.id)
                .part(continuation)
                .part(&passage.id)
                .part(&passage.full_text())
                .finish()
        });
        let cached = match (&self.cache, &key) {
            (Some(c), Some(k)) => match c.get(k) {
                Some(CachedAnswer::Likelihood(l)) => Some(l),
                _ => None,
            },
            _ => None,
        };
        let likelihood = match cached {
            Some(l) => l,
            None => {
                let req = LikelihoodRequest {
                    context: &context,
                    continuation,
                    query,
                    passage,
                };
                let l = self.with_retries(query, &[passage], || self.backend.loglikelihood(&req))?;
                if let (Some(c), Some(k)) = (&self.cache, key) {
                    c.insert(k, CachedAnswer::Likelihood(l))?;
                }
                l
            }
        };
        if likelihood.num_tokens == 0 || !likelihood.logprob.is_finite() {
            return Err(self.failure(
                query,
                &[passage],
                ScoreErrorKind::Protocol(format!("invalid likelihood {likelihood:?}")),
            ));
        }
        Ok(match self.likelihood {
            LikelihoodNormalization::Mean => likelihood.logprob / likelihood.num_tokens as f64,
            LikelihoodNormalization::Total => likelihood.logprob,
        })
    }

    /// Runs `f` over `items`, at most `max_parallel` at a time. Results come
    /// back in item order whatever the completion order.
    pub fn map_parallel<T, R, F>(&self, items: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> Result<R> + Sync + Send,
    {
        use rayon::prelude::*;
        match &self.pool {
            Some(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            None => items.iter().map(f).collect(),
        }
    }

    fn first_of_two(&self, lp: &[f64], query: &Query, passages: &[&Passage]) -> Result<f64> {
        softmax(lp)
            .map(|p| p[0])
            .map_err(|e| self.degenerate(e, query, passages))
    }

    fn options_logprobs(
        &self,
        kind: RequestKind,
        template: &PromptTemplate,
        prompt: &str,
        options: &[String],
        query: &Query,
        passages: &[&Passage],
    ) -> Result<Vec<f64>> {
        let key = self.cache.as_ref().map(|_| {
            let mut k = CacheKey::new()
                .part(match kind {
                    RequestKind::Likert => "likert",
                    RequestKind::Pairwise => "pairwise",
                    RequestKind::Binary => "binary",
                })
                .part(template.body())
                .part(&self.backend.identity())
                .part(&query.id)
                .part(&query.text);
            for p in passages {
                k = k.part(&p.id).part(&p.full_text());
            }
            for o in options {
                k = k.part(o);
            }
            k.finish()
        });
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(CachedAnswer::Logprobs(lp)) = cache.get(key) {
                if lp.len() == options.len() {
                    return Ok(lp);
                }
            }
        }
        let req = OptionsRequest {
            kind,
            prompt,
            options,
            query,
            passages,
        };
        let lp = self.with_retries(query, passages, || self.backend.score_options(&req))?;
        if lp.len() != options.len() {
            return Err(self.failure(
                query,
                passages,
                ScoreErrorKind::Protocol(format!(
                    "{} log-probabilities for {} options",
                    lp.len(),
                    options.len()
                )),
            ));
        }
        if let (Some(cache), Some(key)) = (&self.cache, key) {
            cache.insert(key, CachedAnswer::Logprobs(lp.clone()))?;
        }
        Ok(lp)
    }

    fn with_retries<T>(
        &self,
        query: &Query,
        passages: &[&Passage],
        mut call: impl FnMut() -> Result<T, BackendFailure>,
    ) -> Result<T> {
        let mut backoff = self.retry.initial_backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match call() {
                Ok(v) => return Ok(v),
                Err(failure) if failure.is_retryable() && attempts <= self.retry.max_retries => {
                    log::warn!(
                        "query {}: attempt {attempts} failed ({failure}); retrying in {backoff:?}",
                        query.id
                    );
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
                Err(failure) => {
                    let kind = match failure {
                        BackendFailure::Transport(_) => ScoreErrorKind::Exhausted { failure, attempts },
                        BackendFailure::Protocol(m) => ScoreErrorKind::Protocol(m),
                        BackendFailure::Unsupported(m) => ScoreErrorKind::Unsupported(m),
                    };
                    return Err(self.failure(query, passages, kind));
                }
            }
        }
    }

    fn failure(&self, query: &Query, passages: &[&Passage], kind: ScoreErrorKind) -> Error {
        Error::Score(ScoreError {
            query_id: query.id.clone(),
            passage_ids: passages.iter().map(|p| p.id.clone()).collect(),
            kind,
        })
    }

    fn degenerate(&self, e: Error, query: &Query, passages: &[&Passage]) -> Error {
        match e {
            Error::Degenerate(m) | Error::Contract(m) => {
                self.failure(query, passages, ScoreErrorKind::Degenerate(m))
            }
            other => other,
        }
    }
}
