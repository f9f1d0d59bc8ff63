//! Unsupervised passage reranking driven by an instruction-following LLM.
//!
//! The crate turns option-token probabilities from a scoring backend into
//! rankings. Pointwise reranking asks for a 1-5 relevance rating and takes the
//! expected rating under the model's distribution; pairwise reranking asks which
//! of two passages is more relevant for every ordered pair and sums the
//! selection probabilities. A BM25 first stage, TREC/BEIR file handling and
//! trec_eval-compatible NDCG complete the pipeline.
//!
//! ```
//! use rerank_core::{aggregate, ScoreScale, normalize_over_options};
//!
//! let scale = ScoreScale::likert();
//! let dist = normalize_over_options(&[-3.0, -2.0, -1.0, -0.5, -2.0], &scale).unwrap();
//! let s = aggregate::soft_score(&dist, &scale).unwrap();
//! assert!(s > 1.0 && s < 5.0);
//! ```

pub mod aggregate;
pub mod bm25;
pub mod dataio;
mod error;
pub mod metrics;
pub mod rerank;
pub mod scorer;
mod types;

pub use error::{DataError, Error, Result};
pub use types::{
    normalize_over_options, Candidate, Passage, Query, RankedItem, Ranking, ScoreDistribution,
    ScoreScale,
};
