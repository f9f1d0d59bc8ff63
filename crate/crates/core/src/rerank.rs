//! Pointwise, pairwise and two-stage reranking of candidate lists.
//!
//! Every stage is a stable re-sort: equal scores keep the order of the
//! previous stage. All scores for a query are collected before anything is
//! sorted, so results do not depend on the order requests complete in.

use std::collections::HashMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregate::{hard_score, pairwise_scores, soft_score, PairwiseMatrix};
use crate::error::{Error, Result};
use crate::scorer::{CallCounts, Scorer};
use crate::types::{Candidate, Passage, Query, Ranking};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pointwise,
    Pairwise,
    /// Pointwise over all candidates, then pairwise over the pointwise head.
    Pipeline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointwiseMode {
    /// Expected Likert rating.
    Soft,
    /// Most likely Likert rating.
    Hard,
    /// Probability of "yes".
    Binary,
    /// Query log-likelihood given the passage.
    Upr,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pointwise => "pointwise",
            Method::Pairwise => "pairwise",
            Method::Pipeline => "pipeline",
        }
    }

    fn uses_pairwise(self) -> bool {
        matches!(self, Method::Pairwise | Method::Pipeline)
    }
}

impl PointwiseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PointwiseMode::Soft => "soft",
            PointwiseMode::Hard => "hard",
            PointwiseMode::Binary => "binary",
            PointwiseMode::Upr => "upr",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pointwise" => Ok(Method::Pointwise),
            "pairwise" => Ok(Method::Pairwise),
            "pipeline" => Ok(Method::Pipeline),
            _ => Err(format!("unknown method {s:?}, expected pointwise, pairwise or pipeline")),
        }
    }
}

impl FromStr for PointwiseMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "soft" => Ok(PointwiseMode::Soft),
            "hard" => Ok(PointwiseMode::Hard),
            "binary" => Ok(PointwiseMode::Binary),
            "upr" => Ok(PointwiseMode::Upr),
            _ => Err(format!("unknown mode {s:?}, expected soft, hard, binary or upr")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankConfig {
    pub method: Method,
    pub pointwise_mode: PointwiseMode,
    /// Candidates compared pairwise (k').
    pub pairwise_depth: usize,
    /// Candidates taken from the first stage (k).
    pub candidate_depth: usize,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            method: Method::Pointwise,
            pointwise_mode: PointwiseMode::Soft,
            pairwise_depth: 40,
            candidate_depth: 100,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidate_depth == 0 {
            return Err(Error::contract("candidate depth must be at least 1"));
        }
        if self.method.uses_pairwise() {
            if self.pairwise_depth < 2 {
                return Err(Error::contract(format!(
                    "pairwise depth must be at least 2, got {}",
                    self.pairwise_depth
                )));
            }
            if self.pairwise_depth > self.candidate_depth {
                return Err(Error::contract(format!(
                    "pairwise depth {} exceeds candidate depth {}",
                    self.pairwise_depth, self.candidate_depth
                )));
            }
        }
        Ok(())
    }

    /// Run tag naming the stages, e.g. `pointwise-soft+pairwise`.
    pub fn method_tag(&self) -> String {
        let point = format!("pointwise-{}", self.pointwise_mode.as_str());
        match self.method {
            Method::Pointwise => point,
            Method::Pairwise => "pairwise".to_string(),
            Method::Pipeline => format!("{point}+pairwise"),
        }
    }
}

/// Where rerankers look up passage text by id.
pub trait PassageStore {
    fn passage(&self, id: &str) -> Option<&Passage>;
}

impl PassageStore for HashMap<String, Passage> {
    fn passage(&self, id: &str) -> Option<&Passage> {
        self.get(id)
    }
}

/// A ranking plus the scoring requests it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Reranked {
    pub ranking: Ranking,
    pub calls: CallCounts,
}

pub struct Reranker<'a> {
    scorer: &'a Scorer,
    config: RerankConfig,
}

impl<'a> Reranker<'a> {
    pub fn new(scorer: &'a Scorer, config: RerankConfig) -> Result<Self> {
        config.validate()?;
        Ok(Reranker { scorer, config })
    }

    pub fn config(&self) -> &RerankConfig {
        &self.config
    }

    /// Reranks the first `candidate_depth` candidates with the configured
    /// method. Lists too short for a pairwise stage skip it.
    pub fn rerank(
        &self,
        query: &Query,
        candidates: &[Candidate],
        passages: &impl PassageStore,
    ) -> Result<Reranked> {
        let candidates = &candidates[..candidates.len().min(self.config.candidate_depth)];
        match self.config.method {
            Method::Pointwise => self.rerank_pointwise(query, candidates, passages),
            Method::Pairwise if candidates.len() < 2 => {
                log::warn!("query {}: fewer than two candidates, keeping input order", query.id);
                passthrough(query, candidates, "pairwise")
            }
            Method::Pairwise => self.rerank_pairwise(query, candidates, passages),
            Method::Pipeline if candidates.len() < 2 => {
                log::warn!("query {}: fewer than two candidates, pairwise stage skipped", query.id);
                self.rerank_pointwise(query, candidates, passages)
            }
            Method::Pipeline => self.rerank_pipeline(query, candidates, passages),
        }
    }

    /// Scores every candidate once and sorts by score.
    pub fn rerank_pointwise(
        &self,
        query: &Query,
        candidates: &[Candidate],
        passages: &impl PassageStore,
    ) -> Result<Reranked> {
        let docs = resolve(query, candidates, passages)?;
        let scorer = self.scorer;
        let scale = scorer.scale();
        let mode = self.config.pointwise_mode;
        let scores = scorer.map_parallel(&docs, |p| match mode {
            PointwiseMode::Soft => soft_score(&scorer.score_pointwise(query, p)?, scale),
            PointwiseMode::Hard => hard_score(&scorer.score_pointwise(query, p)?, scale).map(|v| v as f64),
            PointwiseMode::Binary => scorer.score_binary(query, p),
            PointwiseMode::Upr => scorer.upr_loglikelihood(query, p),
        })?;
        let n = docs.len() as u64;
        let calls = match mode {
            PointwiseMode::Soft | PointwiseMode::Hard => CallCounts { likert: n, ..Default::default() },
            PointwiseMode::Binary => CallCounts { binary: n, ..Default::default() },
            PointwiseMode::Upr => CallCounts { likelihood: n, ..Default::default() },
        };
        let order = stable_order(&scores);
        let ranking = Ranking::from_ordered(
            query.id.clone(),
            order.iter().map(|&i| (candidates[i].passage_id.clone(), scores[i])),
            format!("pointwise-{}", mode.as_str()),
        )?;
        Ok(Reranked { ranking, calls })
    }

    /// Compares every ordered pair among the first `pairwise_depth`
    /// candidates and sorts them by summed win probability. Later candidates
    /// follow in input order.
    pub fn rerank_pairwise(
        &self,
        query: &Query,
        candidates: &[Candidate],
        passages: &impl PassageStore,
    ) -> Result<Reranked> {
        let k = candidates.len().min(self.config.pairwise_depth);
        if k < 2 {
            return Err(Error::contract(format!(
                "query {}: pairwise reranking needs at least two candidates, got {k}",
                query.id
            )));
        }
        let docs = resolve(query, candidates, passages)?;
        let pairs: Vec<(usize, usize)> = (0..k)
            .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        let scorer = self.scorer;
        let probs = scorer.map_parallel(&pairs, |&(i, j)| scorer.score_pairwise(query, docs[i], docs[j]))?;
        let mut matrix = PairwiseMatrix::new(k);
        for (&(i, j), p) in pairs.iter().zip(probs) {
            matrix.set(i, j, p)?;
        }
        let s2 = pairwise_scores(&matrix)?;
        let order = stable_order(&s2);
        let head_min = order.last().map(|&i| s2[i]).unwrap_or(0.0);
        let head = order.iter().map(|&i| (candidates[i].passage_id.clone(), s2[i]));
        let tail = candidates[k..]
            .iter()
            .enumerate()
            .map(|(t, c)| (c.passage_id.clone(), tail_score(head_min, t)));
        let ranking = Ranking::from_ordered(query.id.clone(), head.chain(tail), "pairwise")?;
        let calls = CallCounts {
            pairwise: pairs.len() as u64,
            ..Default::default()
        };
        Ok(Reranked { ranking, calls })
    }

    /// Pointwise over every candidate, then pairwise over the pointwise top
    /// `pairwise_depth`.
    pub fn rerank_pipeline(
        &self,
        query: &Query,
        candidates: &[Candidate],
        passages: &impl PassageStore,
    ) -> Result<Reranked> {
        let point = self.rerank_pointwise(query, candidates, passages)?;
        let staged = point.ranking.to_candidates();
        let pair = self.rerank_pairwise(query, &staged, passages)?;
        let mut ranking = pair.ranking;
        ranking.method_tag = format!("{}+pairwise", point.ranking.method_tag);
        let calls = CallCounts {
            pairwise: pair.calls.pairwise,
            ..point.calls
        };
        Ok(Reranked { ranking, calls })
    }
}

/// Score for the `t`-th (0-based) candidate after a pairwise head whose
/// lowest score is `head_min`: strictly below the head, descending.
fn tail_score(head_min: f64, t: usize) -> f64 {
    head_min - 1.0 - t as f64 * 1e-6
}

/// Indices sorted by score, highest first, ties in index order.
fn stable_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("scores are finite"));
    order
}

fn resolve<'p>(
    query: &Query,
    candidates: &[Candidate],
    passages: &'p impl PassageStore,
) -> Result<Vec<&'p Passage>> {
    if candidates.is_empty() {
        return Err(Error::contract(format!("query {} has no candidates", query.id)));
    }
    Candidate::validate_list(candidates)?;
    candidates
        .iter()
        .map(|c| {
            passages.passage(&c.passage_id).ok_or_else(|| {
                Error::contract(format!(
                    "query {}: candidate {} is not in the corpus",
                    query.id, c.passage_id
                ))
            })
        })
        .collect()
}

fn passthrough(query: &Query, candidates: &[Candidate], tag: &str) -> Result<Reranked> {
    let ranking = Ranking::from_ordered(
        query.id.clone(),
        candidates.iter().map(|c| (c.passage_id.clone(), c.first_stage_score)),
        tag,
    )?;
    Ok(Reranked {
        ranking,
        calls: CallCounts::default(),
    })
}
