//! Domain types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A search query. Ids are opaque strings and never parsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let (id, text) = (id.into(), text.into());
        if id.is_empty() {
            return Err(Error::contract("query id must be non-empty"));
        }
        if text.trim().is_empty() {
            return Err(Error::contract(format!("query {id} has empty text")));
        }
        Ok(Query { id, text })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub title: Option<String>,
    pub text: String,
}

impl Passage {
    pub fn new(id: impl Into<String>, title: Option<String>, text: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::contract("passage id must be non-empty"));
        }
        Ok(Passage {
            id,
            title: title.filter(|t| !t.is_empty()),
            text: text.into(),
        })
    }

    /// Title and body joined by a space, the form both the index and the
    /// prompts see.
    pub fn full_text(&self) -> String {
        match &self.title {
            Some(t) => format!("{t} {}", self.text),
            None => self.text.clone(),
        }
    }
}

/// One entry of a first-stage candidate list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub passage_id: String,
    pub first_stage_score: f64,
    pub first_stage_rank: usize,
}

impl Candidate {
    /// Checks that `list` has distinct, contiguous ranks from 1 in order and
    /// non-increasing scores.
    pub fn validate_list(list: &[Candidate]) -> Result<()> {
        let mut seen = std::collections::HashSet::with_capacity(list.len());
        for (i, c) in list.iter().enumerate() {
            if c.first_stage_rank != i + 1 {
                return Err(Error::contract(format!(
                    "candidate {} has rank {} at position {}",
                    c.passage_id,
                    c.first_stage_rank,
                    i + 1
                )));
            }
            if !c.first_stage_score.is_finite() {
                return Err(Error::contract(format!(
                    "candidate {} has non-finite score",
                    c.passage_id
                )));
            }
            if i > 0 && c.first_stage_score > list[i - 1].first_stage_score {
                return Err(Error::contract(format!(
                    "candidate scores increase at rank {}",
                    c.first_stage_rank
                )));
            }
            if !seen.insert(c.passage_id.as_str()) {
                return Err(Error::contract(format!(
                    "duplicate candidate {}",
                    c.passage_id
                )));
            }
        }
        Ok(())
    }
}

/// The ordered rating options offered to the scorer, e.g. a 1-5 Likert scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreScale {
    options: Vec<i64>,
    tokens: Vec<String>,
}

impl ScoreScale {
    pub fn new(options: Vec<i64>, tokens: Vec<String>) -> Result<Self> {
        if options.len() < 2 {
            return Err(Error::contract("a score scale needs at least two options"));
        }
        if options.len() != tokens.len() {
            return Err(Error::contract(format!(
                "{} options but {} tokens",
                options.len(),
                tokens.len()
            )));
        }
        if options.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract("option values must be strictly increasing"));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &tokens {
            if t.is_empty() || !seen.insert(t.as_str()) {
                return Err(Error::contract(format!(
                    "option tokens must be non-empty and distinct, got {t:?}"
                )));
            }
        }
        Ok(ScoreScale { options, tokens })
    }

    /// Integer scale `lo..=hi` whose tokens are the decimal digits.
    pub fn integer_range(lo: i64, hi: i64) -> Result<Self> {
        let options: Vec<i64> = (lo..=hi).collect();
        let tokens = options.iter().map(|v| v.to_string()).collect();
        Self::new(options, tokens)
    }

    /// The 1-5 Likert scale.
    pub fn likert() -> Self {
        Self::integer_range(1, 5).expect("1..=5 is a valid scale")
    }

    pub fn options(&self) -> &[i64] {
        &self.options
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn min_value(&self) -> i64 {
        self.options[0]
    }

    pub fn max_value(&self) -> i64 {
        self.options[self.options.len() - 1]
    }

    /// Text substituted for `{options}` in prompts: `"1-5"`.
    pub fn describe(&self) -> String {
        format!("{}-{}", self.tokens[0], self.tokens[self.tokens.len() - 1])
    }
}

impl Default for ScoreScale {
    fn default() -> Self {
        Self::likert()
    }
}

/// Probability of each scale option, aligned with [`ScoreScale::options`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    probs: Vec<f64>,
}

impl ScoreDistribution {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::contract("probabilities must be finite and non-negative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ScoreDistribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Softmax restricted to the option tokens: mass the model put on any other
/// token is discarded and the rest renormalized.
pub fn normalize_over_options(raw_logprobs: &[f64], scale: &ScoreScale) -> Result<ScoreDistribution> {
    if raw_logprobs.len() != scale.len() {
        return Err(Error::contract(format!(
            "got {} log-probabilities for {} options",
            raw_logprobs.len(),
            scale.len()
        )));
    }
    softmax(raw_logprobs).map(|probs| ScoreDistribution { probs })
}

/// Numerically stable softmax. Entries may be `-inf` (zero probability) but
/// not NaN or `+inf`.
pub(crate) fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::contract("log-probabilities must be finite or -inf"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Degenerate(
            "every option has zero probability".to_string(),
        ));
    }
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub passage_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Ordered output of one ranking stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub query_id: String,
    pub items: Vec<RankedItem>,
    pub method_tag: String,
}

impl Ranking {
    /// Builds a ranking from `(passage_id, score)` pairs that are already in
    /// rank order, assigning ranks 1..=n.
    pub fn from_ordered(
        query_id: impl Into<String>,
        scored: impl IntoIterator<Item = (String, f64)>,
        method_tag: impl Into<String>,
    ) -> Result<Self> {
        let items = scored
            .into_iter()
            .enumerate()
            .map(|(i, (passage_id, score))| RankedItem {
                passage_id,
                score,
                rank: i + 1,
            })
            .collect();
        let ranking = Ranking {
            query_id: query_id.into(),
            items,
            method_tag: method_tag.into(),
        };
        ranking.validate()?;
        Ok(ranking)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::with_capacity(self.items.len());
        for (i, item) in self.items.iter().enumerate() {
            if item.rank != i + 1 {
                return Err(Error::contract(format!(
                    "query {}: rank {} at position {}",
                    self.query_id,
                    item.rank,
                    i + 1
                )));
            }
            if !item.score.is_finite() {
                return Err(Error::contract(format!(
                    "query {}: non-finite score for {}",
                    self.query_id, item.passage_id
                )));
            }
            if i > 0 && item.score > self.items[i - 1].score {
                return Err(Error::contract(format!(
                    "query {}: score increases at rank {}",
                    self.query_id, item.rank
                )));
            }
            if !seen.insert(item.passage_id.as_str()) {
                return Err(Error::contract(format!(
                    "query {}: duplicate passage {}",
                    self.query_id, item.passage_id
                )));
            }
        }
        Ok(())
    }

    /// Reinterprets this ranking as the candidate list of the next stage.
    pub fn to_candidates(&self) -> Vec<Candidate> {
        self.items
            .iter()
            .map(|it| Candidate {
                passage_id: it.passage_id.clone(),
                first_stage_score: it.score,
                first_stage_rank: it.rank,
            })
            .collect()
    }

    pub fn passage_ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|it| it.passage_id.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn equal_logprobs_give_uniform() {
        let d = normalize_over_options(&[-1.0; 5], &ScoreScale::likert()).unwrap();
        assert!(close(d.probs(), &[0.2; 5], 1e-12));
    }

    #[test]
    fn one_hot_limit() {
        let ninf = f64::NEG_INFINITY;
        let d = normalize_over_options(&[0.0, ninf, ninf, ninf, ninf], &ScoreScale::likert()).unwrap();
        assert_eq!(d.probs(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn already_normalized_logprobs_round_trip() {
        let p = [0.1, 0.2, 0.4, 0.2, 0.1];
        let lp: Vec<f64> = p.iter().map(|x: &f64| x.ln()).collect();
        let d = normalize_over_options(&lp, &ScoreScale::likert()).unwrap();
        assert!(close(d.probs(), &p, 1e-12));
    }

    #[test]
    fn length_mismatch_and_degenerate_inputs() {
        let scale = ScoreScale::likert();
        assert!(matches!(
            normalize_over_options(&[0.0; 4], &scale),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            normalize_over_options(&[f64::NEG_INFINITY; 5], &scale),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            normalize_over_options(&[0.0, f64::NAN, 0.0, 0.0, 0.0], &scale),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn scale_validation() {
        assert!(ScoreScale::integer_range(1, 1).is_err());
        assert!(ScoreScale::new(vec![1, 1], vec!["a".into(), "b".into()]).is_err());
        assert!(ScoreScale::new(vec![1, 2], vec!["a".into(), "a".into()]).is_err());
        assert!(ScoreScale::new(vec![1, 2], vec!["a".into()]).is_err());
        assert_eq!(ScoreScale::likert().describe(), "1-5");
    }

    #[test]
    fn query_and_passage_invariants() {
        assert!(Query::new("", "x").is_err());
        assert!(Query::new("q", "   ").is_err());
        assert!(Passage::new("", None, "x").is_err());
        let p = Passage::new("d", Some(String::new()), "body").unwrap();
        assert_eq!(p.title, None);
        assert_eq!(p.full_text(), "body");
    }

    #[test]
    fn ranking_validation() {
        let ok = Ranking::from_ordered("q", vec![("a".into(), 2.0), ("b".into(), 2.0)], "t");
        assert!(ok.is_ok());
        let bad = Ranking::from_ordered("q", vec![("a".into(), 1.0), ("b".into(), 2.0)], "t");
        assert!(bad.is_err());
        let dup = Ranking::from_ordered("q", vec![("a".into(), 2.0), ("a".into(), 1.0)], "t");
        assert!(dup.is_err());
    }

    proptest! {
        #[test]
        fn shift_invariance(lp in prop::collection::vec(-30.0f64..0.0, 5), c in -50.0f64..50.0) {
            let scale = ScoreScale::likert();
            let a = normalize_over_options(&lp, &scale).unwrap();
            let shifted: Vec<f64> = lp.iter().map(|x| x + c).collect();
            let b = normalize_over_options(&shifted, &scale).unwrap();
            prop_assert!(close(a.probs(), b.probs(), 1e-9));
            prop_assert!((a.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn permutation_equivariance(lp in prop::collection::vec(-30.0f64..0.0, 5), perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle()) {
            let scale = ScoreScale::likert();
            let a = normalize_over_options(&lp, &scale).unwrap();
            let permuted: Vec<f64> = perm.iter().map(|&i| lp[i]).collect();
            let b = normalize_over_options(&permuted, &scale).unwrap();
            for (out, &src) in perm.iter().enumerate() {
                prop_assert!((b.probs()[out] - a.probs()[src]).abs() < 1e-12);
            }
        }
    }
}
