//! Deterministic test backend whose answers are a pure function of hidden
//! relevance grades.
//!
//! For a (query, passage) pair with grade `g` on a scale with `m` options the
//! Likert distribution is `p[j] ∝ exp(-λ |j - min(g, m - 1)|)`. Pairwise
//! requests pick the first passage with probability `σ(λ (g_a - g_b))` and
//! binary requests answer "yes" with `σ(λ (2 min(g, 1) - 1))`.
//!
//! With `noise > 0` every pair gets a latent grade `g + noise * z`, `z` a
//! standard normal drawn from a generator seeded by the pair's ids, and the
//! formulas above use the latent grade instead.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::backend::{
    BackendFailure, Likelihood, LikelihoodRequest, OptionsRequest, RequestKind, ScoringBackend,
};
use crate::error::{Error, Result};
use crate::metrics::Qrels;
use crate::types::{softmax, ScoreDistribution, ScoreScale};

#[derive(Debug, Clone)]
pub struct OracleRelevanceTable {
    grades: HashMap<String, HashMap<String, u32>>,
    max_grade: u32,
    sharpness: f64,
    noise: f64,
    seed: u64,
}

impl OracleRelevanceTable {
    pub fn new(max_grade: u32, sharpness: f64) -> Result<Self> {
        if sharpness.is_nan() || sharpness < 0.0 {
            return Err(Error::contract(format!("sharpness must be >= 0, got {sharpness}")));
        }
        Ok(OracleRelevanceTable {
            grades: HashMap::new(),
            max_grade,
            sharpness,
            noise: 0.0,
            seed: 0,
        })
    }

    /// Uses every judged pair of `qrels` as a hidden grade.
    pub fn from_qrels(qrels: &Qrels, sharpness: f64) -> Result<Self> {
        let max_grade = qrels.iter().flat_map(|(_, docs)| docs.values().copied()).max().unwrap_or(0);
        let mut table = Self::new(max_grade, sharpness)?;
        for (qid, docs) in qrels.iter() {
            for (pid, &g) in docs {
                table.insert(qid, pid, g)?;
            }
        }
        Ok(table)
    }

    /// Adds per-pair Gaussian grade noise with standard deviation `noise`.
    pub fn with_noise(mut self, noise: f64, seed: u64) -> Result<Self> {
        if !noise.is_finite() || noise < 0.0 {
            return Err(Error::contract(format!("noise must be finite and >= 0, got {noise}")));
        }
        self.noise = noise;
        self.seed = seed;
        Ok(self)
    }

    pub fn insert(&mut self, query_id: &str, passage_id: &str, grade: u32) -> Result<()> {
        if grade > self.max_grade {
            return Err(Error::contract(format!(
                "grade {grade} for ({query_id}, {passage_id}) exceeds declared maximum {}",
                self.max_grade
            )));
        }
        self.grades
            .entry(query_id.to_string())
            .or_default()
            .insert(passage_id.to_string(), grade);
        Ok(())
    }

    /// Hidden grade; unjudged pairs are grade 0.
    pub fn grade(&self, query_id: &str, passage_id: &str) -> u32 {
        self.grades
            .get(query_id)
            .and_then(|d| d.get(passage_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn sharpness(&self) -> f64 {
        self.sharpness
    }

    pub fn max_grade(&self) -> u32 {
        self.max_grade
    }

    /// Grade as the oracle perceives it, including noise.
    pub fn latent_grade(&self, query_id: &str, passage_id: &str) -> f64 {
        let g = self.grade(query_id, passage_id) as f64;
        if self.noise == 0.0 {
            return g;
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((query_id.len() as u64).to_le_bytes());
        h.update(query_id.as_bytes());
        h.update(passage_id.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let z: f64 = StandardNormal.sample(&mut ChaCha8Rng::from_seed(seed));
        g + self.noise * z
    }

    fn likert_logits(&self, query_id: &str, passage_id: &str, num_options: usize) -> Vec<f64> {
        let top = (num_options - 1) as f64;
        let peak = self.latent_grade(query_id, passage_id).clamp(0.0, top);
        (0..num_options)
            .map(|j| scaled(self.sharpness, -(j as f64 - peak).abs()))
            .collect()
    }

    fn identity(&self) -> String {
        format!(
            "oracle:sharpness={}:noise={}:seed={}",
            self.sharpness, self.noise, self.seed
        )
    }
}

/// `λ * x` with `0 * inf` taken as 0, so infinite sharpness gives hard limits.
fn scaled(lambda: f64, x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        lambda * x
    }
}

/// Likert distribution the oracle assigns to one pair.
pub fn oracle_distribution(
    table: &OracleRelevanceTable,
    scale: &ScoreScale,
    query_id: &str,
    passage_id: &str,
) -> ScoreDistribution {
    let logits = table.likert_logits(query_id, passage_id, scale.len());
    let probs = softmax(&logits).expect("the peak option always has logit 0");
    ScoreDistribution::from_probs(probs).expect("softmax output is a distribution")
}

/// [`ScoringBackend`] answering from an [`OracleRelevanceTable`].
#[derive(Debug, Clone)]
pub struct OracleBackend {
    table: OracleRelevanceTable,
}

impl OracleBackend {
    pub fn new(table: OracleRelevanceTable) -> Self {
        OracleBackend { table }
    }

    pub fn table(&self) -> &OracleRelevanceTable {
        &self.table
    }
}

impl ScoringBackend for OracleBackend {
    fn identity(&self) -> String {
        self.table.identity()
    }

    fn score_options(&self, req: &OptionsRequest<'_>) -> Result<Vec<f64>, BackendFailure> {
        let qid = req.query.id.as_str();
        let expect = |n: usize| {
            if req.passages.len() != n {
                return Err(BackendFailure::Protocol(format!(
                    "{:?} request with {} passages",
                    req.kind,
                    req.passages.len()
                )));
            }
            if req.kind != RequestKind::Likert && req.options.len() != 2 {
                return Err(BackendFailure::Protocol(format!(
                    "{:?} request needs two options, got {}",
                    req.kind,
                    req.options.len()
                )));
            }
            Ok(())
        };
        let t = &self.table;
        match req.kind {
            RequestKind::Likert => {
                expect(1)?;
                Ok(t.likert_logits(qid, &req.passages[0].id, req.options.len()))
            }
            RequestKind::Pairwise => {
                expect(2)?;
                let diff = t.latent_grade(qid, &req.passages[0].id)
                    - t.latent_grade(qid, &req.passages[1].id);
                Ok(vec![scaled(t.sharpness, diff), 0.0])
            }
            RequestKind::Binary => {
                expect(1)?;
                let c = t.latent_grade(qid, &req.passages[0].id).clamp(0.0, 1.0);
                Ok(vec![scaled(t.sharpness, 2.0 * c - 1.0), 0.0])
            }
        }
    }

    fn loglikelihood(&self, req: &LikelihoodRequest<'_>) -> Result<Likelihood, BackendFailure> {
        let top = self.table.max_grade.max(1) as f64;
        let g = self.table.latent_grade(&req.query.id, &req.passage.id).clamp(0.0, top);
        let num_tokens = req.continuation.split_whitespace().count().max(1) as u32;
        let per_token = -(1.0 + top - g);
        Ok(Likelihood {
            logprob: per_token * num_tokens as f64,
            num_tokens,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(grades: &[(&str, u32)], lambda: f64) -> OracleRelevanceTable {
        let mut t = OracleRelevanceTable::new(4, lambda).unwrap();
        for (pid, g) in grades {
            t.insert("q", pid, *g).unwrap();
        }
        t
    }

    #[test]
    fn infinite_sharpness_is_one_hot_at_grade() {
        let t = table(&[("d", 2)], f64::INFINITY);
        let d = oracle_distribution(&t, &ScoreScale::likert(), "q", "d");
        assert_eq!(d.probs(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn grade_above_scale_clamps_to_top_option() {
        let mut t = OracleRelevanceTable::new(9, f64::INFINITY).unwrap();
        t.insert("q", "d", 9).unwrap();
        let d = oracle_distribution(&t, &ScoreScale::likert(), "q", "d");
        assert_eq!(d.probs(), &[0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_sharpness_is_uniform() {
        let t = table(&[("d", 3)], 0.0);
        let d = oracle_distribution(&t, &ScoreScale::likert(), "q", "d");
        assert!(d.probs().iter().all(|p| (p - 0.2).abs() < 1e-12));
    }

    #[test]
    fn ln2_sharpness_halves_per_step() {
        let t = table(&[("d", 4)], std::f64::consts::LN_2);
        let d = oracle_distribution(&t, &ScoreScale::likert(), "q", "d");
        let w = [1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0, 1.0];
        let total: f64 = w.iter().sum();
        for (p, w) in d.probs().iter().zip(w) {
            assert!((p - w / total).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_pairs_are_grade_zero_and_grades_are_range_checked() {
        let mut t = table(&[], 1.0);
        assert_eq!(t.grade("q", "nope"), 0);
        assert!(t.insert("q", "d", 5).is_err());
        assert!(OracleRelevanceTable::new(4, -1.0).is_err());
        assert!(OracleRelevanceTable::new(4, f64::NAN).is_err());
    }

    #[test]
    fn noise_is_deterministic_per_pair() {
        let t = table(&[("a", 2), ("b", 2)], 1.0).with_noise(0.7, 11).unwrap();
        assert_eq!(t.latent_grade("q", "a"), t.latent_grade("q", "a"));
        assert_ne!(t.latent_grade("q", "a"), t.latent_grade("q", "b"));
        let other_seed = table(&[("a", 2)], 1.0).with_noise(0.7, 12).unwrap();
        assert_ne!(t.latent_grade("q", "a"), other_seed.latent_grade("q", "a"));
    }
}
