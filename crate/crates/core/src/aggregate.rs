//! Score aggregation: expected Likert rating, argmax rating, and pairwise
//! win-probability sums.

use crate::error::{Error, Result};
use crate::types::{ScoreDistribution, ScoreScale};

fn check_aligned(dist: &ScoreDistribution, scale: &ScoreScale) -> Result<()> {
    if dist.len() != scale.len() {
        return Err(Error::contract(format!(
            "distribution has {} entries but scale has {} options",
            dist.len(),
            scale.len()
        )));
    }
    Ok(())
}

/// Expected option value under `dist`: `sum_n value(n) * p(n)`.
pub fn soft_score(dist: &ScoreDistribution, scale: &ScoreScale) -> Result<f64> {
    check_aligned(dist, scale)?;
    let s: f64 = dist
        .probs()
        .iter()
        .zip(scale.options())
        .map(|(p, &v)| p * v as f64)
        .sum();
    // Rounding can push a one-hot expectation a ulp outside the range.
    Ok(s.clamp(scale.min_value() as f64, scale.max_value() as f64))
}

/// Most probable option value. Ties go to the lower value.
pub fn hard_score(dist: &ScoreDistribution, scale: &ScoreScale) -> Result<i64> {
    check_aligned(dist, scale)?;
    let mut best = 0;
    for (i, &p) in dist.probs().iter().enumerate().skip(1) {
        if p > dist.probs()[best] {
            best = i;
        }
    }
    Ok(scale.options()[best])
}

/// Win probabilities for every ordered pair of `k` candidates.
///
/// Entry `(i, j)` is the probability that candidate `i` is chosen when it is
/// shown first and `j` second. `(i, j)` and `(j, i)` are separate
/// observations; nothing ties them together.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMatrix {
    k: usize,
    entries: Vec<Option<f64>>,
}

impl PairwiseMatrix {
    /// An empty `k`x`k` matrix waiting for its `k^2 - k` entries.
    pub fn new(k: usize) -> Self {
        PairwiseMatrix {
            k,
            entries: vec![None; k * k],
        }
    }

    /// Fills every ordered pair from `f(i, j)`.
    pub fn from_fn(k: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut m = Self::new(k);
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    m.set(i, j, f(i, j))?;
                }
            }
        }
        Ok(m)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn set(&mut self, i: usize, j: usize, p: f64) -> Result<()> {
        if i >= self.k || j >= self.k || i == j {
            return Err(Error::contract(format!(
                "pair ({i}, {j}) is not an ordered pair of distinct candidates in 0..{}",
                self.k
            )));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::contract(format!(
                "pair ({i}, {j}) probability {p} outside [0, 1]"
            )));
        }
        self.entries[i * self.k + j] = Some(p);
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i >= self.k || j >= self.k {
            return None;
        }
        self.entries[i * self.k + j]
    }

    fn entry(&self, i: usize, j: usize) -> Result<f64> {
        self.get(i, j)
            .ok_or_else(|| Error::contract(format!("missing ordered pair ({i}, {j})")))
    }
}

/// Per-candidate tournament score.
///
/// Candidate `i` collects, from every ordered pair it takes part in, the
/// probability that it was the one selected: `entry(i, j)` when shown first
/// and `1 - entry(j, i)` when shown second. The scores sum to `k^2 - k` and
/// each lies in `[0, 2(k - 1)]`.
pub fn pairwise_scores(matrix: &PairwiseMatrix) -> Result<Vec<f64>> {
    let k = matrix.k();
    let mut s2 = vec![0.0; k];
    for (i, total) in s2.iter_mut().enumerate() {
        for j in (0..k).filter(|&j| j != i) {
            *total += matrix.entry(i, j)? + (1.0 - matrix.entry(j, i)?);
        }
    }
    Ok(s2)
}
