//! Synthetic inputs shared by the benchmarks.

use rerank_core::{Passage, ScoreDistribution};

/// Deterministic pseudo-random passages over a small vocabulary.
pub fn synthetic_passages(n: usize, words_per_doc: usize) -> Vec<Passage> {
    let vocab: Vec<String> = (0..500).map(|i| format!("w{i}")).collect();
    let mut state = 0x2545_f491_4f6c_dd1du64;
    (0..n)
        .map(|d| {
            let text: Vec<&str> = (0..words_per_doc)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    vocab[(state % vocab.len() as u64) as usize].as_str()
                })
                .collect();
            Passage::new(format!("d{d}"), None, text.join(" ")).expect("valid passage")
        })
        .collect()
}

/// A peaked distribution over `m` options.
pub fn peaked_distribution(m: usize, peak: usize) -> ScoreDistribution {
    let raw: Vec<f64> = (0..m).map(|j| (-((j as f64) - peak as f64).abs()).exp()).collect();
    let total: f64 = raw.iter().sum();
    ScoreDistribution::from_probs(raw.iter().map(|p| p / total).collect()).expect("sums to one")
}
