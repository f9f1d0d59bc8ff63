//! NDCG@k with trec_eval conventions.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Ranking;

/// Graded relevance judgments: query id -> passage id -> grade.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: HashMap<String, HashMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a grade and returns the grade it replaced, if any.
    pub fn insert(&mut self, query_id: &str, passage_id: &str, grade: u32) -> Option<u32> {
        self.judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(passage_id.to_string(), grade)
    }

    pub fn for_query(&self, query_id: &str) -> Option<&HashMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn grade(&self, query_id: &str, passage_id: &str) -> Option<u32> {
        self.judgments.get(query_id)?.get(passage_id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &HashMap<String, u32>)> {
        self.judgments.iter().map(|(q, d)| (q.as_str(), d))
    }

    pub fn num_queries(&self) -> usize {
        self.judgments.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    /// `g(rel) = rel`, as trec_eval's ndcg_cut.
    #[default]
    Linear,
    /// `g(rel) = 2^rel - 1`.
    Exponential,
}

impl Gain {
    fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => (2f64).powi(grade as i32) - 1.0,
        }
    }
}

impl std::str::FromStr for Gain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Gain::Linear),
            "exponential" | "exp" => Ok(Gain::Exponential),
            other => Err(format!("unknown gain {other:?}, expected linear or exponential")),
        }
    }
}

fn discount(position: usize) -> f64 {
    // position is 1-based
    ((position + 1) as f64).log2()
}

/// NDCG@k of one ranking. `None` when the query has no passage with a
/// positive grade, in which case it does not count towards a mean.
pub fn ndcg_at_k(
    ranking: &Ranking,
    judgments: Option<&HashMap<String, u32>>,
    k: usize,
    gain: Gain,
) -> Result<Option<f64>> {
    if k == 0 {
        return Err(Error::contract("NDCG cutoff k must be positive"));
    }
    let Some(judgments) = judgments else {
        return Ok(None);
    };
    let mut ideal: Vec<u32> = judgments.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() {
        return Ok(None);
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain.apply(g) / discount(i + 1))
        .sum();
    let dcg: f64 = ranking
        .items
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, item)| {
            let g = judgments.get(&item.passage_id).copied().unwrap_or(0);
            gain.apply(g) / discount(i + 1)
        })
        .sum();
    Ok(Some(dcg / idcg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric: String,
    pub per_query: BTreeMap<String, f64>,
    /// Queries left out of the mean: unjudged or without relevant passages.
    pub skipped: Vec<String>,
    pub mean: f64,
}

/// Machine-readable summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub metric: String,
    pub mean: f64,
    pub per_query: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn num_queries_evaluated(&self) -> usize {
        self.per_query.len()
    }

    pub fn summary(&self) -> EvalSummary {
        EvalSummary {
            metric: self.metric.clone(),
            mean: self.mean,
            per_query: self.per_query.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.summary()).expect("summary serializes")
    }

    /// trec_eval-style text: `metric<TAB>qid<TAB>value` lines, then `all`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (qid, v) in &self.per_query {
            let _ = writeln!(out, "{}\t{}\t{:.4}", self.metric, qid, v);
        }
        let _ = writeln!(out, "{}\tall\t{:.4}", self.metric, self.mean);
        let _ = writeln!(out, "num_q\tall\t{}", self.per_query.len());
        for qid in &self.skipped {
            let _ = writeln!(out, "skipped\t{qid}\tno relevant judgments");
        }
        out
    }
}

/// Mean NDCG@k over every query in `run` that has relevant judgments.
pub fn evaluate_run(run: &[Ranking], qrels: &Qrels, k: usize, gain: Gain) -> Result<EvalReport> {
    let mut seen = HashSet::with_capacity(run.len());
    for r in run {
        if !seen.insert(r.query_id.as_str()) {
            return Err(Error::contract(format!("query {} appears twice in the run", r.query_id)));
        }
    }
    let mut per_query = BTreeMap::new();
    let mut skipped = Vec::new();
    for r in run {
        match ndcg_at_k(r, qrels.for_query(&r.query_id), k, gain)? {
            Some(v) => {
                per_query.insert(r.query_id.clone(), v);
            }
            None => skipped.push(r.query_id.clone()),
        }
    }
    skipped.sort();
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.values().sum::<f64>() / per_query.len() as f64
    };
    Ok(EvalReport {
        metric: format!("ndcg_cut_{k}"),
        per_query,
        skipped,
        mean,
    })
}
