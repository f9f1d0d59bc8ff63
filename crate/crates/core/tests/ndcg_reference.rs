//! NDCG@10 over a 10-query fixture against values computed outside this
//! crate by brute force (ideal DCG as the best of all orderings of the
//! judged grades). Fixture and expected values live in data/.

use std::collections::BTreeMap;
use std::io::Write;

use rerank_core::dataio::{load_qrels, read_run, write_run};
use rerank_core::metrics::{evaluate_run, Gain, Qrels};
use rerank_core::Ranking;
use serde::Deserialize;

#[derive(Deserialize)]
struct Reference {
    k: usize,
    queries: Vec<RefQuery>,
    linear_mean: f64,
    exponential_mean: f64,
}

#[derive(Deserialize)]
struct RefQuery {
    qid: String,
    qrels: BTreeMap<String, u32>,
    ranking: Vec<String>,
    linear: f64,
    exponential: f64,
}

fn reference() -> Reference {
    serde_json::from_str(include_str!("data/ndcg_reference.json")).unwrap()
}

fn fixture(r: &Reference) -> (Vec<Ranking>, Qrels) {
    let mut qrels = Qrels::new();
    let mut run = Vec::new();
    for q in &r.queries {
        for (d, g) in &q.qrels {
            qrels.insert(&q.qid, d, *g);
        }
        let n = q.ranking.len();
        let scored = q.ranking.iter().enumerate().map(|(i, d)| (d.clone(), (n - i) as f64));
        run.push(Ranking::from_ordered(q.qid.clone(), scored, "t").unwrap());
    }
    (run, qrels)
}

fn check(r: &Reference, run: &[Ranking], qrels: &Qrels, gain: Gain) {
    let report = evaluate_run(run, qrels, r.k, gain).unwrap();
    assert_eq!(report.per_query.len(), r.queries.len());
    for q in &r.queries {
        let want = match gain {
            Gain::Linear => q.linear,
            Gain::Exponential => q.exponential,
        };
        let got = report.per_query[&q.qid];
        assert!((got - want).abs() < 1e-6, "{}: {got} vs {want}", q.qid);
    }
    let mean = match gain {
        Gain::Linear => r.linear_mean,
        Gain::Exponential => r.exponential_mean,
    };
    assert!((report.mean - mean).abs() < 1e-6);
}

#[test]
fn linear_gain_matches_reference() {
    let r = reference();
    let (run, qrels) = fixture(&r);
    check(&r, &run, &qrels, Gain::Linear);
}

#[test]
fn exponential_gain_matches_reference() {
    let r = reference();
    let (run, qrels) = fixture(&r);
    check(&r, &run, &qrels, Gain::Exponential);
}

#[test]
fn reference_holds_through_files() {
    let r = reference();
    let (run, _) = fixture(&r);
    let dir = tempfile::tempdir().unwrap();
    let run_path = dir.path().join("fixture.run");
    write_run(&run, "ref", &run_path).unwrap();
    let qrels_path = dir.path().join("fixture.qrels");
    let mut f = std::fs::File::create(&qrels_path).unwrap();
    for q in &r.queries {
        for (d, g) in &q.qrels {
            writeln!(f, "{} 0 {d} {g}", q.qid).unwrap();
        }
    }
    drop(f);
    let loaded = load_qrels(&qrels_path).unwrap();
    assert!(loaded.warnings.is_empty());
    check(&r, &read_run(&run_path).unwrap(), &loaded.qrels, Gain::Linear);
}
