use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use rerank_core::scorer::stub::{StubConfig, StubLikelihood, StubServer};

fn rerank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rerank"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("RERANK_BACKEND_URL")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

const CORPUS: &str = "\
{\"_id\":\"d1\",\"title\":\"Cats\",\"text\":\"cats purr when they are happy\"}
{\"_id\":\"d2\",\"text\":\"dogs bark at cats and cars\"}
{\"_id\":\"d3\",\"text\":\"songbirds sing in tall trees\"}
{\"_id\":\"d4\",\"text\":\"a cat and a bird sat in a tree\"}
";
const QUERIES: &str = "{\"_id\":\"q1\",\"text\":\"cats\"}\n{\"_id\":\"q2\",\"text\":\"birds in trees\"}\n";
const QRELS: &str = "q1 0 d1 2\nq1 0 d2 1\nq1 0 d4 3\nq2 0 d3 3\nq2 0 d4 1\n";

fn dataset() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "corpus.jsonl", CORPUS);
    write(dir.path(), "queries.jsonl", QUERIES);
    write(dir.path(), "qrels.txt", QRELS);
    dir
}

/// A first-stage run listing every passage for every query.
fn first_stage(dir: &Path) {
    write(
        dir,
        "first.run",
        "q1 Q0 d1 1 4.0 bm25\nq1 Q0 d2 2 3.0 bm25\nq1 Q0 d3 3 2.0 bm25\nq1 Q0 d4 4 1.0 bm25\n\
         q2 Q0 d1 1 4.0 bm25\nq2 Q0 d2 2 3.0 bm25\nq2 Q0 d3 3 2.0 bm25\nq2 Q0 d4 4 1.0 bm25\n",
    );
}

#[test]
fn index_two_documents() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.jsonl", "{\"_id\":\"a\",\"text\":\"one two\"}\n{\"_id\":\"b\",\"text\":\"two three four\"}\n");
    let o = rerank(dir.path(), &["index", "--corpus", "c.jsonl", "--index", "i.bin"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = stdout_json(&o);
    assert_eq!(summary["num_docs"], 2);
    assert_eq!(summary["avgdl"], 2.5);
    assert_eq!(summary["vocabulary_size"], 4);
    assert!(dir.path().join("i.bin").exists());
}

#[test]
fn index_missing_corpus_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = rerank(dir.path(), &["index", "--corpus", "nope.jsonl", "--index", "i.bin"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.jsonl"));
    assert!(!dir.path().join("i.bin").exists());
}

#[test]
fn index_duplicate_id_names_the_id() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.jsonl", "{\"_id\":\"dup7\",\"text\":\"x\"}\n{\"_id\":\"dup7\",\"text\":\"y\"}\n");
    let o = rerank(dir.path(), &["index", "--corpus", "c.jsonl", "--index", "i.bin"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dup7"));
    assert!(!dir.path().join("i.bin").exists());
}

#[test]
fn bad_flags_exit_two() {
    let dir = dataset();
    let o = rerank(dir.path(), &["index", "--corpus", "corpus.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    let o = rerank(dir.path(), &["eval", "--run", "x", "--qrels", "y", "--gain", "cubic"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn retrieve_writes_a_bm25_run() {
    let dir = dataset();
    assert!(rerank(dir.path(), &["index", "--corpus", "corpus.jsonl", "--index", "i.bin"]).status.success());
    let o = rerank(
        dir.path(),
        &["retrieve", "--index", "i.bin", "--queries", "queries.jsonl", "--run-out", "bm25.run"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let run = std::fs::read_to_string(dir.path().join("bm25.run")).unwrap();
    let q1: Vec<&str> = run.lines().filter(|l| l.starts_with("q1 ")).collect();
    // "cats" occurs in d1 (title and text) and d2.
    assert_eq!(q1.len(), 2);
    assert!(q1[0].starts_with("q1 Q0 d1 1 "));
    assert!(run.lines().all(|l| l.ends_with(" bm25")));
}

#[test]
fn retrieve_missing_index_and_bad_top_k() {
    let dir = dataset();
    let o = rerank(dir.path(), &["retrieve", "--index", "none.bin", "--queries", "queries.jsonl", "--run-out", "r"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("none.bin"));
    write(dir.path(), "junk.bin", "definitely not an index");
    let o = rerank(dir.path(), &["retrieve", "--index", "junk.bin", "--queries", "queries.jsonl", "--run-out", "r"]);
    assert_eq!(o.status.code(), Some(1));
    let o = rerank(
        dir.path(),
        &["retrieve", "--index", "junk.bin", "--queries", "queries.jsonl", "--run-out", "r", "--top-k", "0"],
    );
    assert_eq!(o.status.code(), Some(2));
}

/// Expected rating under the oracle at sharpness `lambda` for grade `g` on
/// the 1-5 scale, written out directly.
fn oracle_soft(g: f64, lambda: f64) -> f64 {
    let w: Vec<f64> = (0..5).map(|j| (-lambda * (j as f64 - g).abs()).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().enumerate().map(|(j, w)| (j + 1) as f64 * w / z).sum()
}

#[test]
fn pointwise_oracle_run_matches_golden() {
    let dir = dataset();
    first_stage(dir.path());
    let o = rerank(
        dir.path(),
        &[
            "rerank", "--corpus", "corpus.jsonl", "--queries", "queries.jsonl", "--run-in", "first.run",
            "--run-out", "out.run", "--backend", "oracle", "--oracle-qrels", "qrels.txt",
            "--oracle-sharpness", "2", "--method", "pointwise", "--mode", "soft",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let grades = |q: &str, d: &str| -> f64 {
        QRELS
            .lines()
            .map(|l| l.split_whitespace().collect::<Vec<_>>())
            .find(|f| f[0] == q && f[2] == d)
            .map_or(0.0, |f| f[3].parse().unwrap())
    };
    let mut golden = String::new();
    for q in ["q1", "q2"] {
        let mut scored: Vec<(usize, &str, f64)> = ["d1", "d2", "d3", "d4"]
            .iter()
            .enumerate()
            .map(|(i, d)| (i, *d, oracle_soft(grades(q, d), 2.0)))
            .collect();
        // Selection sort: highest score first, earlier input wins ties.
        for i in 0..scored.len() {
            let mut best = i;
            for j in i + 1..scored.len() {
                if scored[j].2 > scored[best].2 {
                    best = j;
                }
            }
            let item = scored.remove(best);
            scored.insert(i, item);
        }
        for (rank, (_, d, s)) in scored.iter().enumerate() {
            golden.push_str(&format!("{q} Q0 {d} {} {s:.6} pointwise-soft\n", rank + 1));
        }
    }
    assert_eq!(std::fs::read_to_string(dir.path().join("out.run")).unwrap(), golden);

    // Rerunning gives the same bytes.
    let again = rerank(
        dir.path(),
        &[
            "rerank", "--corpus", "corpus.jsonl", "--queries", "queries.jsonl", "--run-in", "first.run",
            "--run-out", "again.run", "--backend", "oracle", "--oracle-qrels", "qrels.txt",
            "--oracle-sharpness", "2",
        ],
    );
    assert!(again.status.success());
    assert_eq!(
        std::fs::read(dir.path().join("again.run")).unwrap(),
        std::fs::read(dir.path().join("out.run")).unwrap()
    );
}

#[test]
fn pairwise_depth_one_is_an_argument_error() {
    let dir = dataset();
    first_stage(dir.path());
    let o = rerank(
        dir.path(),
        &[
            "rerank", "--corpus", "corpus.jsonl", "--queries", "queries.jsonl", "--run-in", "first.run",
            "--run-out", "out.run", "--backend", "oracle", "--oracle-qrels", "qrels.txt",
            "--method", "pairwise", "--pairwise-depth", "1",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pairwise depth"));
    assert!(!dir.path().join("out.run").exists());
}

#[test]
fn unreachable_backend_exits_three_without_output() {
    let dir = dataset();
    first_stage(dir.path());
    let o = rerank(
        dir.path(),
        &[
            "rerank", "--corpus", "corpus.jsonl", "--queries", "queries.jsonl", "--run-in", "first.run",
            "--run-out", "out.run", "--backend-url", "http://127.0.0.1:9", "--timeout-secs", "2",
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!dir.path().join("out.run").exists());
}

#[test]
fn backend_url_falls_back_to_environment() {
    let dir = dataset();
    first_stage(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_rerank"))
        .current_dir(dir.path())
        .args(["rerank", "--corpus", "corpus.jsonl", "--queries", "queries.jsonl"])
        .args(["--run-in", "first.run", "--run-out", "out.run"])
        .env("RERANK_BACKEND_URL", "http://127.0.0.1:9")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("127.0.0.1:9"));
}

#[test]
fn upr_run_follows_stub_likelihoods() {
    let dir = dataset();
    first_stage(dir.path());
    let entry = |contains: &str, logprob: f64| StubLikelihood {
        contains: contains.into(),
        logprob,
        num_tokens: 2,
    };
    let config = StubConfig {
        likelihoods: vec![
            entry("purr", -6.0),
            entry("bark", -1.0),
            entry("songbirds", -3.0),
            entry("sat in a tree", -0.5),
        ],
        ..Default::default()
    };
    let server = StubServer::start(config, "127.0.0.1:0").unwrap();
    let o = rerank(
        dir.path(),
        &[
            "rerank", "--corpus", "corpus.jsonl", "--queries", "queries.jsonl", "--run-in", "first.run",
            "--run-out", "upr.run", "--backend-url", &server.url(), "--mode", "upr", "--parallel", "3",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let run = std::fs::read_to_string(dir.path().join("upr.run")).unwrap();
    let q1: Vec<String> = run
        .lines()
        .filter(|l| l.starts_with("q1 "))
        .map(|l| l.split_whitespace().nth(2).unwrap().to_string())
        .collect();
    assert_eq!(q1, vec!["d4", "d2", "d3", "d1"]);
    assert!(run.contains("q1 Q0 d4 1 -0.250000 pointwise-upr"));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = dataset();
    first_stage(dir.path());
    write(
        dir.path(),
        "rerank.toml",
        "corpus = \"corpus.jsonl\"\nqueries = \"queries.jsonl\"\nrun_in = \"first.run\"\nrun_out = \"cfg.run\"\n\
         backend = \"oracle\"\noracle_qrels = \"qrels.txt\"\nmethod = \"pairwise\"\npairwise_depth = 1\n",
    );
    // Depth 1 from the file is invalid.
    let o = rerank(dir.path(), &["rerank", "--config", "rerank.toml"]);
    assert_eq!(o.status.code(), Some(2));
    // The flag fixes it; the echoed config shows the merged values.
    let o = rerank(dir.path(), &["rerank", "--config", "rerank.toml", "--pairwise-depth", "3", "--tag", "mine"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echo: serde_json::Value = serde_json::from_str(stderr(&o).lines().next().unwrap()).unwrap();
    assert_eq!(echo["rerank"]["method"], "pairwise");
    assert_eq!(echo["rerank"]["pairwise_depth"], 3);
    assert_eq!(echo["backend"], "oracle");
    let run = std::fs::read_to_string(dir.path().join("cfg.run")).unwrap();
    assert_eq!(run.lines().count(), 8);
    assert!(run.lines().all(|l| l.ends_with(" mine")));

    write(dir.path(), "typo.toml", "pairwise_dept = 3\n");
    let o = rerank(dir.path(), &["rerank", "--config", "typo.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_perfect_and_hand_computed_runs() {
    let dir = dataset();
    write(dir.path(), "perfect.run", "q1 Q0 d4 1 3 t\nq1 Q0 d1 2 2 t\nq1 Q0 d2 3 1 t\nq2 Q0 d3 1 2 t\nq2 Q0 d4 2 1 t\n");
    let o = rerank(dir.path(), &["eval", "--run", "perfect.run", "--qrels", "qrels.txt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = stdout_json(&o);
    assert_eq!(summary["metric"], "ndcg_cut_10");
    assert_eq!(summary["mean"], 1.0);

    // q1 ranks d2 (1), d1 (2), d4 (3): DCG = 1 + 2/log2(3) + 3/2;
    // ideal = 3 + 2/log2(3) + 1/2. q2 ranks d4 (1), d3 (3): DCG = 1 + 3/log2(3);
    // ideal = 3 + 1/log2(3).
    write(dir.path(), "worse.run", "q1 Q0 d2 1 3 t\nq1 Q0 d1 2 2 t\nq1 Q0 d4 3 1 t\nq2 Q0 d4 1 2 t\nq2 Q0 d3 2 1 t\n");
    let o = rerank(dir.path(), &["eval", "--run", "worse.run", "--qrels", "qrels.txt", "--k", "10"]);
    assert!(o.status.success());
    let l3 = 3f64.log2();
    let q1 = (1.0 + 2.0 / l3 + 1.5) / (3.0 + 2.0 / l3 + 0.5);
    let q2 = (1.0 + 3.0 / l3) / (3.0 + 1.0 / l3);
    let summary = stdout_json(&o);
    assert!((summary["per_query"]["q1"].as_f64().unwrap() - q1).abs() < 1e-6);
    assert!((summary["per_query"]["q2"].as_f64().unwrap() - q2).abs() < 1e-6);
    assert!((summary["mean"].as_f64().unwrap() - (q1 + q2) / 2.0).abs() < 1e-6);
    assert!(stderr(&o).contains("ndcg_cut_10\tall"));
}

#[test]
fn eval_missing_qrels_exits_one() {
    let dir = dataset();
    write(dir.path(), "r.run", "q1 Q0 d1 1 1 t\n");
    let o = rerank(dir.path(), &["eval", "--run", "r.run", "--qrels", "missing.qrels"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.qrels"));
}

#[test]
fn experiment_runs_end_to_end() {
    let dir = dataset();
    let o = rerank(
        dir.path(),
        &[
            "experiment", "--corpus", "corpus.jsonl", "--queries", "queries.jsonl", "--qrels", "qrels.txt",
            "--backend", "oracle", "--oracle-qrels", "qrels.txt", "--method", "pipeline", "--pairwise-depth", "2",
            "--bm25-run", "bm25.run", "--run-out", "final.run", "--index", "i.bin",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report = stdout_json(&o);
    assert_eq!(report["index"]["num_docs"], 4);
    // Reranking can only reorder what BM25 found, so it is compared to the
    // first stage rather than to 1.
    let (first, second) = (report["bm25"]["mean"].as_f64().unwrap(), report["rerank"]["mean"].as_f64().unwrap());
    assert!(second >= first && second <= 1.0, "bm25 {first}, rerank {second}");
    for f in ["bm25.run", "final.run", "i.bin"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn serve_stub_answers_requests() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "stub.json", "{\"default_logprobs\": {\"yes\": -0.2, \"no\": -1.7}}");
    let mut child = Command::new(env!("CARGO_BIN_EXE_rerank"))
        .current_dir(dir.path())
        .args(["serve-stub", "--config", "stub.json", "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut url = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut url).unwrap();
    let body: serde_json::Value = ureq_post(url.trim(), r#"{"prompt":"p","options":["yes","no"]}"#);
    child.kill().unwrap();
    let _ = child.wait();
    assert_eq!(body["logprobs"]["yes"], -0.2);
    assert_eq!(body["logprobs"]["no"], -1.7);
}

/// Minimal HTTP/1.1 POST so the test needs no client dependency.
fn ureq_post(base: &str, json: &str) -> serde_json::Value {
    use std::io::{Read, Write};
    let addr = base.trim_start_matches("http://");
    let mut s = std::net::TcpStream::connect(addr).unwrap();
    write!(
        s,
        "POST /v1/score_options HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{json}",
        json.len()
    )
    .unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    let body = resp.split("\r\n\r\n").nth(1).unwrap();
    serde_json::from_str(body).unwrap()
}
