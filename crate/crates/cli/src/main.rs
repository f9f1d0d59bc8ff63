//! `rerank`: BM25 indexing and retrieval, LLM reranking and NDCG evaluation.
//!
//! Exit codes: 0 success, 1 I/O or data error, 2 argument or config error,
//! 3 backend error.

mod settings;

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rerank_core::bm25::{build_index, Analyzer, Bm25Params, InvertedIndex};
use rerank_core::dataio::{load_corpus, load_qrels, load_queries, read_run, write_run};
use rerank_core::metrics::{evaluate_run, EvalSummary, Gain};
use rerank_core::rerank::{Method, PointwiseMode, RerankConfig, Reranker};
use rerank_core::scorer::stub::{StubConfig, StubServer};
use rerank_core::scorer::{
    HttpBackend, OracleBackend, OracleRelevanceTable, PromptTemplate, ScoreCache, Scorer, ScoringBackend,
    TemplateKind, Templates, DEFAULT_MAX_PASSAGE_CHARS,
};
use rerank_core::{Passage, Query, Ranking};
use serde::Serialize;

use settings::{
    arg_err, core_err, data_err, required, BackendKind, CliResult, Failure, FileSettings, TemplatePaths,
};

#[derive(Parser)]
#[command(name = "rerank", version, about = "Passage reranking with LLM option-token distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a JSONL corpus.
    Index(IndexArgs),
    /// Retrieve top-k passages per query into a TREC run.
    Retrieve(RetrieveArgs),
    /// Rerank a TREC run with an LLM backend.
    Rerank(RerankArgs),
    /// NDCG@k of a run against qrels.
    Eval(EvalArgs),
    /// Index, retrieve, rerank and evaluate in one go.
    Experiment(ExperimentArgs),
    /// Serve canned scoring answers over HTTP, for testing clients.
    ServeStub(ServeStubArgs),
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[command(flatten)]
    analysis: AnalysisArgs,
}

#[derive(Args, Default)]
struct AnalysisArgs {
    /// Apply Snowball English stemming.
    #[arg(long)]
    stem: bool,
    /// Drop English stopwords.
    #[arg(long)]
    stopwords: bool,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    #[arg(long)]
    run_out: PathBuf,
    #[arg(long, default_value = "bm25")]
    tag: String,
    #[command(flatten)]
    bm25: Bm25Args,
}

#[derive(Args, Default)]
struct Bm25Args {
    /// [default: 0.9]
    #[arg(long)]
    k1: Option<f64>,
    /// [default: 0.4]
    #[arg(long)]
    b: Option<f64>,
}

#[derive(Args, Default)]
struct RerankArgs {
    /// TOML file with any of the settings below; flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    run_in: Option<PathBuf>,
    #[arg(long)]
    run_out: Option<PathBuf>,
    /// Run tag [default: the method, e.g. pointwise-soft]
    #[arg(long)]
    tag: Option<String>,
    #[command(flatten)]
    scoring: ScoringArgs,
}

#[derive(Args, Default)]
struct ScoringArgs {
    /// pointwise, pairwise or pipeline [default: pointwise]
    #[arg(long)]
    method: Option<Method>,
    /// soft, hard, binary or upr [default: soft]
    #[arg(long)]
    mode: Option<PointwiseMode>,
    /// Candidates compared pairwise [default: 40]
    #[arg(long)]
    pairwise_depth: Option<usize>,
    /// Candidates read from the input run [default: 100]
    #[arg(long)]
    candidate_depth: Option<usize>,
    /// [default: http]
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long, env = "RERANK_BACKEND_URL")]
    backend_url: Option<String>,
    /// Per-request timeout in seconds [default: 60]
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Hidden grades for the oracle backend.
    #[arg(long)]
    oracle_qrels: Option<PathBuf>,
    /// [default: 10]
    #[arg(long)]
    oracle_sharpness: Option<f64>,
    /// Gaussian noise on oracle grades [default: 0]
    #[arg(long)]
    oracle_noise: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    oracle_seed: Option<u64>,
    /// Concurrent backend requests [default: 1]
    #[arg(long)]
    parallel: Option<usize>,
    /// Append-only score cache file.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Prompt template override as KIND=PATH; repeatable.
    #[arg(long = "template", value_parser = TemplatePaths::parse_flag)]
    templates: Vec<(String, PathBuf)>,
    /// Passage budget in characters [default: 2000]
    #[arg(long)]
    max_passage_chars: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value = "linear")]
    gain: Gain,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Also save the index here.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Also write the BM25 run here.
    #[arg(long)]
    bm25_run: Option<PathBuf>,
    /// Also write the reranked run here.
    #[arg(long)]
    run_out: Option<PathBuf>,
    #[arg(long)]
    tag: Option<String>,
    /// [default: 100]
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    stem: bool,
    #[arg(long)]
    stopwords: bool,
    #[command(flatten)]
    bm25: Bm25Args,
    /// [default: 10]
    #[arg(long)]
    k: Option<usize>,
    /// [default: linear]
    #[arg(long)]
    gain: Option<Gain>,
    #[command(flatten)]
    scoring: ScoringArgs,
}

#[derive(Args)]
struct ServeStubArgs {
    /// JSON or TOML stub configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8089")]
    addr: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Index(a) => cmd_index(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Rerank(a) => cmd_rerank(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::ServeStub(a) => cmd_serve_stub(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

#[derive(Serialize)]
struct IndexSummary {
    num_docs: usize,
    avgdl: f64,
    vocabulary_size: usize,
}

fn index_summary(index: &InvertedIndex) -> IndexSummary {
    IndexSummary {
        num_docs: index.num_docs(),
        avgdl: index.avgdl(),
        vocabulary_size: index.vocabulary_size(),
    }
}

fn cmd_index(a: IndexArgs) -> CliResult<()> {
    let analyzer = Analyzer { stem: a.analysis.stem, stopwords: a.analysis.stopwords };
    let corpus = load_corpus(&a.corpus).map_err(data_err)?;
    let index = build_index(corpus, analyzer).map_err(core_err)?;
    index.save(&a.index).map_err(data_err)?;
    println!("{}", serde_json::to_string(&index_summary(&index)).expect("serializable"));
    Ok(())
}

fn bm25_params(args: &Bm25Args, file: &FileSettings) -> CliResult<Bm25Params> {
    let d = Bm25Params::default();
    Bm25Params::new(
        args.k1.or(file.k1).unwrap_or(d.k1),
        args.b.or(file.b).unwrap_or(d.b),
    )
    .map_err(arg_err)
}

fn retrieve_all(
    index: &InvertedIndex,
    params: &Bm25Params,
    queries: &[Query],
    top_k: usize,
    tag: &str,
) -> CliResult<Vec<Ranking>> {
    let mut run = Vec::with_capacity(queries.len());
    for q in queries {
        let hits = index.search(params, q, top_k).map_err(core_err)?;
        if hits.is_empty() {
            log::warn!("query {}: no passage matches, left out of the run", q.id);
            continue;
        }
        let ranking = Ranking::from_ordered(
            q.id.clone(),
            hits.into_iter().map(|c| (c.passage_id, c.first_stage_score)),
            tag,
        )
        .map_err(core_err)?;
        run.push(ranking);
    }
    Ok(run)
}

fn cmd_retrieve(a: RetrieveArgs) -> CliResult<()> {
    if a.top_k == 0 {
        return Err(arg_err("--top-k must be at least 1"));
    }
    let params = bm25_params(&a.bm25, &FileSettings::default())?;
    let index = InvertedIndex::load(&a.index).map_err(data_err)?;
    let queries = load_queries(&a.queries).map_err(data_err)?;
    let run = retrieve_all(&index, &params, &queries, a.top_k, &a.tag)?;
    write_run(&run, &a.tag, &a.run_out).map_err(data_err)
}

/// Reranking settings after merging flags, config file and defaults.
#[derive(Debug, Serialize)]
struct ScoringSettings {
    rerank: RerankConfig,
    backend: BackendKind,
    backend_url: Option<String>,
    timeout_secs: u64,
    oracle_qrels: Option<PathBuf>,
    oracle_sharpness: f64,
    oracle_noise: f64,
    oracle_seed: u64,
    parallel: usize,
    cache: Option<PathBuf>,
    templates: TemplatePaths,
    max_passage_chars: usize,
}

impl ScoringSettings {
    fn merge(a: ScoringArgs, f: &FileSettings) -> CliResult<Self> {
        let d = RerankConfig::default();
        let rerank = RerankConfig {
            method: a.method.or(f.method).unwrap_or(d.method),
            pointwise_mode: a.mode.or(f.mode).unwrap_or(d.pointwise_mode),
            pairwise_depth: a.pairwise_depth.or(f.pairwise_depth).unwrap_or(d.pairwise_depth),
            candidate_depth: a.candidate_depth.or(f.candidate_depth).unwrap_or(d.candidate_depth),
        };
        rerank.validate().map_err(arg_err)?;
        let mut flag_templates = TemplatePaths::default();
        for (kind, path) in a.templates {
            flag_templates.set(&kind, path);
        }
        let s = ScoringSettings {
            rerank,
            backend: a.backend.or(f.backend).unwrap_or(BackendKind::Http),
            backend_url: a.backend_url.or_else(|| f.backend_url.clone()),
            timeout_secs: a.timeout_secs.or(f.timeout_secs).unwrap_or(60),
            oracle_qrels: a.oracle_qrels.or_else(|| f.oracle_qrels.clone()),
            oracle_sharpness: a.oracle_sharpness.or(f.oracle_sharpness).unwrap_or(10.0),
            oracle_noise: a.oracle_noise.or(f.oracle_noise).unwrap_or(0.0),
            oracle_seed: a.oracle_seed.or(f.oracle_seed).unwrap_or(0),
            parallel: a.parallel.or(f.parallel).unwrap_or(1),
            cache: a.cache.or_else(|| f.cache.clone()),
            templates: f.templates.clone().unwrap_or_default().overlay(flag_templates),
            max_passage_chars: a
                .max_passage_chars
                .or(f.max_passage_chars)
                .unwrap_or(DEFAULT_MAX_PASSAGE_CHARS),
        };
        if s.parallel == 0 {
            return Err(arg_err("--parallel must be at least 1"));
        }
        match s.backend {
            BackendKind::Http if s.backend_url.is_none() => {
                Err(arg_err("the http backend needs --backend-url or RERANK_BACKEND_URL"))
            }
            BackendKind::Oracle if s.oracle_qrels.is_none() => Err(arg_err("the oracle backend needs --oracle-qrels")),
            _ => Ok(s),
        }
    }

    fn backend(&self) -> CliResult<Arc<dyn ScoringBackend>> {
        match self.backend {
            BackendKind::Http => {
                let url = self.backend_url.clone().expect("checked in merge");
                Ok(Arc::new(HttpBackend::new(url, Duration::from_secs(self.timeout_secs))))
            }
            BackendKind::Oracle => {
                let path = self.oracle_qrels.as_ref().expect("checked in merge");
                let loaded = load_qrels(path).map_err(data_err)?;
                for w in &loaded.warnings {
                    log::warn!("{w}");
                }
                let mut table = OracleRelevanceTable::from_qrels(&loaded.qrels, self.oracle_sharpness).map_err(arg_err)?;
                if self.oracle_noise > 0.0 {
                    table = table.with_noise(self.oracle_noise, self.oracle_seed).map_err(arg_err)?;
                }
                Ok(Arc::new(OracleBackend::new(table)))
            }
        }
    }

    fn templates(&self) -> CliResult<Templates> {
        let load = |path: &Option<PathBuf>, kind: TemplateKind| -> CliResult<PromptTemplate> {
            let t = match path {
                Some(p) => PromptTemplate::from_file(p, kind, self.max_passage_chars),
                None => PromptTemplate::new(
                    PromptTemplate::default_for(kind).name(),
                    PromptTemplate::default_for(kind).body(),
                    kind,
                    self.max_passage_chars,
                ),
            };
            t.map_err(|e| core_err(e.into()))
        };
        Ok(Templates {
            pointwise: load(&self.templates.pointwise, TemplateKind::Pointwise)?,
            pairwise: load(&self.templates.pairwise, TemplateKind::Pairwise)?,
            binary: load(&self.templates.binary, TemplateKind::Binary)?,
            upr: load(&self.templates.upr, TemplateKind::Upr)?,
        })
    }

    fn scorer(&self) -> CliResult<Scorer> {
        let mut builder = Scorer::builder(self.backend()?)
            .templates(self.templates()?)
            .max_parallel(self.parallel);
        if let Some(path) = &self.cache {
            builder = builder.cache(Arc::new(ScoreCache::open(path).map_err(data_err)?));
        }
        builder.build().map_err(|e| match e {
            rerank_core::Error::Contract(m) => arg_err(m),
            e => core_err(e),
        })
    }
}

fn echo_config(config: &impl Serialize) {
    eprintln!("{}", serde_json::to_string(config).expect("serializable"));
}

/// Streams the corpus and keeps only passages named in `wanted`.
fn load_passages(path: &Path, wanted: &HashSet<&str>) -> CliResult<HashMap<String, Passage>> {
    let mut out = HashMap::with_capacity(wanted.len());
    for p in load_corpus(path).map_err(data_err)? {
        let p = p.map_err(data_err)?;
        if wanted.contains(p.id.as_str()) {
            out.insert(p.id.clone(), p);
        }
    }
    Ok(out)
}

fn rerank_all(
    scorer: &Scorer,
    config: RerankConfig,
    queries: &[Query],
    run: &[Ranking],
    passages: &HashMap<String, Passage>,
) -> CliResult<Vec<Ranking>> {
    let reranker = Reranker::new(scorer, config).map_err(arg_err)?;
    let by_id: HashMap<&str, &Query> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut out = Vec::with_capacity(run.len());
    for ranking in run {
        let query = by_id
            .get(ranking.query_id.as_str())
            .ok_or_else(|| data_err(format!("query {} is in the run but not in the queries file", ranking.query_id)))?;
        let done = reranker
            .rerank(query, &ranking.to_candidates(), passages)
            .map_err(core_err)?;
        let c = done.calls;
        log::info!(
            "query {}: {} likert, {} binary, {} likelihood, {} pairwise calls",
            query.id,
            c.likert,
            c.binary,
            c.likelihood,
            c.pairwise
        );
        out.push(done.ranking);
    }
    Ok(out)
}

#[derive(Serialize)]
struct RerankEcho<'a> {
    corpus: &'a Path,
    queries: &'a Path,
    run_in: &'a Path,
    run_out: &'a Path,
    tag: &'a str,
    #[serde(flatten)]
    scoring: &'a ScoringSettings,
}

fn cmd_rerank(a: RerankArgs) -> CliResult<()> {
    let file = FileSettings::load(a.config.as_deref())?;
    let corpus = required(a.corpus.or_else(|| file.corpus.clone()), "corpus")?;
    let queries_path = required(a.queries.or_else(|| file.queries.clone()), "queries")?;
    let run_in = required(a.run_in.or_else(|| file.run_in.clone()), "run-in")?;
    let run_out = required(a.run_out.or_else(|| file.run_out.clone()), "run-out")?;
    let scoring = ScoringSettings::merge(a.scoring, &file)?;
    let tag = a.tag.or_else(|| file.tag.clone()).unwrap_or_else(|| scoring.rerank.method_tag());
    echo_config(&RerankEcho {
        corpus: &corpus,
        queries: &queries_path,
        run_in: &run_in,
        run_out: &run_out,
        tag: &tag,
        scoring: &scoring,
    });

    let scorer = scoring.scorer()?;
    let run = read_run(&run_in).map_err(data_err)?;
    let queries = load_queries(&queries_path).map_err(data_err)?;
    let wanted: HashSet<&str> = run.iter().flat_map(|r| r.passage_ids()).collect();
    let passages = load_passages(&corpus, &wanted)?;
    let reranked = rerank_all(&scorer, scoring.rerank, &queries, &run, &passages)?;
    write_run(&reranked, &tag, &run_out).map_err(data_err)
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    if a.k == 0 {
        return Err(arg_err("--k must be at least 1"));
    }
    let run = read_run(&a.run).map_err(data_err)?;
    let loaded = load_qrels(&a.qrels).map_err(data_err)?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    let report = evaluate_run(&run, &loaded.qrels, a.k, a.gain).map_err(core_err)?;
    eprint!("{}", report.to_text());
    println!("{}", report.to_json());
    Ok(())
}

#[derive(Serialize)]
struct ExperimentEcho<'a> {
    corpus: &'a Path,
    queries: &'a Path,
    qrels: &'a Path,
    index: Option<&'a Path>,
    bm25_run: Option<&'a Path>,
    run_out: Option<&'a Path>,
    tag: &'a str,
    top_k: usize,
    analyzer: Analyzer,
    bm25: Bm25Params,
    k: usize,
    gain: Gain,
    #[serde(flatten)]
    scoring: &'a ScoringSettings,
}

#[derive(Serialize)]
struct ExperimentReport {
    index: IndexSummary,
    bm25: EvalSummary,
    rerank: EvalSummary,
}

fn cmd_experiment(a: ExperimentArgs) -> CliResult<()> {
    let file = FileSettings::load(a.config.as_deref())?;
    let corpus = required(a.corpus.or_else(|| file.corpus.clone()), "corpus")?;
    let queries_path = required(a.queries.or_else(|| file.queries.clone()), "queries")?;
    let qrels_path = required(a.qrels.or_else(|| file.qrels.clone()), "qrels")?;
    let index_path = a.index.or_else(|| file.index.clone());
    let bm25_run = a.bm25_run.or_else(|| file.bm25_run.clone());
    let run_out = a.run_out.or_else(|| file.run_out.clone());
    let top_k = a.top_k.or(file.top_k).unwrap_or(100);
    let k = a.k.or(file.k).unwrap_or(10);
    let gain = a.gain.or(file.gain).unwrap_or_default();
    let analyzer = Analyzer {
        stem: a.stem || file.stem.unwrap_or(false),
        stopwords: a.stopwords || file.stopwords.unwrap_or(false),
    };
    let bm25 = bm25_params(&a.bm25, &file)?;
    let scoring = ScoringSettings::merge(a.scoring, &file)?;
    let tag = a.tag.or_else(|| file.tag.clone()).unwrap_or_else(|| scoring.rerank.method_tag());
    if top_k == 0 || k == 0 {
        return Err(arg_err("--top-k and --k must be at least 1"));
    }
    echo_config(&ExperimentEcho {
        corpus: &corpus,
        queries: &queries_path,
        qrels: &qrels_path,
        index: index_path.as_deref(),
        bm25_run: bm25_run.as_deref(),
        run_out: run_out.as_deref(),
        tag: &tag,
        top_k,
        analyzer,
        bm25,
        k,
        gain,
        scoring: &scoring,
    });

    let scorer = scoring.scorer()?;
    let queries = load_queries(&queries_path).map_err(data_err)?;
    let loaded = load_qrels(&qrels_path).map_err(data_err)?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    let index = build_index(load_corpus(&corpus).map_err(data_err)?, analyzer).map_err(core_err)?;
    let first = retrieve_all(&index, &bm25, &queries, top_k, "bm25")?;
    let wanted: HashSet<&str> = first.iter().flat_map(|r| r.passage_ids()).collect();
    let passages = load_passages(&corpus, &wanted)?;
    let reranked = rerank_all(&scorer, scoring.rerank, &queries, &first, &passages)?;

    let bm25_eval = evaluate_run(&first, &loaded.qrels, k, gain).map_err(core_err)?;
    let rerank_eval = evaluate_run(&reranked, &loaded.qrels, k, gain).map_err(core_err)?;
    if let Some(p) = &index_path {
        index.save(p).map_err(data_err)?;
    }
    if let Some(p) = &bm25_run {
        write_run(&first, "bm25", p).map_err(data_err)?;
    }
    if let Some(p) = &run_out {
        write_run(&reranked, &tag, p).map_err(data_err)?;
    }
    let report = ExperimentReport {
        index: index_summary(&index),
        bm25: bm25_eval.summary(),
        rerank: rerank_eval.summary(),
    };
    println!("{}", serde_json::to_string(&report).expect("serializable"));
    Ok(())
}

fn cmd_serve_stub(a: ServeStubArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&a.config).map_err(|e| data_err(format!("{}: {e}", a.config.display())))?;
    let config: StubConfig = if a.config.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| arg_err(format!("{}: {e}", a.config.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| arg_err(format!("{}: {e}", a.config.display())))?
    };
    let server = StubServer::start(config, &a.addr).map_err(|e| data_err(format!("{}: {e}", a.addr)))?;
    println!("{}", server.url());
    log::info!("stub server listening on {}", server.url());
    server.join();
    Ok(())
}
