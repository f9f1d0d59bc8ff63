//! A small in-process server speaking the scoring protocol with canned
//! answers. Used by the tests and by `rerank serve-stub` for wiring checks
//! without a model.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use super::http::{
    LoglikelihoodRequest, LoglikelihoodResponse, ScoreOptionsRequest, ScoreOptionsResponse,
    LOGLIKELIHOOD_PATH, SCORE_OPTIONS_PATH,
};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubConfig {
    /// Log-probabilities returned when no rule matches. Options absent from
    /// the map are left out of the response.
    #[serde(default)]
    pub default_logprobs: HashMap<String, f64>,
    /// First rule whose `contains` occurs in the prompt wins.
    #[serde(default)]
    pub rules: Vec<StubRule>,
    /// First entry whose `contains` occurs in the context wins.
    #[serde(default)]
    pub likelihoods: Vec<StubLikelihood>,
    #[serde(default)]
    pub default_likelihood: Option<LoglikelihoodResponse>,
    /// Answer this many requests with HTTP 503 before serving normally.
    #[serde(default)]
    pub fail_first: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubRule {
    pub contains: String,
    pub logprobs: HashMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubLikelihood {
    pub contains: String,
    pub logprob: f64,
    pub num_tokens: u32,
}

struct Shared {
    config: StubConfig,
    failures_left: AtomicUsize,
    served: AtomicUsize,
}

/// Running stub server. Stops when dropped.
pub struct StubServer {
    server: Arc<tiny_http::Server>,
    shared: Arc<Shared>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl StubServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub fn start(config: StubConfig, addr: &str) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(addr)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("not an IP listener"))?;
        let server = Arc::new(server);
        let shared = Arc::new(Shared {
            failures_left: AtomicUsize::new(config.fail_first),
            served: AtomicUsize::new(0),
            config,
        });
        let workers = (0..4)
            .map(|_| {
                let server = Arc::clone(&server);
                let shared = Arc::clone(&shared);
                std::thread::spawn(move || {
                    for request in server.incoming_requests() {
                        handle(&shared, request);
                    }
                })
            })
            .collect();
        Ok(StubServer {
            server,
            shared,
            addr,
            workers,
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Requests received so far, including injected failures.
    pub fn requests_served(&self) -> usize {
        self.shared.served.load(Ordering::SeqCst)
    }

    /// Blocks until the server is stopped from elsewhere.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn respond_json<T: Serialize>(request: tiny_http::Request, code: u16, body: &T) {
    let text = serde_json::to_string(body).expect("serializable response");
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    let _ = request.respond(
        tiny_http::Response::from_string(text)
            .with_status_code(code)
            .with_header(header),
    );
}

fn respond_error(request: tiny_http::Request, code: u16, message: &str) {
    respond_json(request, code, &serde_json::json!({ "error": message }));
}

fn handle(shared: &Shared, mut request: tiny_http::Request) {
    shared.served.fetch_add(1, Ordering::SeqCst);
    if shared
        .failures_left
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        return respond_error(request, 503, "injected failure");
    }
    if *request.method() != tiny_http::Method::Post {
        return respond_error(request, 405, "POST only");
    }
    let mut body = String::new();
    if request.as_reader().read_to_string(&mut body).is_err() {
        return respond_error(request, 400, "unreadable body");
    }
    let config = &shared.config;
    match request.url() {
        SCORE_OPTIONS_PATH => {
            let Ok(req) = serde_json::from_str::<ScoreOptionsRequest>(&body) else {
                return respond_error(request, 400, "bad score_options request");
            };
            let table = config
                .rules
                .iter()
                .find(|r| req.prompt.contains(&r.contains))
                .map(|r| &r.logprobs)
                .unwrap_or(&config.default_logprobs);
            let logprobs = req
                .options
                .iter()
                .filter_map(|o| table.get(o).map(|lp| (o.clone(), *lp)))
                .collect();
            respond_json(request, 200, &ScoreOptionsResponse { logprobs });
        }
        LOGLIKELIHOOD_PATH => {
            let Ok(req) = serde_json::from_str::<LoglikelihoodRequest>(&body) else {
                return respond_error(request, 400, "bad loglikelihood request");
            };
            let hit = config
                .likelihoods
                .iter()
                .find(|l| req.context.contains(&l.contains))
                .map(|l| LoglikelihoodResponse {
                    logprob: l.logprob,
                    num_tokens: l.num_tokens,
                });
            match hit.or_else(|| {
                config.default_likelihood.as_ref().map(|d| LoglikelihoodResponse {
                    logprob: d.logprob,
                    num_tokens: d.num_tokens,
                })
            }) {
                Some(resp) => respond_json(request, 200, &resp),
                None => respond_error(request, 404, "no likelihood configured"),
            }
        }
        _ => respond_error(request, 404, "unknown endpoint"),
    }
}
