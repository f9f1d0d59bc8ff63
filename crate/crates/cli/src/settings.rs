//! Config file contents and the flag > file > default merge.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use rerank_core::metrics::Gain;
use rerank_core::rerank::{Method, PointwiseMode};
use serde::{Deserialize, Serialize};

/// A failed command: message plus process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub type CliResult<T> = Result<T, Failure>;

pub const EXIT_DATA: u8 = 1;
pub const EXIT_ARGS: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;

pub fn data_err(e: impl Display) -> Failure {
    Failure { code: EXIT_DATA, message: e.to_string() }
}

pub fn arg_err(e: impl Display) -> Failure {
    Failure { code: EXIT_ARGS, message: e.to_string() }
}

/// Exit code for an error coming out of the core library.
pub fn core_err(e: rerank_core::Error) -> Failure {
    use rerank_core::scorer::TemplateError;
    use rerank_core::Error;
    let code = match &e {
        Error::Score(_) => EXIT_BACKEND,
        Error::Template(TemplateError::Io { .. }) => EXIT_DATA,
        Error::Template(_) => EXIT_ARGS,
        Error::Contract(_) | Error::Degenerate(_) | Error::Data(_) => EXIT_DATA,
    };
    Failure { code, message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Oracle,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatePaths {
    pub pointwise: Option<PathBuf>,
    pub pairwise: Option<PathBuf>,
    pub binary: Option<PathBuf>,
    pub upr: Option<PathBuf>,
}

impl TemplatePaths {
    /// Parses `kind=path`.
    pub fn parse_flag(s: &str) -> Result<(String, PathBuf), String> {
        let (kind, path) = s
            .split_once('=')
            .ok_or_else(|| format!("expected KIND=PATH, got {s:?}"))?;
        match kind {
            "pointwise" | "pairwise" | "binary" | "upr" => Ok((kind.to_string(), PathBuf::from(path))),
            _ => Err(format!("unknown template kind {kind:?}, expected pointwise, pairwise, binary or upr")),
        }
    }

    pub fn set(&mut self, kind: &str, path: PathBuf) {
        match kind {
            "pointwise" => self.pointwise = Some(path),
            "pairwise" => self.pairwise = Some(path),
            "binary" => self.binary = Some(path),
            _ => self.upr = Some(path),
        }
    }

    /// Per-kind override: entries in `over` win.
    pub fn overlay(self, over: TemplatePaths) -> TemplatePaths {
        TemplatePaths {
            pointwise: over.pointwise.or(self.pointwise),
            pairwise: over.pairwise.or(self.pairwise),
            binary: over.binary.or(self.binary),
            upr: over.upr.or(self.upr),
        }
    }
}

/// Everything a TOML config file may set. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSettings {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub run_in: Option<PathBuf>,
    pub run_out: Option<PathBuf>,
    pub bm25_run: Option<PathBuf>,
    pub tag: Option<String>,

    pub top_k: Option<usize>,
    pub k1: Option<f64>,
    pub b: Option<f64>,
    pub stem: Option<bool>,
    pub stopwords: Option<bool>,

    pub method: Option<Method>,
    pub mode: Option<PointwiseMode>,
    pub pairwise_depth: Option<usize>,
    pub candidate_depth: Option<usize>,

    pub backend: Option<BackendKind>,
    pub backend_url: Option<String>,
    pub timeout_secs: Option<u64>,
    pub oracle_qrels: Option<PathBuf>,
    pub oracle_sharpness: Option<f64>,
    pub oracle_noise: Option<f64>,
    pub oracle_seed: Option<u64>,
    pub parallel: Option<usize>,
    pub cache: Option<PathBuf>,
    pub templates: Option<TemplatePaths>,
    pub max_passage_chars: Option<usize>,

    pub k: Option<usize>,
    pub gain: Option<Gain>,
}

impl FileSettings {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(FileSettings::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| arg_err(format!("{}: {e}", path.display())))
    }
}

pub fn required<T>(value: Option<T>, name: &str) -> CliResult<T> {
    value.ok_or_else(|| arg_err(format!("missing required setting --{name}")))
}
