//! First-stage lexical retrieval with BM25.
//!
//! Scoring uses the Lucene form of idf, `ln(1 + (N - df + 0.5) / (df + 0.5))`,
//! so every matching term contributes a positive amount.
//!
//! # Index file
//!
//! Little-endian throughout:
//!
//! ```text
//! magic        8 bytes  "RRBM25IX"
//! version      u32      1
//! stem         u8       0 | 1
//! stopwords    u8       0 | 1
//! num_docs     u64
//! num_docs x { id_len u32, id utf-8, length u32 }
//! num_terms    u64
//! num_terms x { term_len u32, term utf-8, df u32, df x { ordinal u32, tf u32 } }
//! ```
//!
//! Terms are written in byte order so identical corpora give identical files.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};
use crate::types::{Candidate, Passage, Query};

const MAGIC: &[u8; 8] = b"RRBM25IX";
const VERSION: u32 = 1;

/// Lucene's default English stop set.
const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it",
    "no", "not", "of", "on", "or", "such", "that", "the", "their", "then", "there", "these",
    "they", "this", "to", "was", "will", "with",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self> {
        if !(k1 >= 0.0 && k1.is_finite()) {
            return Err(Error::contract(format!("k1 must be finite and >= 0, got {k1}")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::contract(format!("b must be in [0, 1], got {b}")));
        }
        Ok(Bm25Params { k1, b })
    }
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Tokenization plus optional stopword removal and Snowball English stemming.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analyzer {
    pub stem: bool,
    pub stopwords: bool,
}

impl Analyzer {
    pub fn analyze(&self, text: &str) -> Vec<String> {
        let mut terms = tokenize(text);
        if self.stopwords {
            terms.retain(|t| !STOPWORDS.contains(&t.as_str()));
        }
        if self.stem {
            let stemmer = Stemmer::create(Algorithm::English);
            for t in &mut terms {
                let stemmed = stemmer.stem(t);
                if stemmed != t.as_str() {
                    *t = stemmed.into_owned();
                }
            }
        }
        terms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Term -> postings, with the per-document lengths BM25 needs.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    analyzer: Analyzer,
    postings: HashMap<String, Vec<Posting>>,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avgdl: f64,
}

/// Adds documents one at a time; postings come out sorted by ordinal
/// because ordinals are handed out in insertion order.
#[derive(Debug, Default)]
pub struct IndexBuilder {
    analyzer: Analyzer,
    postings: HashMap<String, Vec<Posting>>,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    seen: HashSet<String>,
}

impl IndexBuilder {
    pub fn new(analyzer: Analyzer) -> Self {
        IndexBuilder {
            analyzer,
            ..Default::default()
        }
    }

    pub fn add(&mut self, passage: &Passage) -> Result<()> {
        if !self.seen.insert(passage.id.clone()) {
            return Err(DataError::DuplicatePassage(passage.id.clone()).into());
        }
        let ordinal = u32::try_from(self.doc_ids.len())
            .map_err(|_| Error::contract("more than u32::MAX documents"))?;
        let terms = self.analyzer.analyze(&passage.full_text());
        let mut tf: HashMap<&str, u32> = HashMap::new();
        for t in &terms {
            *tf.entry(t.as_str()).or_default() += 1;
        }
        for (term, count) in tf {
            match self.postings.get_mut(term) {
                Some(list) => list.push(Posting { doc: ordinal, tf: count }),
                None => {
                    self.postings
                        .insert(term.to_string(), vec![Posting { doc: ordinal, tf: count }]);
                }
            }
        }
        self.doc_ids.push(passage.id.clone());
        self.doc_lengths.push(terms.len() as u32);
        Ok(())
    }

    pub fn finish(self) -> InvertedIndex {
        InvertedIndex::from_parts(self.analyzer, self.postings, self.doc_ids, self.doc_lengths)
    }
}

/// Indexes a stream of passages.
pub fn build_index<I, E>(corpus: I, analyzer: Analyzer) -> Result<InvertedIndex>
where
    I: IntoIterator<Item = std::result::Result<Passage, E>>,
    Error: From<E>,
{
    let mut builder = IndexBuilder::new(analyzer);
    for p in corpus {
        builder.add(&p?)?;
    }
    Ok(builder.finish())
}

impl InvertedIndex {
    fn from_parts(
        analyzer: Analyzer,
        postings: HashMap<String, Vec<Posting>>,
        doc_ids: Vec<String>,
        doc_lengths: Vec<u32>,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avgdl = if doc_lengths.is_empty() {
            0.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        InvertedIndex {
            analyzer,
            postings,
            doc_ids,
            doc_lengths,
            avgdl,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn analyzer(&self) -> Analyzer {
        self.analyzer
    }

    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn doc_id(&self, ordinal: u32) -> &str {
        &self.doc_ids[ordinal as usize]
    }

    pub fn doc_length(&self, ordinal: u32) -> u32 {
        self.doc_lengths[ordinal as usize]
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.doc_frequency(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top `top_k` passages for `query` by BM25, ties broken by passage id.
    /// Passages sharing no term with the query are never returned.
    pub fn search(&self, params: &Bm25Params, query: &Query, top_k: usize) -> Result<Vec<Candidate>> {
        if top_k == 0 {
            return Err(Error::contract("top_k must be positive"));
        }
        let mut terms = self.analyzer.analyze(&query.text);
        terms.sort_unstable();
        terms.dedup();
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for p in list {
                let dl = self.doc_lengths[p.doc as usize] as f64;
                let tf = p.tf as f64;
                let norm = params.k1 * (1.0 - params.b + params.b * dl / self.avgdl);
                *scores.entry(p.doc).or_default() += idf * tf * (params.k1 + 1.0) / (tf + norm);
            }
        }
        let mut hits: Vec<(u32, f64)> = scores.into_iter().collect();
        hits.sort_unstable_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0 as usize].cmp(&self.doc_ids[b.0 as usize]))
        });
        hits.truncate(top_k);
        Ok(hits
            .into_iter()
            .enumerate()
            .map(|(i, (doc, score))| Candidate {
                passage_id: self.doc_ids[doc as usize].clone(),
                first_stage_score: score,
                first_stage_rank: i + 1,
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::result::Result<(), DataError> {
        let path = path.as_ref();
        let io = |e| DataError::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.write_to(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[u8::from(self.analyzer.stem), u8::from(self.analyzer.stopwords)])?;
        w.write_all(&(self.doc_ids.len() as u64).to_le_bytes())?;
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            write_str(w, id)?;
            w.write_all(&len.to_le_bytes())?;
        }
        let mut terms: Vec<&String> = self.postings.keys().collect();
        terms.sort_unstable();
        w.write_all(&(terms.len() as u64).to_le_bytes())?;
        for term in terms {
            write_str(w, term)?;
            let list = &self.postings[term];
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            for p in list {
                w.write_all(&p.doc.to_le_bytes())?;
                w.write_all(&p.tf.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> std::result::Result<Self, DataError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| DataError::io(path, e))?;
        let mut r = BufReader::new(file);
        Self::read_from(&mut r).map_err(|e| match e {
            ReadError::Io(e) if e.kind() != std::io::ErrorKind::UnexpectedEof => DataError::io(path, e),
            ReadError::Io(_) => DataError::BadIndex {
                path: path.to_path_buf(),
                message: "file is truncated".into(),
            },
            ReadError::Format(message) => DataError::BadIndex {
                path: path.to_path_buf(),
                message,
            },
        })
    }

    fn read_from(r: &mut impl Read) -> std::result::Result<Self, ReadError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ReadError::Format("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(ReadError::Format(format!("unsupported version {version}")));
        }
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let analyzer = Analyzer {
            stem: flags[0] != 0,
            stopwords: flags[1] != 0,
        };
        let n = read_u64(r)? as usize;
        let mut doc_ids = Vec::with_capacity(n.min(1 << 24));
        let mut doc_lengths = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            doc_ids.push(read_str(r)?);
            doc_lengths.push(read_u32(r)?);
        }
        let num_terms = read_u64(r)? as usize;
        let mut postings = HashMap::with_capacity(num_terms.min(1 << 24));
        for _ in 0..num_terms {
            let term = read_str(r)?;
            let df = read_u32(r)? as usize;
            let mut list = Vec::with_capacity(df.min(n));
            let mut prev: Option<u32> = None;
            for _ in 0..df {
                let doc = read_u32(r)?;
                let tf = read_u32(r)?;
                if doc as usize >= n || prev.is_some_and(|p| p >= doc) {
                    return Err(ReadError::Format(format!("postings for {term:?} are out of order or range")));
                }
                prev = Some(doc);
                list.push(Posting { doc, tf });
            }
            postings.insert(term, list);
        }
        Ok(Self::from_parts(analyzer, postings, doc_ids, doc_lengths))
    }
}

enum ReadError {
    Io(std::io::Error),
    Format(String),
}

impl From<std::io::Error> for ReadError {
    fn from(e: std::io::Error) -> Self {
        ReadError::Io(e)
    }
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> std::result::Result<String, ReadError> {
    let len = read_u32(r)? as usize;
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(ReadError::Io(std::io::ErrorKind::UnexpectedEof.into()));
    }
    String::from_utf8(buf).map_err(|_| ReadError::Format("invalid utf-8 string".into()))
}
