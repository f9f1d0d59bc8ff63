//! BEIR-style JSONL corpora and queries, TREC qrels, and TREC run files.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::DataError;
use crate::metrics::Qrels;
use crate::types::{Passage, Query, RankedItem, Ranking};

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| DataError::io(path, e))
}

/// One parsed JSONL object with the line it came from.
struct JsonLine<'a> {
    path: &'a Path,
    line: usize,
    obj: serde_json::Map<String, Value>,
}

impl<'a> JsonLine<'a> {
    fn parse(path: &'a Path, line: usize, text: &str) -> Result<Self, DataError> {
        match serde_json::from_str::<Value>(text) {
            Ok(Value::Object(obj)) => Ok(JsonLine { path, line, obj }),
            Ok(_) => Err(self::malformed(path, line, "expected a JSON object")),
            Err(e) => Err(self::malformed(path, line, e.to_string())),
        }
    }

    fn required(&self, field: &'static str) -> Result<String, DataError> {
        match self.obj.get(field) {
            Some(Value::String(s)) => Ok(s.clone()),
            // Some dumps store numeric ids.
            Some(Value::Number(n)) if field == "_id" => Ok(n.to_string()),
            Some(Value::Null) | None => Err(DataError::MissingField {
                path: self.path.to_path_buf(),
                line: self.line,
                field,
            }),
            Some(other) => Err(malformed(
                self.path,
                self.line,
                format!("field \"{field}\" must be a string, got {other}"),
            )),
        }
    }

    fn optional(&self, field: &'static str) -> Result<Option<String>, DataError> {
        match self.obj.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(_) => self.required(field).map(Some),
        }
    }
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> DataError {
    DataError::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Streams passages from a corpus JSONL file (`_id`, `title`, `text`).
///
/// Only a 64-bit digest of each id seen so far is kept in memory. A digest
/// hit is confirmed by rescanning the earlier lines. The first error ends the
/// stream.
pub struct CorpusReader {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line_no: usize,
    seen: HashSet<u64>,
    done: bool,
}

fn id_digest(id: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let h = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<CorpusReader, DataError> {
    let path = path.as_ref().to_path_buf();
    let reader = open(&path)?;
    Ok(CorpusReader {
        path,
        lines: reader.lines(),
        line_no: 0,
        seen: HashSet::new(),
        done: false,
    })
}

impl CorpusReader {
    fn parse(&mut self, text: &str) -> Result<Passage, DataError> {
        let line = JsonLine::parse(&self.path, self.line_no, text)?;
        let id = line.required("_id")?;
        let text = line.required("text")?;
        let title = line.optional("title")?;
        if id.is_empty() {
            return Err(malformed(&self.path, self.line_no, "empty \"_id\""));
        }
        if !self.seen.insert(id_digest(&id)) && self.appears_before(&id)? {
            return Err(DataError::DuplicateId {
                path: self.path.clone(),
                line: self.line_no,
                id,
            });
        }
        Ok(Passage::new(id, title, text).expect("id checked non-empty"))
    }
}

impl CorpusReader {
    /// True if `id` is the `_id` of a line before the current one.
    fn appears_before(&self, id: &str) -> Result<bool, DataError> {
        let reader = open(&self.path)?;
        for (i, line) in reader.lines().take(self.line_no - 1).enumerate() {
            let line = line.map_err(|e| DataError::io(&self.path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            if JsonLine::parse(&self.path, i + 1, &line)?.required("_id")? == id {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

impl Iterator for CorpusReader {
    type Item = Result<Passage, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.done = true;
                    return Some(Err(DataError::io(&self.path, e)));
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let item = self.parse(&line);
            self.done = item.is_err();
            return Some(item);
        }
    }
}

/// Reads a query JSONL file (`_id`, `text`; other fields ignored).
pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>, DataError> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| DataError::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let obj = JsonLine::parse(path, line_no, &text)?;
        let id = obj.required("_id")?;
        let text = obj.required("text")?;
        if !seen.insert(id.clone()) {
            return Err(DataError::DuplicateId {
                path: path.to_path_buf(),
                line: line_no,
                id,
            });
        }
        let q = Query::new(id, text).map_err(|e| malformed(path, line_no, e.to_string()))?;
        out.push(q);
    }
    Ok(out)
}

/// Loaded judgments plus anything suspicious found on the way.
#[derive(Debug, Clone, Default)]
pub struct QrelsLoad {
    pub qrels: Qrels,
    pub warnings: Vec<String>,
}

/// Reads TREC qrels: `qid iter docid grade` per line, whitespace separated.
///
/// A repeated (qid, docid) pair overwrites the earlier grade. Negative grades
/// are read as 0.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<QrelsLoad, DataError> {
    let path = path.as_ref();
    let mut out = QrelsLoad::default();
    for (i, line) in open(path)?.lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| DataError::io(path, e))?;
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(malformed(
                path,
                line_no,
                format!("expected 4 fields `qid iter docid grade`, found {}", fields.len()),
            ));
        }
        let grade: i64 = fields[3].parse().map_err(|_| {
            malformed(path, line_no, format!("grade {:?} is not an integer", fields[3]))
        })?;
        let grade = if grade < 0 {
            out.warnings.push(format!(
                "{}:{line_no}: negative grade {grade} read as 0",
                path.display()
            ));
            0
        } else {
            u32::try_from(grade)
                .map_err(|_| malformed(path, line_no, format!("grade {grade} is too large")))?
        };
        if let Some(prev) = out.qrels.insert(fields[0], fields[2], grade) {
            out.warnings.push(format!(
                "{}:{line_no}: ({}, {}) judged again, grade {prev} replaced by {grade}",
                path.display(),
                fields[0],
                fields[2]
            ));
        }
    }
    for w in &out.warnings {
        log::warn!("{w}");
    }
    Ok(out)
}

/// Formats rankings as TREC run lines, scores with six decimals.
pub fn format_run(rankings: &[Ranking], tag: &str) -> String {
    let mut out = String::new();
    for r in rankings {
        for item in &r.items {
            out.push_str(&format!(
                "{} Q0 {} {} {:.6} {}\n",
                r.query_id, item.passage_id, item.rank, item.score, tag
            ));
        }
    }
    out
}

/// Writes a run file. The file appears only once fully written.
pub fn write_run(rankings: &[Ranking], tag: &str, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    if tag.is_empty() || tag.chars().any(char::is_whitespace) {
        return Err(malformed(path, 0, format!("run tag {tag:?} must be one non-empty word")));
    }
    for r in rankings {
        r.validate().map_err(|e| malformed(path, 0, e.to_string()))?;
    }
    let tmp = tmp_path(path);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(format_run(rankings, tag).as_bytes())?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        DataError::io(path, e)
    })
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Reads a TREC run file. Queries keep their order of first appearance;
/// within a query, lines may come in any order but ranks must be 1..=n with
/// non-increasing scores.
pub fn read_run(path: impl AsRef<Path>) -> Result<Vec<Ranking>, DataError> {
    let path = path.as_ref();
    struct Row {
        line: usize,
        item: RankedItem,
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_query: HashMap<String, (String, Vec<Row>)> = HashMap::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| DataError::io(path, e))?;
        let f: Vec<&str> = text.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 6 {
            return Err(malformed(
                path,
                line_no,
                format!("expected 6 fields `qid Q0 docid rank score tag`, found {}", f.len()),
            ));
        }
        let rank: usize = f[3]
            .parse()
            .ok()
            .filter(|&r| r > 0)
            .ok_or_else(|| malformed(path, line_no, format!("rank {:?} is not a positive integer", f[3])))?;
        let score: f64 = f[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| malformed(path, line_no, format!("score {:?} is not a finite number", f[4])))?;
        let entry = by_query.entry(f[0].to_string()).or_insert_with(|| {
            order.push(f[0].to_string());
            (f[5].to_string(), Vec::new())
        });
        entry.1.push(Row {
            line: line_no,
            item: RankedItem {
                passage_id: f[2].to_string(),
                score,
                rank,
            },
        });
    }
    let mut out = Vec::with_capacity(order.len());
    for qid in order {
        let (tag, mut rows) = by_query.remove(&qid).expect("every ordered query has rows");
        rows.sort_by_key(|r| r.item.rank);
        let mut seen = HashSet::with_capacity(rows.len());
        for (pos, row) in rows.iter().enumerate() {
            let fail = |msg: String| DataError::Validation {
                path: path.to_path_buf(),
                line: row.line,
                message: format!("query {qid}: {msg}"),
            };
            if row.item.rank != pos + 1 {
                return Err(fail(format!(
                    "rank {} where {} was expected (ranks must be 1..n without gaps or repeats)",
                    row.item.rank,
                    pos + 1
                )));
            }
            if pos > 0 && row.item.score > rows[pos - 1].item.score {
                return Err(fail(format!(
                    "score {} at rank {} is above score {} at rank {}",
                    row.item.score,
                    row.item.rank,
                    rows[pos - 1].item.score,
                    pos
                )));
            }
            if !seen.insert(row.item.passage_id.clone()) {
                return Err(fail(format!("passage {} listed twice", row.item.passage_id)));
            }
        }
        out.push(Ranking {
            query_id: qid,
            items: rows.into_iter().map(|r| r.item).collect(),
            method_tag: tag,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn corpus_field_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.jsonl", "{\"_id\":\"d1\",\"title\":\"T\",\"text\":\"body\"}\n\n{\"_id\":2,\"text\":\"x\"}\n");
        let docs: Vec<Passage> = load_corpus(&p).unwrap().collect::<Result<_, _>>().unwrap();
        assert_eq!(docs[0], Passage::new("d1", Some("T".into()), "body").unwrap());
        assert_eq!(docs[1].id, "2");
        assert_eq!(docs[1].title, None);
    }

    #[test]
    fn empty_corpus_is_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.jsonl", "");
        assert_eq!(load_corpus(&p).unwrap().count(), 0);
    }

    #[test]
    fn corpus_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.jsonl", "{\"_id\":\"d1\",\"title\":\"T\"}\n");
        let err = load_corpus(&p).unwrap().next().unwrap().unwrap_err();
        assert!(matches!(err, DataError::MissingField { line: 1, field: "text", .. }), "{err}");

        let p = write(&dir, "d.jsonl", "{\"_id\":\"a\",\"text\":\"x\"}\n{\"_id\":\"a\",\"text\":\"y\"}\n");
        let results: Vec<_> = load_corpus(&p).unwrap().collect();
        assert_eq!(results.len(), 2);
        assert!(matches!(&results[1], Err(DataError::DuplicateId { line: 2, id, .. }) if id == "a"));

        let p = write(&dir, "e.jsonl", "{\"_id\":\"a\",\"text\":\"x\"}\nnot json\n{\"_id\":\"b\",\"text\":\"y\"}\n");
        let results: Vec<_> = load_corpus(&p).unwrap().collect();
        assert_eq!(results.len(), 2, "stream stops at the first error");
        assert!(matches!(results[1], Err(DataError::Malformed { line: 2, .. })));
    }

    #[test]
    fn queries_follow_same_contract() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "q.jsonl", "{\"_id\":\"q1\",\"text\":\"what\",\"metadata\":{}}\n");
        assert_eq!(load_queries(&p).unwrap(), vec![Query::new("q1", "what").unwrap()]);
        let p = write(&dir, "q2.jsonl", "");
        assert!(load_queries(&p).unwrap().is_empty());
        let p = write(&dir, "q3.jsonl", "{\"_id\":\"q1\"}\n");
        assert!(matches!(load_queries(&p), Err(DataError::MissingField { line: 1, field: "text", .. })));
    }

    #[test]
    fn qrels_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "qrels", "q1 0 d1 2\nq1 0 d2 1\nq1 0 d2 3\n");
        let load = load_qrels(&p).unwrap();
        assert_eq!(load.qrels.grade("q1", "d1"), Some(2));
        assert_eq!(load.qrels.grade("q1", "d2"), Some(3));
        assert_eq!(load.warnings.len(), 1);

        let p = write(&dir, "bad", "q1 0 d1 2\nq1 0 d1\n");
        assert!(matches!(load_qrels(&p), Err(DataError::Malformed { line: 2, .. })));
        let p = write(&dir, "bad2", "q1 0 d1 1.5\n");
        assert!(matches!(load_qrels(&p), Err(DataError::Malformed { line: 1, .. })));
    }

    #[test]
    fn run_line_format() {
        let r = Ranking::from_ordered("q1", vec![("d2".into(), 3.7), ("d1".into(), 1.2)], "x").unwrap();
        assert_eq!(
            format_run(&[r], "tag"),
            "q1 Q0 d2 1 3.700000 tag\nq1 Q0 d1 2 1.200000 tag\n"
        );
    }

    #[test]
    fn run_validation_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "run", "q1 Q0 a 1 1.0 t\nq1 Q0 b 2 2.0 t\n");
        assert!(matches!(read_run(&p), Err(DataError::Validation { line: 2, .. })));
        let p = write(&dir, "run2", "q1 Q0 a 1 2.0 t\nq1 Q0 b 3 1.0 t\n");
        assert!(matches!(read_run(&p), Err(DataError::Validation { line: 2, .. })));
        let p = write(&dir, "run3", "q1 Q0 a 1 2.0 t\nq1 Q0 a 2 1.0 t\n");
        assert!(read_run(&p).is_err());
        let p = write(&dir, "run4", "q1 Q0 a 0 2.0 t\n");
        assert!(matches!(read_run(&p), Err(DataError::Malformed { line: 1, .. })));
        // Lines may be shuffled within and across queries.
        let p = write(&dir, "run5", "q2 Q0 z 1 9.0 t\nq1 Q0 b 2 1.0 t\nq1 Q0 a 1 2.0 t\n");
        let run = read_run(&p).unwrap();
        assert_eq!(run[0].query_id, "q2");
        assert_eq!(run[1].passage_ids().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn write_run_is_deterministic_and_rejects_bad_tags() {
        let dir = tempfile::tempdir().unwrap();
        let r = Ranking::from_ordered("q1", vec![("d".into(), 0.5)], "x").unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        write_run(std::slice::from_ref(&r), "t", &a).unwrap();
        write_run(std::slice::from_ref(&r), "t", &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert!(write_run(&[r], "two words", dir.path().join("c")).is_err());
        assert!(!dir.path().join("c").exists());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn run_round_trip(scores in prop::collection::vec(prop::collection::vec(-1e4f64..1e4, 1..20), 1..10)) {
            let dir = tempfile::tempdir().unwrap();
            let rankings: Vec<Ranking> = scores.iter().enumerate().map(|(qi, s)| {
                let mut s: Vec<f64> = s.iter().map(|x| (x * 1e6).round() / 1e6).collect();
                s.sort_by(|a, b| b.partial_cmp(a).unwrap());
                Ranking::from_ordered(format!("q{qi}"), s.into_iter().enumerate().map(|(i, x)| (format!("d{i}"), x)), "t").unwrap()
            }).collect();
            let path = dir.path().join("run");
            write_run(&rankings, "t", &path).unwrap();
            let back = read_run(&path).unwrap();
            prop_assert_eq!(back.len(), rankings.len());
            for (a, b) in rankings.iter().zip(&back) {
                prop_assert_eq!(&a.query_id, &b.query_id);
                for (x, y) in a.items.iter().zip(&b.items) {
                    prop_assert_eq!(&x.passage_id, &y.passage_id);
                    prop_assert_eq!(x.rank, y.rank);
                    prop_assert!((x.score - y.score).abs() < 5e-7);
                }
            }
        }
    }
}
