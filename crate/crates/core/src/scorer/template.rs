//! Prompt templates with `{query}`, `{passage}`, `{passage_a}`,
//! `{passage_b}` and `{options}` placeholders.

use std::path::Path;

use crate::types::{Passage, Query};

/// Default character budget for a rendered passage.
pub const DEFAULT_MAX_PASSAGE_CHARS: usize = 2000;

pub const DEFAULT_POINTWISE: &str = "\
Rate how relevant the passage is to the question on a scale of {options}, \
where the lowest value means not relevant at all and the highest means highly relevant.

Question: {query}

Passage: {passage}

Answer with a single digit only.";

pub const DEFAULT_PAIRWISE: &str = "\
Which of the two passages is more relevant to the question?

Question: {query}

Passage A: {passage_a}

Passage B: {passage_b}

Answer with a single letter ({options}) only.";

pub const DEFAULT_BINARY: &str = "\
Is the passage relevant to the question?

Question: {query}

Passage: {passage}

Answer {options} only.";

pub const DEFAULT_UPR: &str = "\
Passage: {passage}

Please write a question based on this passage.";

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template {template}: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template {template}: placeholder {{{name}}} is not allowed in a {kind} template")]
    NotAllowed {
        template: String,
        name: String,
        kind: TemplateKind,
    },
    #[error("template {template}: a {kind} template needs {{{name}}}")]
    MissingPlaceholder {
        template: String,
        name: &'static str,
        kind: TemplateKind,
    },
    #[error("template {template} is a {actual} template, not {expected}")]
    WrongKind {
        template: String,
        expected: TemplateKind,
        actual: TemplateKind,
    },
    #[error("template {template}: passage budget must be positive")]
    ZeroBudget { template: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Pointwise,
    Pairwise,
    Binary,
    /// Passage-only context for query likelihood scoring.
    Upr,
}

impl std::fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TemplateKind::Pointwise => "pointwise",
            TemplateKind::Pairwise => "pairwise",
            TemplateKind::Binary => "binary",
            TemplateKind::Upr => "upr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Query,
    Passage,
    PassageA,
    PassageB,
    Options,
}

impl Slot {
    fn parse(name: &str) -> Option<Slot> {
        Some(match name {
            "query" => Slot::Query,
            "passage" => Slot::Passage,
            "passage_a" => Slot::PassageA,
            "passage_b" => Slot::PassageB,
            "options" => Slot::Options,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Slot::Query => "query",
            Slot::Passage => "passage",
            Slot::PassageA => "passage_a",
            Slot::PassageB => "passage_b",
            Slot::Options => "options",
        }
    }
}

impl TemplateKind {
    fn required(self) -> &'static [Slot] {
        match self {
            TemplateKind::Pointwise | TemplateKind::Binary => &[Slot::Query, Slot::Passage],
            TemplateKind::Pairwise => &[Slot::Query, Slot::PassageA, Slot::PassageB],
            TemplateKind::Upr => &[Slot::Passage],
        }
    }

    fn allows(self, slot: Slot) -> bool {
        slot == Slot::Options || self.required().contains(&slot)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Slot),
}

/// A validated prompt template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    body: String,
    kind: TemplateKind,
    max_passage_chars: usize,
    segments: Vec<Segment>,
}

/// Values substituted into a template.
#[derive(Debug, Default)]
pub struct Bindings<'a> {
    pub query: Option<&'a Query>,
    pub passage: Option<&'a Passage>,
    pub passage_a: Option<&'a Passage>,
    pub passage_b: Option<&'a Passage>,
    pub options: &'a str,
}

impl PromptTemplate {
    pub fn new(
        name: impl Into<String>,
        body: impl Into<String>,
        kind: TemplateKind,
        max_passage_chars: usize,
    ) -> Result<Self, TemplateError> {
        let (name, body) = (name.into(), body.into());
        if max_passage_chars == 0 {
            return Err(TemplateError::ZeroBudget { template: name });
        }
        let segments = parse(&name, &body)?;
        for seg in &segments {
            if let Segment::Slot(s) = seg {
                if !kind.allows(*s) {
                    return Err(TemplateError::NotAllowed {
                        template: name,
                        name: s.name().to_string(),
                        kind,
                    });
                }
            }
        }
        for req in kind.required() {
            if !segments.contains(&Segment::Slot(*req)) {
                return Err(TemplateError::MissingPlaceholder {
                    template: name,
                    name: req.name(),
                    kind,
                });
            }
        }
        Ok(PromptTemplate {
            name,
            body,
            kind,
            max_passage_chars,
            segments,
        })
    }

    pub fn from_file(
        path: impl AsRef<Path>,
        kind: TemplateKind,
        max_passage_chars: usize,
    ) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Self::new(name, body.trim_end_matches(['\n', '\r']), kind, max_passage_chars)
    }

    pub fn default_for(kind: TemplateKind) -> Self {
        let (name, body) = match kind {
            TemplateKind::Pointwise => ("default-pointwise", DEFAULT_POINTWISE),
            TemplateKind::Pairwise => ("default-pairwise", DEFAULT_PAIRWISE),
            TemplateKind::Binary => ("default-binary", DEFAULT_BINARY),
            TemplateKind::Upr => ("default-upr", DEFAULT_UPR),
        };
        Self::new(name, body, kind, DEFAULT_MAX_PASSAGE_CHARS).expect("built-in templates are valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn max_passage_chars(&self) -> usize {
        self.max_passage_chars
    }

    pub fn render(&self, b: &Bindings<'_>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len() + 2 * self.max_passage_chars);
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(slot) => {
                    let passage = |p: Option<&Passage>| {
                        p.map(|p| truncate_at_whitespace(&p.full_text(), self.max_passage_chars))
                    };
                    let value = match slot {
                        Slot::Query => b.query.map(|q| q.text.clone()),
                        Slot::Passage => passage(b.passage),
                        Slot::PassageA => passage(b.passage_a),
                        Slot::PassageB => passage(b.passage_b),
                        Slot::Options => Some(b.options.to_string()),
                    };
                    match value {
                        Some(v) => out.push_str(&v),
                        None => {
                            return Err(TemplateError::MissingPlaceholder {
                                template: self.name.clone(),
                                name: slot.name(),
                                kind: self.kind,
                            })
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn expect_kind(&self, expected: TemplateKind) -> Result<(), TemplateError> {
        if self.kind != expected {
            return Err(TemplateError::WrongKind {
                template: self.name.clone(),
                expected,
                actual: self.kind,
            });
        }
        Ok(())
    }

    /// Renders a single-passage judgment prompt (pointwise or binary).
    pub fn render_single(
        &self,
        query: &Query,
        passage: &Passage,
        options: &str,
    ) -> Result<String, TemplateError> {
        if self.kind != TemplateKind::Binary {
            self.expect_kind(TemplateKind::Pointwise)?;
        }
        self.render(&Bindings {
            query: Some(query),
            passage: Some(passage),
            options,
            ..Default::default()
        })
    }

    pub fn render_pair(
        &self,
        query: &Query,
        first: &Passage,
        second: &Passage,
        options: &str,
    ) -> Result<String, TemplateError> {
        self.expect_kind(TemplateKind::Pairwise)?;
        self.render(&Bindings {
            query: Some(query),
            passage_a: Some(first),
            passage_b: Some(second),
            options,
            ..Default::default()
        })
    }

    pub fn render_context(&self, passage: &Passage) -> Result<String, TemplateError> {
        self.expect_kind(TemplateKind::Upr)?;
        self.render(&Bindings {
            passage: Some(passage),
            ..Default::default()
        })
    }
}

/// Renders a pointwise prompt for `query` and `passage` over `scale`.
pub fn render_pointwise_prompt(
    template: &PromptTemplate,
    query: &Query,
    passage: &Passage,
    scale: &crate::ScoreScale,
) -> Result<String, TemplateError> {
    template.expect_kind(TemplateKind::Pointwise)?;
    template.render_single(query, passage, &scale.describe())
}

fn parse(template: &str, body: &str) -> Result<Vec<Segment>, TemplateError> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        literal.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        let ident = close
            .map(|c| &after[..c])
            .filter(|s| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
        match ident {
            Some(name) => {
                let slot = Slot::parse(name).ok_or_else(|| TemplateError::UnknownPlaceholder {
                    template: template.to_string(),
                    name: name.to_string(),
                })?;
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Slot(slot));
                rest = &after[name.len() + 1..];
            }
            None => {
                // Not a placeholder, e.g. JSON in the instructions.
                literal.push('{');
                rest = after;
            }
        }
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

/// Cuts `text` to at most `budget` characters, backing off to the last
/// whitespace when the cut would split a word. A single word longer than the
/// budget is cut mid-word.
pub fn truncate_at_whitespace(text: &str, budget: usize) -> String {
    let Some((cut, next)) = text.char_indices().nth(budget) else {
        return text.to_string();
    };
    let head = &text[..cut];
    if next.is_whitespace() {
        return head.trim_end().to_string();
    }
    match head.rfind(char::is_whitespace) {
        Some(ws) if !head[..ws].trim_end().is_empty() => head[..ws].trim_end().to_string(),
        _ => head.to_string(),
    }
}
