//! BIO-tagged slot-filling corpora: tags, utterances, semantic frames and the
//! CONLL-style text format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty corpus")]
    Empty,
    #[error("invalid utterance: {0}")]
    Invalid(String),
    #[error("malformed tag {0:?}")]
    BadTag(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A BIO slot label.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotTag {
    Outside,
    Begin(String),
    Inside(String),
}

fn valid_slot_type(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

impl SlotTag {
    pub fn begin(slot_type: impl Into<String>) -> Self {
        SlotTag::Begin(slot_type.into())
    }

    pub fn inside(slot_type: impl Into<String>) -> Self {
        SlotTag::Inside(slot_type.into())
    }

    pub fn slot_type(&self) -> Option<&str> {
        match self {
            SlotTag::Outside => None,
            SlotTag::Begin(t) | SlotTag::Inside(t) => Some(t),
        }
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, SlotTag::Outside)
    }
}

impl FromStr for SlotTag {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(SlotTag::Outside);
        }
        let (prefix, rest) = s.split_at(s.len().min(2));
        let tag = match prefix {
            "B-" if valid_slot_type(rest) => SlotTag::Begin(rest.to_string()),
            "I-" if valid_slot_type(rest) => SlotTag::Inside(rest.to_string()),
            _ => return Err(CorpusError::BadTag(s.to_string())),
        };
        Ok(tag)
    }
}

impl fmt::Display for SlotTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotTag::Outside => f.write_str("O"),
            SlotTag::Begin(t) => write!(f, "B-{t}"),
            SlotTag::Inside(t) => write!(f, "I-{t}"),
        }
    }
}

/// A contiguous run of tokens labelled with one slot type.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotSegment {
    pub slot_type: String,
    pub start: usize,
    pub end: usize,
    pub value: Vec<String>,
}

/// Maximal chunks of a tag sequence as `(slot_type, start, end)`.
///
/// A chunk starts at every `B-X`, and at an `I-X` that does not continue an
/// open `X` chunk. It extends over following `I-X` tags of the same type.
pub fn chunk_spans(tags: &[SlotTag]) -> Vec<(String, usize, usize)> {
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let continues = match (tag, &open) {
            (SlotTag::Inside(t), Some((open_type, _))) => t == open_type,
            _ => false,
        };
        if continues {
            continue;
        }
        if let Some((t, start)) = open.take() {
            spans.push((t, start, i));
        }
        if let Some(t) = tag.slot_type() {
            open = Some((t.to_string(), i));
        }
    }
    if let Some((t, start)) = open {
        spans.push((t, start, tags.len()));
    }
    spans
}

/// `B-type` followed by `I-type` tags for a value of `len` tokens.
pub fn bio_tags(slot_type: &str, len: usize) -> impl Iterator<Item = SlotTag> + '_ {
    (0..len).map(move |i| {
        if i == 0 {
            SlotTag::begin(slot_type)
        } else {
            SlotTag::inside(slot_type)
        }
    })
}

/// Tokens paired with their BIO slot tags.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Utterance {
    tokens: Vec<String>,
    tags: Vec<SlotTag>,
}

impl Utterance {
    pub fn new(tokens: Vec<String>, tags: Vec<SlotTag>) -> Result<Self, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::Invalid("no tokens".into()));
        }
        if tokens.len() != tags.len() {
            return Err(CorpusError::Invalid(format!(
                "{} tokens but {} tags",
                tokens.len(),
                tags.len()
            )));
        }
        if let Some(bad) = tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(CorpusError::Invalid(format!("bad token {bad:?}")));
        }
        if let Some(bad) = tags.iter().filter_map(SlotTag::slot_type).find(|t| !valid_slot_type(t)) {
            return Err(CorpusError::Invalid(format!("bad slot type {bad:?}")));
        }
        Ok(Utterance { tokens, tags })
    }

    /// Builds an utterance from `token/TAG` style pairs; used heavily in tests.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, CorpusError> {
        let mut tokens = Vec::new();
        let mut tags = Vec::new();
        for (tok, tag) in pairs {
            tokens.push(tok.to_string());
            tags.push(tag.parse()?);
        }
        Utterance::new(tokens, tags)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn tags(&self) -> &[SlotTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn segments(&self) -> Vec<SlotSegment> {
        chunk_spans(&self.tags)
            .into_iter()
            .map(|(slot_type, start, end)| SlotSegment {
                slot_type,
                start,
                end,
                value: self.tokens[start..end].to_vec(),
            })
            .collect()
    }

    pub fn frame(&self) -> SemanticFrame {
        frame_of(self)
    }
}

/// Order-insensitive multiset of slot types.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SemanticFrame {
    counts: BTreeMap<String, usize>,
}

impl SemanticFrame {
    pub fn from_types<S: AsRef<str>>(types: impl IntoIterator<Item = S>) -> Self {
        let mut counts = BTreeMap::new();
        for t in types {
            *counts.entry(t.as_ref().to_string()).or_insert(0) += 1;
        }
        SemanticFrame { counts }
    }

    pub fn count(&self, slot_type: &str) -> usize {
        self.counts.get(slot_type).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<String, usize> {
        &self.counts
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Total number of slots.
    pub fn size(&self) -> usize {
        self.counts.values().sum()
    }
}

impl fmt::Display for SemanticFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (t, n)) in self.counts.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{t}:{n}")?;
        }
        f.write_str("}")
    }
}

pub fn frame_of(u: &Utterance) -> SemanticFrame {
    SemanticFrame::from_types(chunk_spans(u.tags()).into_iter().map(|(t, _, _)| t))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub provenance: String,
}

impl Corpus {
    pub fn new(utterances: Vec<Utterance>) -> Self {
        Corpus {
            utterances,
            provenance: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Utterance> {
        self.utterances.iter()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut corpus = parse_conll(&text)?;
        corpus.provenance = path.display().to_string();
        Ok(corpus)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        std::fs::write(path, write_conll(self)).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Parses whitespace-separated columns: first column is the token, last is
/// the tag, blank lines separate utterances.
pub fn parse_conll(text: &str) -> Result<Corpus, CorpusError> {
    let mut utterances = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut block_start = 1;

    let mut flush = |tokens: &mut Vec<String>, tags: &mut Vec<SlotTag>, line: usize| {
        if tokens.is_empty() {
            return Ok(());
        }
        let u = Utterance::new(std::mem::take(tokens), std::mem::take(tags)).map_err(|e| CorpusError::Parse {
            line,
            message: e.to_string(),
        })?;
        utterances.push(u);
        Ok(())
    };

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            flush(&mut tokens, &mut tags, block_start)?;
            block_start = lineno + 1;
            continue;
        }
        if cols.len() < 2 {
            return Err(CorpusError::Parse {
                line: lineno,
                message: format!("expected at least 2 columns, got {line:?}"),
            });
        }
        let tag = cols[cols.len() - 1]
            .parse::<SlotTag>()
            .map_err(|e| CorpusError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
        tokens.push(cols[0].to_string());
        tags.push(tag);
    }
    flush(&mut tokens, &mut tags, block_start)?;

    if utterances.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(Corpus::new(utterances))
}

pub fn write_conll(corpus: &Corpus) -> String {
    let mut out = String::new();
    for (i, u) in corpus.utterances.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (tok, tag) in u.tokens().iter().zip(u.tags()) {
            out.push_str(tok);
            out.push(' ');
            out.push_str(&tag.to_string());
            out.push('\n');
        }
    }
    out
}

/// Frame clusters, keyed deterministically; member indices are in corpus order.
pub type Clusters = BTreeMap<SemanticFrame, Vec<usize>>;

pub fn cluster_by_frame(c: &Corpus) -> Clusters {
    let mut clusters = Clusters::new();
    for (i, u) in c.utterances.iter().enumerate() {
        clusters.entry(frame_of(u)).or_default().push(i);
    }
    clusters
}
