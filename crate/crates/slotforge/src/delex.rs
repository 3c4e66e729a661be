//! Delexicalisation and surface realisation.
//!
//! Slot segments collapse to `<slot_type>` placeholders. Values seen in
//! training are indexed by slot type plus a window of delexicalised context
//! words, and realisation picks a value from the entry whose context matches
//! (or is closest by token edit distance).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::corpus::{bio_tags, Corpus, CorpusError, SemanticFrame, SlotSegment, SlotTag, Utterance};
use crate::diversity::edit_distance;

#[derive(Debug, Error)]
pub enum DelexError {
    #[error("no values known for slot type {0:?}")]
    UnknownSlotType(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn placeholder(slot_type: &str) -> String {
    format!("<{slot_type}>")
}

/// The slot type named by a placeholder token, if it is one.
pub fn placeholder_type(token: &str) -> Option<&str> {
    let inner = token.strip_prefix('<')?.strip_suffix('>')?;
    (!inner.is_empty()).then_some(inner)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DelexUtterance(Vec<String>);

impl DelexUtterance {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        DelexUtterance(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Multiset of placeholder types.
    pub fn frame(&self) -> SemanticFrame {
        SemanticFrame::from_types(self.0.iter().filter_map(|t| placeholder_type(t)))
    }
}

impl fmt::Display for DelexUtterance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// Placeholder positions in the delexicalised sequence with the segments
/// they replaced.
pub type Alignment = Vec<(usize, SlotSegment)>;

pub fn delexicalise(u: &Utterance) -> (DelexUtterance, Alignment) {
    let mut out = Vec::with_capacity(u.len());
    let mut alignment = Vec::new();
    let mut next = 0;
    for seg in u.segments() {
        out.extend_from_slice(&u.tokens()[next..seg.start]);
        alignment.push((out.len(), seg.clone()));
        out.push(placeholder(&seg.slot_type));
        next = seg.end;
    }
    out.extend_from_slice(&u.tokens()[next..]);
    (DelexUtterance(out), alignment)
}

/// How many delexicalised tokens on each side of a placeholder form its key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextWindow {
    pub left: usize,
    pub right: usize,
}

impl Default for ContextWindow {
    fn default() -> Self {
        ContextWindow { left: 2, right: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextKey {
    pub slot_type: String,
    pub left: Vec<String>,
    pub right: Vec<String>,
}

impl ContextKey {
    /// Key for the placeholder at `pos` in `tokens`.
    pub fn at(tokens: &[String], pos: usize, slot_type: &str, window: ContextWindow) -> Self {
        ContextKey {
            slot_type: slot_type.to_string(),
            left: tokens[pos.saturating_sub(window.left)..pos].to_vec(),
            right: tokens[pos + 1..(pos + 1 + window.right).min(tokens.len())].to_vec(),
        }
    }

    fn context(&self) -> Vec<&str> {
        self.left.iter().chain(&self.right).map(String::as_str).collect()
    }

    fn serialized(&self) -> String {
        format!("{}\t{}\t{}", self.slot_type, self.left.join(" "), self.right.join(" "))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SlotValueMap {
    entries: BTreeMap<ContextKey, BTreeSet<Vec<String>>>,
    by_type: BTreeMap<String, BTreeSet<ContextKey>>,
    window: ContextWindow,
}

impl SlotValueMap {
    pub fn new(window: ContextWindow) -> Self {
        SlotValueMap {
            window,
            ..Default::default()
        }
    }

    pub fn window(&self) -> ContextWindow {
        self.window
    }

    pub fn insert(&mut self, key: ContextKey, value: Vec<String>) {
        assert!(!value.is_empty(), "slot values are non-empty");
        self.by_type
            .entry(key.slot_type.clone())
            .or_default()
            .insert(key.clone());
        self.entries.entry(key).or_default().insert(value);
    }

    pub fn entries(&self) -> &BTreeMap<ContextKey, BTreeSet<Vec<String>>> {
        &self.entries
    }

    pub fn keys_for(&self, slot_type: &str) -> Option<&BTreeSet<ContextKey>> {
        self.by_type.get(slot_type)
    }

    pub fn knows(&self, slot_type: &str) -> bool {
        self.by_type.contains_key(slot_type)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The entry used for `key`: exact match, otherwise the same-type key with
    /// the closest context (ties go to the smaller serialized key).
    pub fn lookup(&self, key: &ContextKey) -> Result<(&ContextKey, &BTreeSet<Vec<String>>), DelexError> {
        if let Some((k, v)) = self.entries.get_key_value(key) {
            return Ok((k, v));
        }
        let candidates = self
            .by_type
            .get(&key.slot_type)
            .ok_or_else(|| DelexError::UnknownSlotType(key.slot_type.clone()))?;
        let wanted = key.context();
        let best = candidates
            .iter()
            .map(|k| (edit_distance(&wanted, &k.context()), k.serialized(), k))
            .min_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)))
            .map(|(_, _, k)| k)
            .expect("by_type never holds an empty key set");
        Ok((best, &self.entries[best]))
    }

    /// One line per (key, value): `slot_type TAB left TAB right TAB value`.
    pub fn to_tsv(&self) -> String {
        let mut lines: Vec<String> = self
            .entries
            .iter()
            .flat_map(|(k, vals)| {
                vals.iter()
                    .map(move |v| format!("{}\t{}\n", k.serialized(), v.join(" ")))
            })
            .collect();
        lines.sort();
        lines.concat()
    }

    pub fn from_tsv(text: &str, window: ContextWindow) -> Result<Self, DelexError> {
        let mut map = SlotValueMap::new(window);
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 || cols[0].is_empty() || cols[3].trim().is_empty() {
                return Err(DelexError::Parse {
                    line: idx + 1,
                    message: "expected slot_type, left, right and value columns".into(),
                });
            }
            let words = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
            map.insert(
                ContextKey {
                    slot_type: cols[0].to_string(),
                    left: words(cols[1]),
                    right: words(cols[2]),
                },
                words(cols[3]),
            );
        }
        Ok(map)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DelexError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|source| DelexError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: impl AsRef<Path>, window: ContextWindow) -> Result<Self, DelexError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DelexError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tsv(&text, window)
    }
}

pub fn build_slot_value_map(c: &Corpus) -> SlotValueMap {
    build_slot_value_map_with(c, ContextWindow::default())
}

pub fn build_slot_value_map_with(c: &Corpus, window: ContextWindow) -> SlotValueMap {
    let mut map = SlotValueMap::new(window);
    for u in &c.utterances {
        let (d, alignment) = delexicalise(u);
        for (pos, seg) in alignment {
            map.insert(ContextKey::at(d.tokens(), pos, &seg.slot_type, window), seg.value);
        }
    }
    map
}

/// Fills every placeholder with a value drawn uniformly from its matching
/// entry. Non-placeholder tokens are tagged `O`.
pub fn realise<R: Rng + ?Sized>(d: &DelexUtterance, m: &SlotValueMap, rng: &mut R) -> Result<Utterance, DelexError> {
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    for (pos, tok) in d.tokens().iter().enumerate() {
        let Some(slot_type) = placeholder_type(tok) else {
            tokens.push(tok.clone());
            tags.push(SlotTag::Outside);
            continue;
        };
        let key = ContextKey::at(d.tokens(), pos, slot_type, m.window());
        let (_, values) = m.lookup(&key)?;
        let pick = rng.gen_range(0..values.len());
        let value = values.iter().nth(pick).expect("index within set");
        tags.extend(bio_tags(slot_type, value.len()));
        tokens.extend(value.iter().cloned());
    }
    Ok(Utterance::new(tokens, tags)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn utt(s: &str) -> Utterance {
        Utterance::from_pairs(s.split_whitespace().map(|p| p.split_once('/').unwrap())).unwrap()
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn delexicalises_route_request() {
        let u = utt("show/O me/O the/O closest/B-distance restaurant/B-poi_type");
        let (d, al) = delexicalise(&u);
        assert_eq!(d.to_string(), "show me the <distance> <poi_type>");
        assert_eq!(al.len(), 2);
        assert_eq!(al[0].0, 3);
        assert_eq!(al[1].1.value, vec!["restaurant"]);
    }

    #[test]
    fn delex_identity_and_collapse() {
        let u = utt("hello/O there/O");
        let (d, al) = delexicalise(&u);
        assert_eq!(d.tokens(), u.tokens());
        assert!(al.is_empty());

        let u = utt("fly/O from/O new/B-from_city york/I-from_city to/O boston/B-to_city");
        let (d, al) = delexicalise(&u);
        assert_eq!(d.to_string(), "fly from <from_city> to <to_city>");
        let collapsed: usize = al.iter().map(|(_, s)| s.end - s.start - 1).sum();
        assert_eq!(d.len(), u.len() - collapsed);
        assert_eq!(d.frame(), u.frame());
    }

    #[test]
    fn map_from_single_utterance() {
        let c = Corpus::new(vec![utt("show/O me/O the/O closest/B-distance restaurant/B-poi_type")]);
        let m = build_slot_value_map(&c);
        assert_eq!(m.len(), 2);
        assert!(m.entries().values().all(|v| v.len() == 1));
        let key = m.keys_for("distance").unwrap().iter().next().unwrap();
        assert_eq!(key.left, toks("me the"));
        assert_eq!(key.right, toks("<poi_type>"));
    }

    #[test]
    fn shared_context_merges_values() {
        let c = Corpus::new(vec![
            utt("find/O a/O restaurant/B-poi_type near/O me/O"),
            utt("find/O a/O hospital/B-poi_type near/O me/O"),
        ]);
        let m = build_slot_value_map(&c);
        assert_eq!(m.len(), 1);
        assert_eq!(m.entries().values().next().unwrap().len(), 2);
    }

    #[test]
    fn start_of_utterance_has_empty_left_context() {
        let c = Corpus::new(vec![utt("boston/B-city please/O")]);
        let m = build_slot_value_map(&c);
        let key = m.keys_for("city").unwrap().iter().next().unwrap();
        assert!(key.left.is_empty());
        assert_eq!(key.right, toks("please"));
    }

    #[test]
    fn realises_route_request() {
        let u = utt("show/O me/O the/O closest/B-distance restaurant/B-poi_type");
        let m = build_slot_value_map(&Corpus::new(vec![u.clone()]));
        let (d, _) = delexicalise(&u);
        let r = realise(&d, &m, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(r, u);
    }

    #[test]
    fn unknown_type_is_an_error() {
        let m = build_slot_value_map(&Corpus::new(vec![utt("to/O boston/B-city")]));
        let d = DelexUtterance::from_tokens(toks("on <date>"));
        let err = realise(&d, &m, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, DelexError::UnknownSlotType(t) if t == "date"));
    }

    #[test]
    fn falls_back_to_nearest_context() {
        let mut m = SlotValueMap::new(ContextWindow::default());
        // Context distance 1 from "is the | please": "is a | please".
        m.insert(
            ContextKey {
                slot_type: "poi_type".into(),
                left: toks("is a"),
                right: toks("please"),
            },
            toks("cafe"),
        );
        // Context distance 3: "find | now here".
        m.insert(
            ContextKey {
                slot_type: "poi_type".into(),
                left: toks("find"),
                right: toks("now here"),
            },
            toks("garage"),
        );
        let d = DelexUtterance::from_tokens(toks("where is the <poi_type> please"));
        let key = ContextKey::at(d.tokens(), 3, "poi_type", m.window());
        assert_eq!(key.context(), vec!["is", "the", "please"]);
        let r = realise(&d, &m, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(r.tokens()[3], "cafe");
    }

    #[test]
    fn fallback_ties_use_serialized_order() {
        let mut m = SlotValueMap::new(ContextWindow::default());
        for (left, v) in [("b", "second"), ("a", "first")] {
            m.insert(
                ContextKey {
                    slot_type: "x".into(),
                    left: toks(left),
                    right: vec![],
                },
                toks(v),
            );
        }
        let d = DelexUtterance::from_tokens(toks("z <x>"));
        let r = realise(&d, &m, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r.tokens()[1], "first");
    }

    #[test]
    fn multi_token_values_expand_to_bio() {
        let u = utt("to/O new/B-city york/I-city city/I-city");
        let m = build_slot_value_map(&Corpus::new(vec![u.clone()]));
        let r = realise(&delexicalise(&u).0, &m, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r, u);
    }

    #[test]
    fn tsv_roundtrip_is_sorted() {
        let c = Corpus::new(vec![
            utt("to/O boston/B-city"),
            utt("to/O denver/B-city"),
            utt("from/O new/B-city york/I-city"),
        ]);
        let m = build_slot_value_map(&c);
        let text = m.to_tsv();
        let lines: Vec<&str> = text.lines().collect();
        let mut sorted = lines.clone();
        sorted.sort();
        assert_eq!(lines, sorted);
        assert_eq!(lines.len(), 3);
        assert_eq!(SlotValueMap::from_tsv(&text, m.window()).unwrap(), m);
        assert!(SlotValueMap::from_tsv("city\tto\n", m.window()).is_err());
    }

    #[test]
    fn placeholder_shapes() {
        assert_eq!(placeholder_type("<city>"), Some("city"));
        assert_eq!(placeholder_type("<>"), None);
        assert_eq!(placeholder_type("city"), None);
    }
}
