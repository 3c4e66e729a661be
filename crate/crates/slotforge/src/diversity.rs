//! Diversity scoring between delexicalised utterances, within-cluster ranking
//! and construction of the rank-conditioned translation pairs.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{cluster_by_frame, Clusters, Corpus, SemanticFrame};
use crate::delex::{delexicalise, DelexUtterance};

#[derive(Debug, Error)]
pub enum DiversityError {
    #[error("length penalty is undefined for an empty source")]
    EmptySource,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Unit-cost Levenshtein distance over arbitrary token sequences.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Whether distances are measured over tokens or over the characters of the
/// space-joined utterance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DistanceLevel {
    #[default]
    Token,
    Character,
}

impl DistanceLevel {
    pub fn distance<S: AsRef<str> + PartialEq>(self, a: &[S], b: &[S]) -> usize {
        match self {
            DistanceLevel::Token => edit_distance(a, b),
            DistanceLevel::Character => {
                let join = |s: &[S]| {
                    s.iter()
                        .map(AsRef::as_ref)
                        .collect::<Vec<_>>()
                        .join(" ")
                        .chars()
                        .collect::<Vec<char>>()
                };
                edit_distance(&join(a), &join(b))
            }
        }
    }
}

/// Length difference penalty, normalised by the length of `source`.
pub fn ldp<T>(source: &[T], other: &[T]) -> Result<f64, DiversityError> {
    if source.is_empty() {
        return Err(DiversityError::EmptySource);
    }
    let diff = source.len().abs_diff(other.len()) as f64;
    Ok((-diff / source.len() as f64).exp())
}

/// Edit distance damped by the length difference penalty.
pub fn diversity_score<T: PartialEq>(source: &[T], other: &[T]) -> Result<f64, DiversityError> {
    Ok(edit_distance(source, other) as f64 * ldp(source, other)?)
}

fn score_with(level: DistanceLevel, source: &[String], other: &[String]) -> f64 {
    // Callers guarantee a non-empty source.
    level.distance(source, other) as f64 * ldp(source, other).unwrap_or(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedAlternative {
    pub target: DelexUtterance,
    pub score: f64,
    /// 1 = most diverse.
    pub rank: usize,
    /// Position of the target in the input cluster.
    pub position: usize,
}

pub fn rank_alternatives(u: &DelexUtterance, cluster: &[DelexUtterance]) -> Vec<RankedAlternative> {
    rank_alternatives_with(u, cluster, DistanceLevel::Token)
}

/// Sorted by score descending; ties fall back to target tokens, then cluster
/// position.
pub fn rank_alternatives_with(
    u: &DelexUtterance,
    cluster: &[DelexUtterance],
    level: DistanceLevel,
) -> Vec<RankedAlternative> {
    let mut scored: Vec<(f64, usize)> = cluster
        .iter()
        .enumerate()
        .map(|(i, d)| (score_with(level, u.tokens(), d.tokens()), i))
        .collect();
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| cluster[a.1].tokens().cmp(cluster[b.1].tokens()))
            .then_with(|| a.1.cmp(&b.1))
    });
    scored
        .into_iter()
        .enumerate()
        .map(|(r, (score, position))| RankedAlternative {
            target: cluster[position].clone(),
            score,
            rank: r + 1,
            position,
        })
        .collect()
}

pub fn rank_token(rank: usize) -> String {
    format!("#{rank}")
}

pub fn parse_rank_token(tok: &str) -> Option<usize> {
    let digits = tok.strip_prefix('#')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok().filter(|&k| k > 0)
}

/// A generator training example: delexicalised source ending in a rank token,
/// and its delexicalised target.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TranslationPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl TranslationPair {
    pub fn new(source: &DelexUtterance, rank: usize, target: &DelexUtterance) -> Self {
        let mut src = source.tokens().to_vec();
        src.push(rank_token(rank));
        TranslationPair {
            source: src,
            target: target.tokens().to_vec(),
        }
    }

    pub fn rank(&self) -> Option<usize> {
        self.source.last().and_then(|t| parse_rank_token(t))
    }
}

impl fmt::Display for TranslationPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", self.source.join(" "), self.target.join(" "))
    }
}

/// Switches for the ablations of pair construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairOptions {
    /// Keep only the most diverse half of each source's alternatives.
    pub filter: bool,
    /// Emit the real rank token; otherwise every source carries `#1`.
    pub ranks: bool,
    pub level: DistanceLevel,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions {
            filter: true,
            ranks: true,
            level: DistanceLevel::Token,
        }
    }
}

/// Number of alternatives each member of a `k`-sized cluster keeps.
pub fn kept_alternatives(cluster_size: usize) -> usize {
    cluster_size.saturating_sub(1).div_ceil(2)
}

/// Pairs in construction order, before deduplication.
pub fn candidate_pairs(c: &Corpus, opts: PairOptions) -> Vec<TranslationPair> {
    let delex: Vec<DelexUtterance> = c.utterances.iter().map(|u| delexicalise(u).0).collect();
    let clusters = cluster_by_frame(c);
    let mut pairs = Vec::new();
    for members in clusters.values() {
        if members.len() < 2 {
            continue;
        }
        let keep = if opts.filter {
            kept_alternatives(members.len())
        } else {
            members.len() - 1
        };
        for &i in members {
            let others: Vec<DelexUtterance> = members.iter().filter(|&&j| j != i).map(|&j| delex[j].clone()).collect();
            for alt in rank_alternatives_with(&delex[i], &others, opts.level)
                .into_iter()
                .take(keep)
            {
                let rank = if opts.ranks { alt.rank } else { 1 };
                pairs.push(TranslationPair::new(&delex[i], rank, &alt.target));
            }
        }
    }
    pairs
}

/// Deduplicates on the whole pair, keeping first occurrences.
pub fn dedup_pairs(pairs: Vec<TranslationPair>) -> Vec<TranslationPair> {
    let mut seen = HashSet::new();
    pairs.into_iter().filter(|p| seen.insert(p.clone())).collect()
}

pub fn build_training_pairs(c: &Corpus) -> Vec<TranslationPair> {
    build_training_pairs_with(c, PairOptions::default())
}

pub fn build_training_pairs_with(c: &Corpus, opts: PairOptions) -> Vec<TranslationPair> {
    dedup_pairs(candidate_pairs(c, opts))
}

/// Rank requests `1..=max(1, K/2)` for a frame whose cluster has K members.
pub fn augmentation_ranks(frame: &SemanticFrame, clusters: &Clusters) -> Vec<usize> {
    match clusters.get(frame) {
        Some(members) if !members.is_empty() => (1..=(members.len() / 2).max(1)).collect(),
        _ => Vec::new(),
    }
}

pub fn write_pairs(pairs: &[TranslationPair]) -> String {
    pairs.iter().map(|p| format!("{p}\n")).collect()
}

pub fn parse_pairs(text: &str) -> Result<Vec<TranslationPair>, DiversityError> {
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: &str| DiversityError::Parse {
            line: idx + 1,
            message: message.to_string(),
        };
        let (src, tgt) = line.split_once('\t').ok_or_else(|| err("missing tab"))?;
        let source: Vec<String> = src.split_whitespace().map(String::from).collect();
        let target: Vec<String> = tgt.split_whitespace().map(String::from).collect();
        if source.len() < 2 || target.is_empty() {
            return Err(err("empty source or target"));
        }
        let pair = TranslationPair { source, target };
        if pair.rank().is_none() {
            return Err(err("source must end with a rank token"));
        }
        if pair.source[..pair.source.len() - 1]
            .iter()
            .chain(&pair.target)
            .any(|t| parse_rank_token(t).is_some())
        {
            return Err(err("stray rank token"));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<TranslationPair>, DiversityError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DiversityError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pairs(&text)
}
