//! Chunk-level precision, recall and F1 with conlleval semantics, plus
//! diagnostics for augmented data.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{chunk_spans, Corpus, SlotTag};
use crate::delex::DelexUtterance;
use crate::diversity::edit_distance;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{predicted} predicted sequences for {gold} gold utterances")]
    CountMismatch { gold: usize, predicted: usize },
    #[error("utterance {index}: {predicted} predicted tags for {gold} tokens")]
    LengthMismatch {
        index: usize,
        gold: usize,
        predicted: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Chunk {
    pub slot_type: String,
    pub start: usize,
    pub end: usize,
}

pub fn extract_chunks(tags: &[SlotTag]) -> BTreeSet<Chunk> {
    chunk_spans(tags)
        .into_iter()
        .map(|(slot_type, start, end)| Chunk { slot_type, start, end })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChunkMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl ChunkMetrics {
    pub fn from_counts(gold: usize, predicted: usize, correct: usize) -> Self {
        let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
        let precision = pct(correct, predicted);
        let recall = pct(correct, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ChunkMetrics {
            precision,
            recall,
            f1,
            gold,
            predicted,
            correct,
        }
    }
}

/// Micro-averaged chunk scores over all utterances.
pub fn chunk_prf(gold: &Corpus, predicted: &[Vec<SlotTag>]) -> Result<ChunkMetrics, EvalError> {
    if gold.len() != predicted.len() {
        return Err(EvalError::CountMismatch {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    let (mut n_gold, mut n_pred, mut n_correct) = (0, 0, 0);
    for (index, (u, pred)) in gold.utterances.iter().zip(predicted).enumerate() {
        if u.len() != pred.len() {
            return Err(EvalError::LengthMismatch {
                index,
                gold: u.len(),
                predicted: pred.len(),
            });
        }
        let g = extract_chunks(u.tags());
        let p = extract_chunks(pred);
        n_gold += g.len();
        n_pred += p.len();
        n_correct += g.intersection(&p).count();
    }
    Ok(ChunkMetrics::from_counts(n_gold, n_pred, n_correct))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationStats {
    /// Distinct generated delexicalised utterances absent from training.
    pub num_new_delex: usize,
    /// Mean over sources of the largest edit distance between a source and
    /// its generations.
    pub avg_max_edit_distance: f64,
}

pub fn augmentation_stats(
    train_delex: &HashSet<DelexUtterance>,
    generated: &BTreeMap<DelexUtterance, Vec<DelexUtterance>>,
) -> AugmentationStats {
    let distinct: HashSet<&DelexUtterance> = generated.values().flatten().collect();
    let num_new_delex = distinct.iter().filter(|g| !train_delex.contains(**g)).count();
    let maxima: Vec<usize> = generated
        .iter()
        .filter(|(_, gens)| !gens.is_empty())
        .map(|(src, gens)| {
            gens.iter()
                .map(|g| edit_distance(src.tokens(), g.tokens()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let avg_max_edit_distance = if maxima.is_empty() {
        0.0
    } else {
        maxima.iter().sum::<usize>() as f64 / maxima.len() as f64
    };
    AugmentationStats {
        num_new_delex,
        avg_max_edit_distance,
    }
}

/// Ordered `metric -> value` report, rendered as TSV or JSON.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    entries: Vec<(String, serde_json::Value)>,
}

impl MetricsReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Into<serde_json::Value>) {
        self.entries.push((key.into(), value.into()));
    }

    pub fn push_metrics(&mut self, prefix: &str, m: &ChunkMetrics) {
        self.push(format!("{prefix}.precision"), m.precision);
        self.push(format!("{prefix}.recall"), m.recall);
        self.push(format!("{prefix}.f1"), m.f1);
        self.push(format!("{prefix}.gold_chunks"), m.gold);
        self.push(format!("{prefix}.predicted_chunks"), m.predicted);
        self.push(format!("{prefix}.correct_chunks"), m.correct);
    }

    pub fn get(&self, key: &str) -> Option<&serde_json::Value> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(serde_json::Value::as_f64)
    }

    pub fn entries(&self) -> &[(String, serde_json::Value)] {
        &self.entries
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| match v {
                serde_json::Value::String(s) => format!("{k}\t{s}\n"),
                other => format!("{k}\t{other}\n"),
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let map: serde_json::Map<String, serde_json::Value> = self.entries.iter().cloned().collect();
        let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("report serializes");
        s.push('\n');
        s
    }
}
