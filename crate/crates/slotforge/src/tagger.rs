//! BiLSTM slot tagger with per-token softmax and argmax decoding.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError, TAGGER_MAGIC};
use crate::corpus::{Corpus, SlotTag, Utterance};
use crate::eval::{chunk_prf, ChunkMetrics};
use crate::nn::{
    argmax, axpy, clip_grad_norm, dropout_mask, log_softmax, matvec_add, matvec_t_add, outer_add, Adam, LstmLayer,
    LstmStep, ParamSet,
};

pub const UNK_WORD: &str = "<unk>";

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("invalid tagger config: {0}")]
    Config(String),
    #[error("empty training corpus")]
    NoTrainingData,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("{path} line {line}: {message}")]
    Vectors { path: String, line: usize, message: String },
    #[error("invalid checkpoint contents: {0}")]
    Contents(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaggerConfig {
    pub embed_size: usize,
    /// Per direction.
    pub hidden_size: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop after this many epochs without a dev F1 improvement.
    pub patience: usize,
    /// Early stopping never triggers before this epoch.
    pub min_epochs: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub pretrained_vectors_path: Option<PathBuf>,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            embed_size: 100,
            hidden_size: 100,
            dropout: 0.0,
            batch_size: 16,
            learning_rate: 0.001,
            max_epochs: 100,
            patience: 10,
            min_epochs: 30,
            clip_norm: 5.0,
            seed: 1,
            pretrained_vectors_path: None,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<(), TaggerError> {
        if self.embed_size == 0 || self.hidden_size == 0 || self.batch_size == 0 {
            return Err(TaggerError::Config("sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TaggerError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TaggerError::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Reads a text vector file: one word per line followed by its components.
pub fn load_word_vectors(path: &Path, dim: usize) -> Result<HashMap<String, Vec<f64>>, TaggerError> {
    let text = std::fs::read_to_string(path).map_err(|source| TaggerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut vectors = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let err = |message: String| TaggerError::Vectors {
            path: path.display().to_string(),
            line: idx + 1,
            message,
        };
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|e| err(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != dim {
            return Err(TaggerError::Config(format!(
                "vector for {word:?} has dimension {}, embed_size is {dim}",
                values.len()
            )));
        }
        vectors.insert(word.to_string(), values);
    }
    Ok(vectors)
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embed: usize,
    fwd: LstmLayer,
    bwd: LstmLayer,
    out_w: usize,
    out_b: usize,
}

fn layout(config: &TaggerConfig, words: usize, tags: usize) -> (ParamSet, Layout) {
    let mut p = ParamSet::new();
    let (e, h) = (config.embed_size, config.hidden_size);
    let embed = p.add("embed", vec![words, e]);
    let fwd = LstmLayer::register(&mut p, "fwd", e, h);
    let bwd = LstmLayer::register(&mut p, "bwd", e, h);
    let out_w = p.add("out.w", vec![tags, 2 * h]);
    let out_b = p.add("out.b", vec![tags]);
    (
        p,
        Layout {
            embed,
            fwd,
            bwd,
            out_w,
            out_b,
        },
    )
}

struct Masks {
    embed: Vec<Vec<f64>>,
    output: Vec<Vec<f64>>,
}

struct Trace {
    fwd: Vec<LstmStep>,
    /// Processing order, i.e. reversed positions.
    bwd: Vec<LstmStep>,
    features: Vec<Vec<f64>>,
    log_probs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggerEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaggerLog {
    pub epochs: Vec<TaggerEpoch>,
    pub best_epoch: usize,
}

/// 1-based epoch with the highest score; the earliest wins ties.
pub fn select_best_epoch(scores: &[f64]) -> Option<usize> {
    if scores.is_empty() {
        return None;
    }
    Some(argmax(scores) + 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tagger {
    pub config: TaggerConfig,
    words: Vec<String>,
    word_index: HashMap<String, usize>,
    tags: Vec<SlotTag>,
    pub params: ParamSet,
    layout: Layout,
}

impl Tagger {
    /// Fresh parameters over the training words and the tags of `train` and `dev`.
    pub fn new(config: &TaggerConfig, train: &Corpus, dev: &Corpus) -> Result<Self, TaggerError> {
        config.validate()?;
        let mut words: Vec<String> = train.iter().flat_map(|u| u.tokens().iter().cloned()).collect();
        words.sort();
        words.dedup();
        words.retain(|w| w != UNK_WORD);
        words.insert(0, UNK_WORD.to_string());
        let mut tags: Vec<SlotTag> = train
            .iter()
            .chain(dev.iter())
            .flat_map(|u| u.tags().iter().cloned())
            .chain(std::iter::once(SlotTag::Outside))
            .collect();
        tags.sort();
        tags.dedup();

        let mut tagger = Self::from_parts(config.clone(), words, tags)?;
        tagger
            .params
            .init_uniform(&mut ChaCha8Rng::seed_from_u64(config.seed), 0.1);
        if let Some(path) = &config.pretrained_vectors_path {
            let vectors = load_word_vectors(path, config.embed_size)?;
            let e = config.embed_size;
            let table = tagger.params.get_mut(tagger.layout.embed);
            for (i, w) in tagger.words.iter().enumerate() {
                if let Some(v) = vectors.get(w) {
                    for (dst, &src) in table[i * e..(i + 1) * e].iter_mut().zip(v) {
                        *dst = src as f32 as f64;
                    }
                }
            }
        }
        Ok(tagger)
    }

    fn from_parts(config: TaggerConfig, words: Vec<String>, tags: Vec<SlotTag>) -> Result<Self, TaggerError> {
        if words.first().map(String::as_str) != Some(UNK_WORD) {
            return Err(TaggerError::Contents(
                "word list must start with the unknown word".into(),
            ));
        }
        if tags.is_empty() {
            return Err(TaggerError::Contents("empty tag list".into()));
        }
        let word_index: HashMap<String, usize> = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if word_index.len() != words.len() {
            return Err(TaggerError::Contents("duplicate words".into()));
        }
        let (params, layout) = layout(&config, words.len(), tags.len());
        Ok(Tagger {
            config,
            words,
            word_index,
            tags,
            params,
            layout,
        })
    }

    pub fn tag_set(&self) -> &[SlotTag] {
        &self.tags
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.words
    }

    fn word_id(&self, w: &str) -> usize {
        self.word_index.get(w).copied().unwrap_or(0)
    }

    fn tag_id(&self, t: &SlotTag) -> Option<usize> {
        self.tags.binary_search(t).ok()
    }

    fn run(&self, ids: &[usize], masks: Option<&Masks>) -> Trace {
        let p = &self.params;
        let (e, h) = (self.config.embed_size, self.config.hidden_size);
        let n = ids.len();
        let table = p.get(self.layout.embed);
        let inputs: Vec<Vec<f64>> = ids
            .iter()
            .enumerate()
            .map(|(t, &id)| {
                let mut x = table[id * e..(id + 1) * e].to_vec();
                if let Some(m) = masks {
                    x.iter_mut().zip(&m.embed[t]).for_each(|(v, k)| *v *= k);
                }
                x
            })
            .collect();
        let run_dir = |layer: &LstmLayer, rev: bool| {
            let mut hs = vec![0.0; h];
            let mut cs = vec![0.0; h];
            let mut steps = Vec::with_capacity(n);
            for k in 0..n {
                let t = if rev { n - 1 - k } else { k };
                let s = layer.step(p, &inputs[t], &hs, &cs);
                hs.clone_from(&s.h);
                cs.clone_from(&s.c);
                steps.push(s);
            }
            steps
        };
        let fwd = run_dir(&self.layout.fwd, false);
        let bwd = run_dir(&self.layout.bwd, true);
        let mut features = Vec::with_capacity(n);
        let mut log_probs = Vec::with_capacity(n);
        for t in 0..n {
            let mut r = fwd[t].h.clone();
            r.extend_from_slice(&bwd[n - 1 - t].h);
            if let Some(m) = masks {
                r.iter_mut().zip(&m.output[t]).for_each(|(v, k)| *v *= k);
            }
            let mut logits = p.get(self.layout.out_b).to_vec();
            matvec_add(p.get(self.layout.out_w), &r, &mut logits);
            log_probs.push(log_softmax(&logits));
            features.push(r);
        }
        Trace {
            fwd,
            bwd,
            features,
            log_probs,
        }
    }

    fn backward(&self, ids: &[usize], gold: &[usize], tr: &Trace, masks: Option<&Masks>, scale: f64, g: &mut ParamSet) {
        let p = &self.params;
        let lay = &self.layout;
        let (e, h) = (self.config.embed_size, self.config.hidden_size);
        let n = ids.len();
        let mut d_fwd = vec![vec![0.0; h]; n];
        let mut d_bwd = vec![vec![0.0; h]; n];
        for t in 0..n {
            let mut d_logits: Vec<f64> = tr.log_probs[t].iter().map(|lp| lp.exp() * scale).collect();
            d_logits[gold[t]] -= scale;
            outer_add(g.get_mut(lay.out_w), &d_logits, &tr.features[t]);
            axpy(1.0, &d_logits, g.get_mut(lay.out_b));
            let mut dr = vec![0.0; 2 * h];
            matvec_t_add(p.get(lay.out_w), &d_logits, &mut dr);
            if let Some(m) = masks {
                dr.iter_mut().zip(&m.output[t]).for_each(|(v, k)| *v *= k);
            }
            d_fwd[t].copy_from_slice(&dr[..h]);
            d_bwd[t].copy_from_slice(&dr[h..]);
        }
        let mut dx = vec![vec![0.0; e]; n];
        for (layer, steps, d_out, rev) in [(&lay.fwd, &tr.fwd, &d_fwd, false), (&lay.bwd, &tr.bwd, &d_bwd, true)] {
            let mut dh = vec![0.0; h];
            let mut dc = vec![0.0; h];
            for k in (0..n).rev() {
                let t = if rev { n - 1 - k } else { k };
                axpy(1.0, &d_out[t], &mut dh);
                let (d_in, dh_prev, dc_prev) = layer.step_back(p, g, &steps[k], &dh, &dc);
                axpy(1.0, &d_in, &mut dx[t]);
                dh = dh_prev;
                dc = dc_prev;
            }
        }
        let table = g.get_mut(lay.embed);
        for (t, &id) in ids.iter().enumerate() {
            if let Some(m) = masks {
                dx[t].iter_mut().zip(&m.embed[t]).for_each(|(v, k)| *v *= k);
            }
            axpy(1.0, &dx[t], &mut table[id * e..(id + 1) * e]);
        }
    }

    fn encode(&self, u: &Utterance) -> (Vec<usize>, Vec<usize>) {
        let ids = u.tokens().iter().map(|w| self.word_id(w)).collect();
        // Tags outside the tag set can only come from unseen test data.
        let gold = u
            .tags()
            .iter()
            .map(|t| {
                self.tag_id(t)
                    .unwrap_or_else(|| self.tag_id(&SlotTag::Outside).expect("O is in the tag set"))
            })
            .collect();
        (ids, gold)
    }

    fn sample_masks<R: Rng>(&self, rng: &mut R, n: usize) -> Option<Masks> {
        let rate = self.config.dropout;
        if rate <= 0.0 {
            return None;
        }
        Some(Masks {
            embed: (0..n)
                .map(|_| dropout_mask(rng, self.config.embed_size, rate))
                .collect(),
            output: (0..n)
                .map(|_| dropout_mask(rng, 2 * self.config.hidden_size, rate))
                .collect(),
        })
    }

    fn batch_loss<R: Rng>(&self, batch: &[&Utterance], mut rng: Option<&mut R>) -> (f64, usize, ParamSet) {
        let tokens: usize = batch.iter().map(|u| u.len()).sum();
        let scale = 1.0 / tokens as f64;
        let mut grads = self.params.zeros_like();
        let mut sum = 0.0;
        for u in batch {
            let (ids, gold) = self.encode(u);
            let masks = rng.as_deref_mut().and_then(|r| self.sample_masks(r, ids.len()));
            let tr = self.run(&ids, masks.as_ref());
            sum -= gold.iter().enumerate().map(|(t, &y)| tr.log_probs[t][y]).sum::<f64>();
            self.backward(&ids, &gold, &tr, masks.as_ref(), scale, &mut grads);
        }
        (sum, tokens, grads)
    }

    /// Mean per-token cross-entropy and its gradient, without dropout.
    pub fn forward_loss(&self, batch: &[Utterance]) -> (f64, ParamSet) {
        let refs: Vec<&Utterance> = batch.iter().collect();
        let (sum, tokens, grads) = self.batch_loss::<ChaCha8Rng>(&refs, None);
        (sum / tokens as f64, grads)
    }

    /// Per-token tag distributions, in [`Tagger::tag_set`] order.
    pub fn tag_distributions(&self, tokens: &[String]) -> Vec<Vec<f64>> {
        let ids: Vec<usize> = tokens.iter().map(|w| self.word_id(w)).collect();
        self.run(&ids, None)
            .log_probs
            .into_iter()
            .map(|lp| lp.into_iter().map(f64::exp).collect())
            .collect()
    }

    pub fn predict_tags(&self, tokens: &[String]) -> Vec<SlotTag> {
        if tokens.is_empty() {
            return Vec::new();
        }
        let ids: Vec<usize> = tokens.iter().map(|w| self.word_id(w)).collect();
        self.run(&ids, None)
            .log_probs
            .iter()
            .map(|lp| self.tags[argmax(lp)].clone())
            .collect()
    }

    pub fn predict_corpus(&self, c: &Corpus) -> Vec<Vec<SlotTag>> {
        c.iter().map(|u| self.predict_tags(u.tokens())).collect()
    }

    pub fn evaluate(&self, c: &Corpus) -> ChunkMetrics {
        chunk_prf(c, &self.predict_corpus(c)).expect("predictions match corpus shape")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = Map::new();
        meta.insert(
            "config".into(),
            serde_json::to_value(&self.config).expect("config serializes"),
        );
        meta.insert("words".into(), Value::from(self.words.clone()));
        meta.insert(
            "tags".into(),
            Value::from(self.tags.iter().map(ToString::to_string).collect::<Vec<_>>()),
        );
        checkpoint::encode(TAGGER_MAGIC, meta, &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TaggerError> {
        let (mut meta, loaded) = checkpoint::decode(bytes, TAGGER_MAGIC)?;
        let bad = |e: serde_json::Error| TaggerError::Contents(e.to_string());
        let config: TaggerConfig = serde_json::from_value(meta.remove("config").unwrap_or(Value::Null)).map_err(bad)?;
        let words: Vec<String> = serde_json::from_value(meta.remove("words").unwrap_or(Value::Null)).map_err(bad)?;
        let tag_names: Vec<String> = serde_json::from_value(meta.remove("tags").unwrap_or(Value::Null)).map_err(bad)?;
        let tags = tag_names
            .iter()
            .map(|t| t.parse::<SlotTag>().map_err(|e| TaggerError::Contents(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        if !tags.windows(2).all(|w| w[0] < w[1]) {
            return Err(TaggerError::Contents("tag list must be sorted and distinct".into()));
        }
        config.validate()?;
        let mut tagger = Self::from_parts(config, words, tags)?;
        tagger.params = checkpoint::adopt(&tagger.params, loaded)?;
        Ok(tagger)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TaggerError> {
        Ok(checkpoint::write_file(path.as_ref(), &self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaggerError> {
        Self::from_bytes(&checkpoint::read_file(path.as_ref())?)
    }
}

/// Trains one seed; keeps the parameters of the epoch with the best dev
/// chunk F1 (the final epoch when `dev` is empty).
pub fn train_tagger(train: &Corpus, dev: &Corpus, config: &TaggerConfig) -> Result<(Tagger, TaggerLog), TaggerError> {
    if train.is_empty() {
        return Err(TaggerError::NoTrainingData);
    }
    let mut tagger = Tagger::new(config, train, dev)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&tagger.params, config.learning_rate);
    let mut log = TaggerLog::default();
    let mut best: Option<(f64, ParamSet)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut token_count = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Utterance> = chunk.iter().map(|&i| &train.utterances[i]).collect();
            let (sum, tokens, mut grads) = tagger.batch_loss(&batch, Some(&mut rng));
            if !sum.is_finite() || !grads.all_finite() {
                return Err(TaggerError::NonFiniteLoss { epoch });
            }
            loss_sum += sum;
            token_count += tokens;
            clip_grad_norm(&mut grads, config.clip_norm);
            adam.update(&mut tagger.params, &grads);
        }
        let dev_f1 = (!dev.is_empty()).then(|| tagger.evaluate(dev).f1);
        log.epochs.push(TaggerEpoch {
            epoch,
            train_loss: loss_sum / token_count as f64,
            dev_f1,
        });
        log::debug!(
            "tagger epoch {epoch}: loss {:.4} dev f1 {dev_f1:?}",
            loss_sum / token_count as f64
        );
        match dev_f1 {
            Some(f1) => {
                if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                    best = Some((f1, tagger.params.clone()));
                    log.best_epoch = epoch;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if config.patience > 0 && since_best >= config.patience && epoch >= config.min_epochs {
                        break;
                    }
                }
            }
            None => log.best_epoch = epoch,
        }
    }
    if let Some((_, params)) = best {
        tagger.params = params;
    }
    Ok((tagger, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_conll;

    fn small() -> TaggerConfig {
        TaggerConfig {
            embed_size: 8,
            hidden_size: 8,
            max_epochs: 5,
            ..Default::default()
        }
    }

    fn corpus(text: &str) -> Corpus {
        parse_conll(text).unwrap()
    }

    #[test]
    fn best_epoch_rule() {
        assert_eq!(select_best_epoch(&[50.0, 70.0, 65.0]), Some(2));
        assert_eq!(select_best_epoch(&[70.0, 70.0]), Some(1));
        assert_eq!(select_best_epoch(&[]), None);
    }

    #[test]
    fn config_validation() {
        assert!(TaggerConfig {
            dropout: 1.0,
            ..small()
        }
        .validate()
        .is_err());
        assert!(TaggerConfig {
            hidden_size: 0,
            ..small()
        }
        .validate()
        .is_err());
        for d in [0.0, 0.1, 0.2] {
            assert!(TaggerConfig { dropout: d, ..small() }.validate().is_ok());
        }
    }

    #[test]
    fn predictions_have_input_length_and_known_tags() {
        let train = corpus("to O\nboston B-city\n\nfrom O\nnew B-city\nyork I-city\n");
        let t = Tagger::new(&small(), &train, &Corpus::default()).unwrap();
        for n in 1..6 {
            let toks: Vec<String> = (0..n).map(|i| format!("zz{i}")).collect();
            let tags = t.predict_tags(&toks);
            assert_eq!(tags.len(), n);
            assert!(tags.iter().all(|tag| t.tag_set().contains(tag)));
        }
        for dist in t.tag_distributions(&["to".into(), "boston".into()]) {
            assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn vectors_initialise_embeddings() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        std::fs::write(&path, "boston 0.5 0.25\nzzz 1 1\n").unwrap();
        let train = corpus("to O\nboston B-city\n");
        let cfg = TaggerConfig {
            embed_size: 2,
            hidden_size: 2,
            pretrained_vectors_path: Some(path.clone()),
            ..small()
        };
        let t = Tagger::new(&cfg, &train, &Corpus::default()).unwrap();
        let i = t.word_id("boston");
        assert_eq!(&t.params.get(t.layout.embed)[i * 2..i * 2 + 2], &[0.5, 0.25]);

        let bad = TaggerConfig { embed_size: 3, ..cfg };
        assert!(matches!(
            Tagger::new(&bad, &train, &Corpus::default()),
            Err(TaggerError::Config(_))
        ));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let train = corpus("to O\nboston B-city\n");
        let dev = corpus("at O\nnoon B-time\n");
        let t = Tagger::new(&small(), &train, &dev).unwrap();
        let back = Tagger::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(back, t);
        let mut bytes = t.to_bytes();
        bytes[0] = b'X';
        assert!(Tagger::from_bytes(&bytes).is_err());
    }

    #[test]
    fn deterministic_training() {
        let train = corpus("to O\nboston B-city\n\nfrom O\ndenver B-city\n");
        let cfg = TaggerConfig {
            dropout: 0.2,
            ..small()
        };
        let (a, la) = train_tagger(&train, &train, &cfg).unwrap();
        let (b, lb) = train_tagger(&train, &train, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(la, lb);
    }
}
