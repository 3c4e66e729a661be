//! Rank-conditioned attentional encoder-decoder over delexicalised tokens.
//!
//! The encoder is a stack of LSTM layers (optionally bidirectional). The
//! decoder is an LSTM stack with input feeding: each step consumes the target
//! embedding concatenated with the previous attentional state. Attention uses
//! bilinear ("general") or dot scoring over the top encoder layer, and the
//! attentional state is `tanh(W_c [context; h])`.
//!
//! Gradients are computed by hand; `tests/gradcheck.rs` compares them with
//! central finite differences.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError, GENERATOR_MAGIC};
use crate::diversity::{parse_rank_token, TranslationPair};
use crate::nn::{
    axpy, clip_grad_norm, dot, log_softmax, matvec_add, matvec_t_add, outer_add, softmax, Adam, LstmLayer, LstmStep,
    ParamSet,
};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("no training pairs")]
    NoTrainingData,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid vocabulary: {0}")]
    Vocab(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Token/id bijection shared by source and target sides. Ids 0..4 are
/// reserved for padding, begin, end and unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl GenVocab {
    /// Reserved entries followed by the distinct input tokens in sorted order.
    pub fn from_tokens<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut words: Vec<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().to_string())
            .filter(|t| !RESERVED.contains(&t.as_str()))
            .collect();
        words.sort();
        words.dedup();
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).chain(words).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        GenVocab { tokens, index }
    }

    pub fn build(pairs: &[TranslationPair]) -> Self {
        Self::from_tokens(pairs.iter().flat_map(|p| p.source.iter().chain(&p.target)))
    }

    fn from_list(tokens: Vec<String>) -> Result<Self, GenError> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(GenError::Vocab("reserved entries missing".into()));
        }
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(GenError::Vocab("duplicate tokens".into()));
        }
        Ok(GenVocab { tokens, index })
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Highest `#k` rank token in the vocabulary.
    pub fn max_rank(&self) -> Option<usize> {
        self.tokens.iter().filter_map(|t| parse_rank_token(t)).max()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionScore {
    #[default]
    General,
    Dot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub embed_size: usize,
    /// Longer sources keep their first `max_source_len - 1` tokens plus the
    /// rank token; longer targets are cut.
    pub max_source_len: usize,
    pub beam_size: usize,
    pub learning_rate: f64,
    pub lr_halving: bool,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub bidirectional: bool,
    pub attention: AttentionScore,
    /// Overrides the `2 * source + 5` decode cap.
    pub max_decode_len: Option<usize>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_layers: 2,
            hidden_size: 64,
            embed_size: 32,
            max_source_len: 50,
            beam_size: 10,
            learning_rate: 0.001,
            lr_halving: true,
            max_epochs: 30,
            batch_size: 16,
            clip_norm: 5.0,
            seed: 1,
            bidirectional: false,
            attention: AttentionScore::General,
            max_decode_len: None,
        }
    }
}

impl GenConfig {
    /// 500-unit embeddings and hidden states.
    pub fn full_scale() -> Self {
        GenConfig {
            hidden_size: 500,
            embed_size: 500,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let positive = [
            ("num_layers", self.num_layers),
            ("hidden_size", self.hidden_size),
            ("embed_size", self.embed_size),
            ("beam_size", self.beam_size),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(GenError::Config(format!("{name} must be positive")));
        }
        if self.max_source_len < 2 {
            return Err(GenError::Config("max_source_len must be at least 2".into()));
        }
        if self.bidirectional && !self.hidden_size.is_multiple_of(2) {
            return Err(GenError::Config(
                "bidirectional encoder needs an even hidden_size".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GenError::Config("learning_rate must be positive".into()));
        }
        if self.max_decode_len == Some(0) {
            return Err(GenError::Config("max_decode_len must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    src_embed: usize,
    tgt_embed: usize,
    /// `[layer][direction]`.
    encoder: Vec<Vec<LstmLayer>>,
    decoder: Vec<LstmLayer>,
    attn: Option<usize>,
    combine: usize,
    out_w: usize,
    out_b: usize,
}

fn layout(config: &GenConfig, vocab_size: usize) -> (ParamSet, Layout) {
    let mut p = ParamSet::new();
    let h = config.hidden_size;
    let e = config.embed_size;
    let dirs = if config.bidirectional { 2 } else { 1 };
    let enc_h = h / dirs;
    let src_embed = p.add("src_embed", vec![vocab_size, e]);
    let tgt_embed = p.add("tgt_embed", vec![vocab_size, e]);
    let encoder = (0..config.num_layers)
        .map(|l| {
            let input = if l == 0 { e } else { h };
            (0..dirs)
                .map(|d| {
                    let name = if d == 0 { "fwd" } else { "bwd" };
                    LstmLayer::register(&mut p, &format!("enc.l{l}.{name}"), input, enc_h)
                })
                .collect()
        })
        .collect();
    let decoder = (0..config.num_layers)
        .map(|l| {
            let input = if l == 0 { e + h } else { h };
            LstmLayer::register(&mut p, &format!("dec.l{l}"), input, h)
        })
        .collect();
    let attn = match config.attention {
        AttentionScore::General => Some(p.add("attn.w", vec![h, h])),
        AttentionScore::Dot => None,
    };
    let combine = p.add("attn.combine", vec![h, 2 * h]);
    let out_w = p.add("out.w", vec![vocab_size, h]);
    let out_b = p.add("out.b", vec![vocab_size]);
    (
        p,
        Layout {
            src_embed,
            tgt_embed,
            encoder,
            decoder,
            attn,
            combine,
            out_w,
            out_b,
        },
    )
}

/// Encoder activations kept for attention and the backward pass.
struct Encoded {
    /// `[layer][direction][k]` in processing order.
    steps: Vec<Vec<Vec<LstmStep>>>,
    /// Top-layer state per source position.
    memory: Vec<Vec<f64>>,
    /// Attention keys per source position (`W_a m_j`, or `m_j` for dot).
    keys: Vec<Vec<f64>>,
    init_h: Vec<Vec<f64>>,
    init_c: Vec<Vec<f64>>,
}

struct DecStep {
    token: usize,
    layers: Vec<LstmStep>,
    attn: Vec<f64>,
    /// `[context; h_top]`.
    combined: Vec<f64>,
    htilde: Vec<f64>,
    log_probs: Vec<f64>,
}

#[derive(Clone)]
struct DecState {
    h: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    feed: Vec<f64>,
}

impl DecState {
    fn after(step: &DecStep) -> Self {
        DecState {
            h: step.layers.iter().map(|s| s.h.clone()).collect(),
            c: step.layers.iter().map(|s| s.c.clone()).collect(),
            feed: step.htilde.clone(),
        }
    }
}

/// A finished or force-completed decode.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Emitted ids, ending in [`EOS`] when `finished`.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// Attention over source positions for each emitted token.
    pub attention: Vec<Vec<f64>>,
    pub finished: bool,
}

impl Hypothesis {
    /// Emitted ids without the end marker.
    pub fn output(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// Replaces each unknown output token by the source token with the highest
/// attention at that step. The trailing rank token is never chosen; ties go
/// to the leftmost position.
pub fn unk_replace(hyp: &Hypothesis, source: &[String], vocab: &GenVocab) -> Vec<String> {
    let eligible = if source.last().and_then(|t| parse_rank_token(t)).is_some() {
        source.len() - 1
    } else {
        source.len()
    };
    hyp.output()
        .iter()
        .enumerate()
        .map(|(t, &id)| {
            if id != UNK || eligible == 0 {
                return vocab.token(id).to_string();
            }
            let weights = &hyp.attention[t][..eligible];
            let mut best = 0;
            for (j, &w) in weights.iter().enumerate() {
                if w > weights[best] {
                    best = j;
                }
            }
            source[best].clone()
        })
        .collect()
}

/// `exp` of the mean negative log-probability.
pub fn perplexity_from_log_probs(log_probs: &[f64]) -> f64 {
    let n = log_probs.len() as f64;
    (-log_probs.iter().sum::<f64>() / n).exp()
}

/// Halves the learning rate whenever dev perplexity fails to improve on the
/// best value so far.
#[derive(Clone, Debug, Default)]
pub struct LrHalving {
    best: Option<f64>,
}

impl LrHalving {
    /// Records an epoch's dev perplexity; true when the rate should halve.
    pub fn observe(&mut self, perplexity: f64) -> bool {
        match self.best {
            Some(best) if perplexity >= best => true,
            _ => {
                self.best = Some(perplexity);
                false
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_perplexity: Option<f64>,
    pub learning_rate: f64,
    pub halved: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// A generator: configuration, vocabulary and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GenConfig,
    pub vocab: GenVocab,
    pub params: ParamSet,
    layout: Layout,
}

/// Uniform `[-0.1, 0.1]` initialisation from the config seed.
pub fn init_params(config: &GenConfig, vocab: &GenVocab) -> Result<Generator, GenError> {
    config.validate()?;
    let (mut params, layout) = layout(config, vocab.len());
    params.init_uniform(&mut ChaCha8Rng::seed_from_u64(config.seed), 0.1);
    Ok(Generator {
        config: config.clone(),
        vocab: vocab.clone(),
        params,
        layout,
    })
}

struct PreparedPair {
    source: Vec<usize>,
    target_in: Vec<usize>,
    target_out: Vec<usize>,
}

impl Generator {
    /// Truncates a source sequence, keeping its final (rank) token.
    pub fn truncate_source(&self, source: &[String]) -> Vec<String> {
        let max = self.config.max_source_len;
        if source.len() <= max {
            return source.to_vec();
        }
        let mut out = source[..max - 1].to_vec();
        out.push(source[source.len() - 1].clone());
        out
    }

    fn prepare(&self, pair: &TranslationPair) -> PreparedPair {
        let source = self
            .truncate_source(&pair.source)
            .iter()
            .map(|t| self.vocab.id(t))
            .collect();
        let target: Vec<usize> = pair
            .target
            .iter()
            .take(self.config.max_source_len)
            .map(|t| self.vocab.id(t))
            .collect();
        let mut target_in = vec![BOS];
        target_in.extend_from_slice(&target);
        let mut target_out = target;
        target_out.push(EOS);
        PreparedPair {
            source,
            target_in,
            target_out,
        }
    }

    fn embed_row(&self, table: usize, id: usize) -> &[f64] {
        let e = self.config.embed_size;
        &self.params.get(table)[id * e..(id + 1) * e]
    }

    fn encode(&self, source: &[usize]) -> Encoded {
        let p = &self.params;
        let n = source.len();
        let mut inputs: Vec<Vec<f64>> = source
            .iter()
            .map(|&id| self.embed_row(self.layout.src_embed, id).to_vec())
            .collect();
        let mut steps = Vec::with_capacity(self.layout.encoder.len());
        let mut init_h = Vec::new();
        let mut init_c = Vec::new();
        for dirs in &self.layout.encoder {
            let mut outputs = vec![Vec::with_capacity(self.config.hidden_size); n];
            let mut layer_steps = Vec::with_capacity(dirs.len());
            let mut final_h = Vec::new();
            let mut final_c = Vec::new();
            for (d, layer) in dirs.iter().enumerate() {
                let mut h = vec![0.0; layer.hidden];
                let mut c = vec![0.0; layer.hidden];
                let mut dir_steps = Vec::with_capacity(n);
                for k in 0..n {
                    let t = if d == 0 { k } else { n - 1 - k };
                    let s = layer.step(p, &inputs[t], &h, &c);
                    h.clone_from(&s.h);
                    c.clone_from(&s.c);
                    dir_steps.push(s);
                }
                // Directions are concatenated in order, forward first.
                for (k, s) in dir_steps.iter().enumerate() {
                    let t = if d == 0 { k } else { n - 1 - k };
                    outputs[t].extend_from_slice(&s.h);
                }
                final_h.extend_from_slice(&h);
                final_c.extend_from_slice(&c);
                layer_steps.push(dir_steps);
            }
            steps.push(layer_steps);
            init_h.push(final_h);
            init_c.push(final_c);
            inputs = outputs;
        }
        let keys = match self.layout.attn {
            Some(w) => inputs
                .iter()
                .map(|m| {
                    let mut k = vec![0.0; self.config.hidden_size];
                    matvec_add(p.get(w), m, &mut k);
                    k
                })
                .collect(),
            None => inputs.clone(),
        };
        Encoded {
            steps,
            memory: inputs,
            keys,
            init_h,
            init_c,
        }
    }

    fn initial_state(&self, enc: &Encoded) -> DecState {
        DecState {
            h: enc.init_h.clone(),
            c: enc.init_c.clone(),
            feed: vec![0.0; self.config.hidden_size],
        }
    }

    fn decode_step(&self, enc: &Encoded, state: &DecState, token: usize) -> DecStep {
        let p = &self.params;
        let h = self.config.hidden_size;
        let mut x = self.embed_row(self.layout.tgt_embed, token).to_vec();
        x.extend_from_slice(&state.feed);
        let mut layers = Vec::with_capacity(self.layout.decoder.len());
        for (l, layer) in self.layout.decoder.iter().enumerate() {
            let s = layer.step(p, &x, &state.h[l], &state.c[l]);
            x.clone_from(&s.h);
            layers.push(s);
        }
        let top = x;
        let scores: Vec<f64> = enc.keys.iter().map(|k| dot(&top, k)).collect();
        let attn = softmax(&scores);
        let mut combined = vec![0.0; 2 * h];
        for (a, m) in attn.iter().zip(&enc.memory) {
            axpy(*a, m, &mut combined[..h]);
        }
        combined[h..].copy_from_slice(&top);
        let mut htilde = vec![0.0; h];
        matvec_add(p.get(self.layout.combine), &combined, &mut htilde);
        for v in &mut htilde {
            *v = v.tanh();
        }
        let mut logits = p.get(self.layout.out_b).to_vec();
        matvec_add(p.get(self.layout.out_w), &htilde, &mut logits);
        DecStep {
            token,
            layers,
            attn,
            combined,
            htilde,
            log_probs: log_softmax(&logits),
        }
    }

    /// Summed negative log-likelihood of one pair; accumulates `scale`-weighted
    /// gradients when `grads` is given.
    fn pair_loss(&self, pair: &PreparedPair, scale: f64, grads: Option<&mut ParamSet>) -> f64 {
        let enc = self.encode(&pair.source);
        let mut state = self.initial_state(&enc);
        let mut steps = Vec::with_capacity(pair.target_in.len());
        let mut loss = 0.0;
        for (&tin, &tout) in pair.target_in.iter().zip(&pair.target_out) {
            let st = self.decode_step(&enc, &state, tin);
            loss -= st.log_probs[tout];
            state = DecState::after(&st);
            steps.push(st);
        }
        if let Some(g) = grads {
            self.backward(pair, &enc, &steps, scale, g);
        }
        loss
    }

    fn backward(&self, pair: &PreparedPair, enc: &Encoded, steps: &[DecStep], scale: f64, g: &mut ParamSet) {
        let p = &self.params;
        let lay = &self.layout;
        let h = self.config.hidden_size;
        let e = self.config.embed_size;
        let n = pair.source.len();
        let nl = lay.decoder.len();

        let mut d_memory = vec![vec![0.0; h]; n];
        let mut d_keys = vec![vec![0.0; h]; n];
        let mut dh_next = vec![vec![0.0; h]; nl];
        let mut dc_next = vec![vec![0.0; h]; nl];
        let mut d_feed = vec![0.0; h];

        for (st, &gold) in steps.iter().zip(&pair.target_out).rev() {
            let mut d_logits: Vec<f64> = st.log_probs.iter().map(|lp| lp.exp() * scale).collect();
            d_logits[gold] -= scale;
            outer_add(g.get_mut(lay.out_w), &d_logits, &st.htilde);
            axpy(1.0, &d_logits, g.get_mut(lay.out_b));

            let mut d_htilde = std::mem::take(&mut d_feed);
            matvec_t_add(p.get(lay.out_w), &d_logits, &mut d_htilde);
            let dz: Vec<f64> = d_htilde
                .iter()
                .zip(&st.htilde)
                .map(|(d, t)| d * (1.0 - t * t))
                .collect();
            outer_add(g.get_mut(lay.combine), &dz, &st.combined);
            let mut d_combined = vec![0.0; 2 * h];
            matvec_t_add(p.get(lay.combine), &dz, &mut d_combined);
            let (d_context, d_top) = d_combined.split_at_mut(h);

            // context = sum_j a_j m_j, a = softmax(top . k_j)
            let d_attn: Vec<f64> = enc.memory.iter().map(|m| dot(d_context, m)).collect();
            let mean = dot(&st.attn, &d_attn);
            let top = &st.combined[h..];
            for j in 0..n {
                axpy(st.attn[j], d_context, &mut d_memory[j]);
                let d_score = st.attn[j] * (d_attn[j] - mean);
                if d_score != 0.0 {
                    axpy(d_score, &enc.keys[j], d_top);
                    axpy(d_score, top, &mut d_keys[j]);
                }
            }

            let mut dh_above = d_top.to_vec();
            for l in (0..nl).rev() {
                axpy(1.0, &dh_next[l], &mut dh_above);
                let (dx, dh_prev, dc_prev) = lay.decoder[l].step_back(p, g, &st.layers[l], &dh_above, &dc_next[l]);
                dh_next[l] = dh_prev;
                dc_next[l] = dc_prev;
                dh_above = dx;
            }
            let row = st.token * e;
            axpy(1.0, &dh_above[..e], &mut g.get_mut(lay.tgt_embed)[row..row + e]);
            d_feed = dh_above[e..].to_vec();
        }

        match lay.attn {
            Some(w) => {
                for j in 0..n {
                    outer_add(g.get_mut(w), &d_keys[j], &enc.memory[j]);
                    matvec_t_add(p.get(w), &d_keys[j], &mut d_memory[j]);
                }
            }
            None => {
                for j in 0..n {
                    axpy(1.0, &d_keys[j], &mut d_memory[j]);
                }
            }
        }

        self.encoder_backward(pair, enc, d_memory, dh_next, dc_next, g);
    }

    fn encoder_backward(
        &self,
        pair: &PreparedPair,
        enc: &Encoded,
        mut d_out: Vec<Vec<f64>>,
        d_final_h: Vec<Vec<f64>>,
        d_final_c: Vec<Vec<f64>>,
        g: &mut ParamSet,
    ) {
        let p = &self.params;
        let n = pair.source.len();
        for (l, dirs) in self.layout.encoder.iter().enumerate().rev() {
            let mut d_in = vec![vec![0.0; dirs[0].input]; n];
            for (d, layer) in dirs.iter().enumerate() {
                let hd = layer.hidden;
                let off = d * hd;
                let mut dh = d_final_h[l][off..off + hd].to_vec();
                let mut dc = d_final_c[l][off..off + hd].to_vec();
                for k in (0..n).rev() {
                    let t = if d == 0 { k } else { n - 1 - k };
                    axpy(1.0, &d_out[t][off..off + hd], &mut dh);
                    let (dx, dh_prev, dc_prev) = layer.step_back(p, g, &enc.steps[l][d][k], &dh, &dc);
                    axpy(1.0, &dx, &mut d_in[t]);
                    dh = dh_prev;
                    dc = dc_prev;
                }
            }
            d_out = d_in;
        }
        let e = self.config.embed_size;
        let table = g.get_mut(self.layout.src_embed);
        for (&id, d) in pair.source.iter().zip(&d_out) {
            axpy(1.0, d, &mut table[id * e..(id + 1) * e]);
        }
    }

    /// Mean per-token cross-entropy of a teacher-forced batch and its gradient.
    pub fn forward_loss(&self, batch: &[TranslationPair]) -> (f64, ParamSet) {
        let refs: Vec<&TranslationPair> = batch.iter().collect();
        let (sum, tokens, grads) = self.batch_loss(&refs);
        (sum / tokens as f64, grads)
    }

    fn batch_loss(&self, batch: &[&TranslationPair]) -> (f64, usize, ParamSet) {
        let prepared: Vec<PreparedPair> = batch.iter().map(|p| self.prepare(p)).collect();
        let tokens: usize = prepared.iter().map(|p| p.target_out.len()).sum();
        let scale = 1.0 / tokens as f64;
        let mut grads = self.params.zeros_like();
        let sum = prepared
            .iter()
            .map(|p| self.pair_loss(p, scale, Some(&mut grads)))
            .sum();
        (sum, tokens, grads)
    }

    /// Mean per-token cross-entropy without gradients.
    pub fn loss(&self, pairs: &[TranslationPair]) -> f64 {
        let (sum, tokens) = self.loss_sum(pairs);
        sum / tokens as f64
    }

    fn loss_sum(&self, pairs: &[TranslationPair]) -> (f64, usize) {
        pairs.iter().fold((0.0, 0), |(s, n), pair| {
            let prepared = self.prepare(pair);
            (s + self.pair_loss(&prepared, 1.0, None), n + prepared.target_out.len())
        })
    }

    /// `exp` of the mean per-token cross-entropy over all target tokens
    /// (including end markers).
    pub fn perplexity(&self, pairs: &[TranslationPair]) -> f64 {
        self.loss(pairs).exp()
    }

    /// Output distribution after teacher-forcing `prefix`, for inspection.
    pub fn next_token_log_probs(&self, source: &[String], prefix: &[usize]) -> Vec<f64> {
        let src = self.source_ids(source);
        let enc = self.encode(&src);
        let mut state = self.initial_state(&enc);
        let mut last = self.decode_step(&enc, &state, BOS);
        for &tok in prefix {
            state = DecState::after(&last);
            last = self.decode_step(&enc, &state, tok);
        }
        last.log_probs
    }

    fn source_ids(&self, source: &[String]) -> Vec<usize> {
        self.truncate_source(source).iter().map(|t| self.vocab.id(t)).collect()
    }

    fn decode_cap(&self, source_len: usize) -> usize {
        self.config.max_decode_len.unwrap_or(2 * source_len + 5)
    }

    /// Ids a decoder may emit.
    fn emittable(id: usize) -> bool {
        id != PAD && id != BOS
    }

    /// Argmax decoding; ties go to the smaller id.
    pub fn greedy_decode(&self, source: &[String]) -> Hypothesis {
        let src = self.source_ids(source);
        let enc = self.encode(&src);
        let mut state = self.initial_state(&enc);
        let mut hyp = Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            attention: Vec::new(),
            finished: false,
        };
        let mut input = BOS;
        for _ in 0..self.decode_cap(src.len()) {
            let st = self.decode_step(&enc, &state, input);
            let mut best = None;
            for (id, &lp) in st.log_probs.iter().enumerate() {
                if Self::emittable(id) && best.is_none_or(|(_, b)| lp > b) {
                    best = Some((id, lp));
                }
            }
            let (id, lp) = best.expect("vocabulary has emittable tokens");
            hyp.tokens.push(id);
            hyp.log_prob += lp;
            hyp.attention.push(st.attn.clone());
            state = DecState::after(&st);
            input = id;
            if id == EOS {
                hyp.finished = true;
                break;
            }
        }
        hyp
    }

    /// Beam search over summed log-probabilities (no length normalisation).
    ///
    /// Finished hypotheses leave the beam and reduce its width, so at most
    /// `beam_size` hypotheses are returned, best first. Hypotheses still open
    /// at the length cap are returned unfinished.
    pub fn beam_search(&self, source: &[String], beam_size: usize) -> Vec<Hypothesis> {
        struct Live {
            hyp: Hypothesis,
            state: DecState,
        }

        let src = self.source_ids(source);
        let enc = self.encode(&src);
        let mut live = vec![Live {
            hyp: Hypothesis {
                tokens: Vec::new(),
                log_prob: 0.0,
                attention: Vec::new(),
                finished: false,
            },
            state: self.initial_state(&enc),
        }];
        let mut done: Vec<Hypothesis> = Vec::new();

        for _ in 0..self.decode_cap(src.len()) {
            let width = beam_size.saturating_sub(done.len());
            if width == 0 || live.is_empty() {
                break;
            }
            let expanded: Vec<DecStep> = live
                .iter()
                .map(|l| {
                    let input = l.hyp.tokens.last().copied().unwrap_or(BOS);
                    self.decode_step(&enc, &l.state, input)
                })
                .collect();
            let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
            for (parent, st) in expanded.iter().enumerate() {
                let mut ids: Vec<usize> = (0..st.log_probs.len()).filter(|&i| Self::emittable(i)).collect();
                ids.sort_by(|&a, &b| st.log_probs[b].total_cmp(&st.log_probs[a]).then(a.cmp(&b)));
                let base = live[parent].hyp.log_prob;
                candidates.extend(
                    ids.into_iter()
                        .take(width)
                        .map(|id| (base + st.log_probs[id], parent, id)),
                );
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            candidates.truncate(width);

            let mut next = Vec::with_capacity(candidates.len());
            for (score, parent, id) in candidates {
                let st = &expanded[parent];
                let mut hyp = live[parent].hyp.clone();
                hyp.tokens.push(id);
                hyp.log_prob = score;
                hyp.attention.push(st.attn.clone());
                if id == EOS {
                    hyp.finished = true;
                    done.push(hyp);
                } else {
                    next.push(Live {
                        hyp,
                        state: DecState::after(st),
                    });
                }
            }
            live = next;
        }
        done.extend(live.into_iter().map(|l| l.hyp));
        done.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob).then_with(|| a.tokens.cmp(&b.tokens)));
        done.truncate(beam_size);
        done
    }

    /// Beam-decodes `source` and returns the `top_m` best outputs with
    /// unknown tokens replaced from the source.
    pub fn generate(&self, source: &[String], top_m: usize) -> Vec<Vec<String>> {
        let truncated = self.truncate_source(source);
        self.beam_search(source, self.config.beam_size)
            .iter()
            .take(top_m)
            .map(|h| unk_replace(h, &truncated, &self.vocab))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = Map::new();
        meta.insert(
            "config".into(),
            serde_json::to_value(&self.config).expect("config serializes"),
        );
        meta.insert("vocab".into(), Value::from(self.vocab.tokens.clone()));
        checkpoint::encode(GENERATOR_MAGIC, meta, &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GenError> {
        let (mut meta, loaded) = checkpoint::decode(bytes, GENERATOR_MAGIC)?;
        let header = |e: serde_json::Error| GenError::Checkpoint(CheckpointError::Header(e.to_string()));
        let config: GenConfig = serde_json::from_value(meta.remove("config").unwrap_or(Value::Null)).map_err(header)?;
        let tokens: Vec<String> =
            serde_json::from_value(meta.remove("vocab").unwrap_or(Value::Null)).map_err(header)?;
        config.validate()?;
        let vocab = GenVocab::from_list(tokens)?;
        let (template, layout) = layout(&config, vocab.len());
        let params = checkpoint::adopt(&template, loaded)?;
        Ok(Generator {
            config,
            vocab,
            params,
            layout,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GenError> {
        Ok(checkpoint::write_file(path.as_ref(), &self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GenError> {
        Self::from_bytes(&checkpoint::read_file(path.as_ref())?)
    }
}

/// Trains with Adam, clipping and per-epoch shuffling; returns the parameters
/// of the epoch with the best dev perplexity (the last epoch without a dev set).
pub fn train_generator(
    pairs: &[TranslationPair],
    dev_pairs: &[TranslationPair],
    config: &GenConfig,
) -> Result<(Generator, TrainingLog), GenError> {
    if pairs.is_empty() {
        return Err(GenError::NoTrainingData);
    }
    let vocab = GenVocab::build(pairs);
    let mut gen = init_params(config, &vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&gen.params, config.learning_rate);
    let mut schedule = LrHalving::default();
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, ParamSet)> = None;
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut token_count = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TranslationPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (sum, tokens, mut grads) = gen.batch_loss(&batch);
            if !sum.is_finite() || !grads.all_finite() {
                return Err(GenError::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += sum;
            token_count += tokens;
            clip_grad_norm(&mut grads, config.clip_norm);
            adam.update(&mut gen.params, &grads);
        }

        let lr_used = adam.learning_rate;
        let mut record = EpochRecord {
            epoch,
            train_loss: loss_sum / token_count as f64,
            dev_perplexity: None,
            learning_rate: lr_used,
            halved: false,
        };
        if !dev_pairs.is_empty() {
            let ppl = gen.perplexity(dev_pairs);
            record.dev_perplexity = Some(ppl);
            if best.as_ref().is_none_or(|(b, _)| ppl < *b) {
                best = Some((ppl, gen.params.clone()));
                log.best_epoch = epoch;
            }
            if schedule.observe(ppl) && config.lr_halving {
                adam.learning_rate /= 2.0;
                record.halved = true;
            }
        } else {
            log.best_epoch = epoch;
        }
        log::debug!(
            "generator epoch {epoch}: loss {:.4} dev ppl {:?} lr {lr_used}",
            record.train_loss,
            record.dev_perplexity
        );
        log.epochs.push(record);
    }
    if let Some((_, params)) = best {
        gen.params = params;
    }
    Ok((gen, log))
}
