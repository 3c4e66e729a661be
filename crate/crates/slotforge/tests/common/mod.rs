//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use slotforge::corpus::{Corpus, SlotTag, Utterance};
use slotforge::nn::ParamSet;

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// `word/TAG` pairs separated by spaces; a bare word is tagged `O`.
pub fn utt(s: &str) -> Utterance {
    Utterance::from_pairs(s.split_whitespace().map(|p| p.split_once('/').unwrap_or((p, "O")))).unwrap()
}

pub fn corpus(lines: &[&str]) -> Corpus {
    Corpus::new(lines.iter().map(|l| utt(l)).collect())
}

/// Levenshtein distance straight from the recursive definition, memoised.
pub fn levenshtein_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&d) = memo.get(&(a.len(), b.len())) {
            return d;
        }
        let (ah, at) = (&a[0], &a[1..]);
        let (bh, bt) = (&b[0], &b[1..]);
        let d = if ah == bh {
            go(at, bt, memo)
        } else {
            1 + go(at, b, memo).min(go(a, bt, memo)).min(go(at, bt, memo))
        };
        memo.insert((a.len(), b.len()), d);
        d
    }
    go(a, b, &mut HashMap::new())
}

/// Chunks following conlleval's start/end-of-chunk tables.
pub fn chunks_oracle(tags: &[&str]) -> BTreeSet<(String, usize, usize)> {
    let split = |t: &str| -> (char, String) {
        match t.split_once('-') {
            Some((p, ty)) => (p.chars().next().unwrap(), ty.to_string()),
            None => ('O', String::new()),
        }
    };
    let mut out = BTreeSet::new();
    let mut open: Option<(String, usize)> = None;
    let (mut prev_tag, mut prev_type) = ('O', String::new());
    for (i, t) in tags.iter().chain(std::iter::once(&"O")).enumerate() {
        let (tag, ty) = split(t);
        let end = matches!((prev_tag, tag), ('B', 'B') | ('B', 'O') | ('I', 'B') | ('I', 'O'))
            || (prev_tag != 'O' && tag != 'O' && prev_type != ty);
        let start = matches!((prev_tag, tag), ('B', 'B') | ('I', 'B') | ('O', 'B') | ('O', 'I'))
            || (tag != 'O' && prev_tag != 'O' && prev_type != ty);
        if end {
            if let Some((oty, s)) = open.take() {
                out.insert((oty, s, i));
            }
        }
        if start {
            open = Some((ty.clone(), i));
        }
        prev_tag = tag;
        prev_type = ty;
    }
    out
}

/// (precision, recall, f1) in percent from per-utterance tag strings.
pub fn prf_oracle(gold: &[Vec<&str>], pred: &[Vec<&str>]) -> (f64, f64, f64) {
    let (mut g, mut p, mut c) = (0usize, 0usize, 0usize);
    for (gs, ps) in gold.iter().zip(pred) {
        let gc = chunks_oracle(gs);
        let pc = chunks_oracle(ps);
        g += gc.len();
        p += pc.len();
        c += gc.intersection(&pc).count();
    }
    let precision = if p == 0 { 0.0 } else { 100.0 * c as f64 / p as f64 };
    let recall = if g == 0 { 0.0 } else { 100.0 * c as f64 / g as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

pub fn tags_of(s: &str) -> Vec<SlotTag> {
    s.split_whitespace().map(|t| t.parse().unwrap()).collect()
}

/// Largest relative error per tensor between `analytic` and central finite
/// differences of `loss` with respect to the parameters reached by `params`.
pub fn gradient_errors<M>(
    model: &mut M,
    params: fn(&mut M) -> &mut ParamSet,
    loss: impl Fn(&M) -> f64,
    analytic: &ParamSet,
    eps: f64,
) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let n_tensors = params(model).tensors().len();
    for ti in 0..n_tensors {
        let name = params(model).tensors()[ti].name.clone();
        let len = params(model).tensors()[ti].data.len();
        let mut worst: f64 = 0.0;
        for k in 0..len {
            let orig = params(model).tensors()[ti].data[k];
            params(model).tensors_mut()[ti].data[k] = orig + eps;
            let up = loss(model);
            params(model).tensors_mut()[ti].data[k] = orig - eps;
            let down = loss(model);
            params(model).tensors_mut()[ti].data[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.tensors()[ti].data[k];
            let denom = a.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max((a - numeric).abs() / denom);
        }
        out.push((name, worst));
    }
    out
}

/// Small models that keep end-to-end runs within desk budgets.
pub fn desk_config() -> slotforge::PipelineConfig {
    let mut c = slotforge::PipelineConfig::default();
    for (k, v) in [
        ("gen.num_layers", "1"),
        ("gen.hidden_size", "32"),
        ("gen.embed_size", "16"),
        ("gen.max_epochs", "30"),
        ("gen.beam_size", "5"),
        ("tagger.embed_size", "32"),
        ("tagger.hidden_size", "32"),
    ] {
        c.set(k, v).unwrap();
    }
    c
}

/// A very small configuration for plumbing tests.
pub fn tiny_config() -> slotforge::PipelineConfig {
    let mut c = desk_config();
    c.gen.max_epochs = 3;
    c.tagger.max_epochs = 2;
    c.tagger.min_epochs = 0;
    c.seeds = vec![1, 2];
    c
}

/// Every emittable output up to `cap` tokens, ending at the first end
/// marker, scored by teacher-forced log-probabilities; best first.
pub fn enumerate_outputs(g: &slotforge::Generator, source: &[String], cap: usize) -> Vec<(f64, Vec<usize>)> {
    use slotforge::seq2seq::{BOS, EOS, PAD};
    let emittable: Vec<usize> = (0..g.vocab.len()).filter(|&i| i != PAD && i != BOS).collect();
    let mut out = Vec::new();
    let mut stack = vec![(0.0, Vec::new())];
    while let Some((score, prefix)) = stack.pop() {
        let lp = g.next_token_log_probs(source, &prefix);
        for &id in &emittable {
            let mut seq = prefix.clone();
            seq.push(id);
            let s = score + lp[id];
            if id == EOS || seq.len() == cap {
                out.push((s, seq));
            } else {
                stack.push((s, seq));
            }
        }
    }
    out.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    out
}

/// Toy generator with a 5-entry vocabulary and outputs capped at 3 tokens.
pub fn toy_beam_generator(seed: u64) -> slotforge::Generator {
    let config = slotforge::GenConfig {
        num_layers: 1,
        hidden_size: 6,
        embed_size: 4,
        max_decode_len: Some(3),
        seed,
        ..Default::default()
    };
    let mut g = slotforge::seq2seq::init_params(&config, &slotforge::seq2seq::GenVocab::from_tokens(["a"])).unwrap();
    g.params.scale(15.0);
    g
}

/// Gold lines, predicted lines, and hand-computed precision/recall/F1.
pub type ChunkFixture = (Vec<&'static str>, Vec<&'static str>, (f64, f64, f64));

pub fn chunk_fixtures() -> Vec<ChunkFixture> {
    vec![
        // Exact match.
        (vec!["B-a I-a O B-b"], vec!["B-a I-a O B-b"], (100.0, 100.0, 100.0)),
        // Orphan I- starts a chunk.
        (vec!["B-a I-a O"], vec!["I-a I-a O"], (100.0, 100.0, 100.0)),
        // Boundary error on the first chunk; the orphan I-b still matches.
        (vec!["B-a I-a O B-b"], vec!["B-a O O I-b"], (50.0, 50.0, 50.0)),
        // Type switch inside a run splits it.
        (
            vec!["B-a I-a I-a", "O B-c"],
            vec!["B-a I-b I-b", "O B-c"],
            (100.0 / 3.0, 50.0, 40.0),
        ),
        // No predictions.
        (vec!["B-a O", "O B-b"], vec!["O O", "O O"], (0.0, 0.0, 0.0)),
    ]
}

pub fn fixture_corpus(tag_lines: &[&str]) -> Corpus {
    Corpus::new(
        tag_lines
            .iter()
            .map(|l| {
                let tags = tags_of(l);
                Utterance::new((0..tags.len()).map(|i| format!("w{i}")).collect(), tags).unwrap()
            })
            .collect(),
    )
}

/// Returns (scorer output, oracle output) for one fixture.
pub fn score_fixture(gold: &[&str], pred: &[&str]) -> ((f64, f64, f64), (f64, f64, f64)) {
    let predicted: Vec<_> = pred.iter().map(|p| tags_of(p)).collect();
    let m = slotforge::chunk_prf(&fixture_corpus(gold), &predicted).unwrap();
    let gs: Vec<Vec<&str>> = gold.iter().map(|l| l.split_whitespace().collect()).collect();
    let ps: Vec<Vec<&str>> = pred.iter().map(|l| l.split_whitespace().collect()).collect();
    ((m.precision, m.recall, m.f1), prf_oracle(&gs, &ps))
}

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-4;

fn gen_params(g: &mut slotforge::Generator) -> &mut ParamSet {
    &mut g.params
}

fn tagger_params(t: &mut slotforge::Tagger) -> &mut ParamSet {
    &mut t.params
}

pub fn toy_gen_config(
    num_layers: usize,
    bidirectional: bool,
    attention: slotforge::seq2seq::AttentionScore,
) -> slotforge::GenConfig {
    slotforge::GenConfig {
        num_layers,
        hidden_size: 4,
        embed_size: 3,
        bidirectional,
        attention,
        seed: 7,
        ..Default::default()
    }
}

/// Worst relative error per tensor of the generator on a 2-pair toy batch.
pub fn generator_grad_errors(config: &slotforge::GenConfig) -> Vec<(String, f64)> {
    use slotforge::diversity::TranslationPair;
    let pair = |s: &str, t: &str| TranslationPair {
        source: toks(s),
        target: toks(t),
    };
    let pairs = vec![
        pair(
            "show me the <distance> <poi_type> #1",
            "is there a <distance> <poi_type>",
        ),
        pair("where is the <poi_type> #2", "show me the <poi_type> please"),
    ];
    let mut g = slotforge::seq2seq::init_params(config, &slotforge::seq2seq::GenVocab::build(&pairs)).unwrap();
    g.params.scale(4.0);
    let (_, grads) = g.forward_loss(&pairs);
    gradient_errors(&mut g, gen_params, |g| g.loss(&pairs), &grads, GRAD_STEP)
}

/// Worst relative error per tensor of the tagger on a 2-utterance toy batch.
pub fn tagger_grad_errors() -> Vec<(String, f64)> {
    let train = corpus(&[
        "show me the closest/B-distance restaurant/B-poi_type",
        "fly to new/B-city york/I-city please",
    ]);
    let cfg = slotforge::TaggerConfig {
        embed_size: 3,
        hidden_size: 4,
        seed: 3,
        ..Default::default()
    };
    let mut t = slotforge::Tagger::new(&cfg, &train, &Corpus::default()).unwrap();
    t.params.scale(4.0);
    let batch = train.utterances.clone();
    let (_, grads) = t.forward_loss(&batch);
    gradient_errors(&mut t, tagger_params, |t| t.forward_loss(&batch).0, &grads, GRAD_STEP)
}
