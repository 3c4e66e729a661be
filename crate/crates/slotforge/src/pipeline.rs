//! End-to-end augmentation and evaluation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{AugmentOptions, ConfigError, PipelineConfig};
use crate::corpus::{cluster_by_frame, write_conll, Corpus, CorpusError, Utterance};
use crate::delex::{build_slot_value_map, delexicalise, realise, DelexUtterance, SlotValueMap};
use crate::diversity::{
    augmentation_ranks, build_training_pairs_with, parse_rank_token, rank_token, write_pairs, PairOptions,
    TranslationPair,
};
use crate::eval::{augmentation_stats, AugmentationStats, ChunkMetrics, MetricsReport};
use crate::seq2seq::{train_generator, GenConfig, GenError, Generator, TrainingLog};
use crate::tagger::{train_tagger, Tagger, TaggerConfig, TaggerError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn stage<E: std::error::Error + Send + Sync + 'static>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: Box::new(e),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> std::io::Error {
    std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
}

/// Splits translation pairs into training and dev portions with a seeded
/// shuffle; `floor(n * fraction)` pairs go to dev.
pub fn split_pairs(
    pairs: &[TranslationPair],
    fraction: f64,
    seed: u64,
) -> (Vec<TranslationPair>, Vec<TranslationPair>) {
    let n_dev = (pairs.len() as f64 * fraction).floor() as usize;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    order.shuffle(&mut rng);
    let (dev_idx, train_idx) = order.split_at(n_dev);
    let mut dev_idx = dev_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    dev_idx.sort_unstable();
    train_idx.sort_unstable();
    (
        train_idx.iter().map(|&i| pairs[i].clone()).collect(),
        dev_idx.iter().map(|&i| pairs[i].clone()).collect(),
    )
}

pub fn pair_options(opts: &AugmentOptions) -> PairOptions {
    PairOptions {
        filter: !opts.no_filter,
        ranks: !opts.no_ranks,
        ..PairOptions::default()
    }
}

/// Output of the generation and realisation stages.
#[derive(Clone, Debug)]
pub struct Augmentation {
    /// Generations per delexicalised training source.
    pub generated: BTreeMap<DelexUtterance, Vec<DelexUtterance>>,
    /// Newly realised utterances, in generation order.
    pub realised: Vec<Utterance>,
    /// Original corpus followed by distinct new utterances.
    pub corpus: Corpus,
    pub stats: AugmentationStats,
    pub requests: usize,
    pub dropped: usize,
}

/// Generation requests as (source tokens with rank token) per training
/// utterance; duplicates are kept so callers can count them.
pub fn generation_requests(train: &Corpus, no_ranks: bool) -> Vec<(usize, Vec<String>)> {
    let clusters = cluster_by_frame(train);
    let mut requests = Vec::new();
    for (i, u) in train.iter().enumerate() {
        let (d, _) = delexicalise(u);
        let ranks = if no_ranks {
            vec![1]
        } else {
            augmentation_ranks(&u.frame(), &clusters)
        };
        for k in ranks {
            let mut source = d.tokens().to_vec();
            source.push(rank_token(k));
            requests.push((i, source));
        }
    }
    requests
}

fn usable(tokens: &[String]) -> bool {
    !tokens.is_empty() && tokens.iter().all(|t| parse_rank_token(t).is_none())
}

/// Generates with `generator` (or re-realises the training delex forms when
/// it is `None`), realises every generation and merges the result with `train`.
pub fn augment(
    train: &Corpus,
    generator: Option<&Generator>,
    slot_map: &SlotValueMap,
    opts: &AugmentOptions,
) -> Augmentation {
    let delex: Vec<DelexUtterance> = train.iter().map(|u| delexicalise(u).0).collect();
    let train_delex: HashSet<DelexUtterance> = delex.iter().cloned().collect();
    let mut generated: BTreeMap<DelexUtterance, Vec<DelexUtterance>> = BTreeMap::new();
    let mut ordered: Vec<(usize, DelexUtterance)> = Vec::new();
    let mut requests = 0;

    match generator {
        Some(g) => {
            let mut cache: HashMap<Vec<String>, Vec<Vec<String>>> = HashMap::new();
            for (i, source) in generation_requests(train, opts.no_ranks) {
                requests += 1;
                let outputs = cache
                    .entry(source.clone())
                    .or_insert_with(|| g.generate(&source, opts.top_m))
                    .clone();
                for out in outputs.into_iter().filter(|o| usable(o)) {
                    ordered.push((i, DelexUtterance::from_tokens(out)));
                }
            }
        }
        None => {
            for (i, d) in delex.iter().enumerate() {
                requests += 1;
                ordered.push((i, d.clone()));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut realised = Vec::new();
    let mut dropped = 0;
    for (i, g) in ordered {
        if opts.enforce_frame_match && g.frame() != train.utterances[i].frame() {
            dropped += 1;
            continue;
        }
        match realise(&g, slot_map, &mut rng) {
            Ok(u) => {
                let list = generated.entry(delex[i].clone()).or_default();
                if !list.contains(&g) {
                    list.push(g);
                }
                realised.push(u);
            }
            Err(e) => {
                log::debug!("dropping generation {g}: {e}");
                dropped += 1;
            }
        }
    }

    let mut seen: HashSet<Utterance> = HashSet::new();
    let mut merged = Vec::with_capacity(train.len() + realised.len());
    for u in train.iter().chain(realised.iter()) {
        if seen.insert(u.clone()) {
            merged.push(u.clone());
        }
    }
    let mut corpus = Corpus::new(merged);
    corpus.provenance = format!("{}+augmented", train.provenance);
    Augmentation {
        stats: augmentation_stats(&train_delex, &generated),
        generated,
        realised,
        corpus,
        requests,
        dropped,
    }
}

/// Renders generations as `source<TAB>generation` lines.
pub fn write_generations(generated: &BTreeMap<DelexUtterance, Vec<DelexUtterance>>) -> String {
    generated
        .iter()
        .flat_map(|(src, gens)| gens.iter().map(move |g| format!("{src}\t{g}\n")))
        .collect()
}

/// Trains one tagger per dropout rate and keeps the best on dev.
pub fn train_tagger_grid(
    train: &Corpus,
    dev: &Corpus,
    config: &TaggerConfig,
    dropout_grid: &[f64],
) -> Result<Tagger, TaggerError> {
    if dropout_grid.is_empty() {
        return Ok(train_tagger(train, dev, config)?.0);
    }
    let mut best: Option<(f64, Tagger)> = None;
    for &dropout in dropout_grid {
        let cfg = TaggerConfig {
            dropout,
            ..config.clone()
        };
        let (tagger, _) = train_tagger(train, dev, &cfg)?;
        let f1 = if dev.is_empty() { 0.0 } else { tagger.evaluate(dev).f1 };
        if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
            best = Some((f1, tagger));
        }
    }
    Ok(best.expect("grid is non-empty").1)
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub baseline: ChunkMetrics,
    pub augmented: ChunkMetrics,
    pub baseline_tagger: Tagger,
    pub augmented_tagger: Tagger,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub report: MetricsReport,
    pub pairs: Vec<TranslationPair>,
    pub slot_map: SlotValueMap,
    pub generator: Option<(Generator, TrainingLog)>,
    pub augmentation: Augmentation,
    pub runs: Vec<SeedRun>,
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Trains the generator on pairs built from `train`, splitting off a dev part.
pub fn train_generator_on(
    pairs: &[TranslationPair],
    gen: &GenConfig,
    opts: &AugmentOptions,
) -> Result<(Generator, TrainingLog), GenError> {
    let (gen_train, gen_dev) = split_pairs(pairs, opts.dev_fraction, opts.seed);
    train_generator(&gen_train, &gen_dev, gen)
}

/// Runs every stage on in-memory corpora.
pub fn run_pipeline_on(
    train: &Corpus,
    dev: &Corpus,
    test: &Corpus,
    config: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    if train.is_empty() {
        return Err(stage("parse")(CorpusError::Empty));
    }
    let opts = &config.augment;
    let mut report = MetricsReport::new();
    report.push("corpus.train_utterances", train.len());
    report.push("corpus.dev_utterances", dev.len());
    report.push("corpus.test_utterances", test.len());

    let clusters = cluster_by_frame(train);
    let slot_map = build_slot_value_map(train);
    report.push("corpus.clusters", clusters.len());
    report.push("corpus.slot_contexts", slot_map.len());
    log::info!("{} training utterances in {} clusters", train.len(), clusters.len());

    let (pairs, generator) = if opts.no_seq2seq {
        (Vec::new(), None)
    } else {
        let pairs = build_training_pairs_with(train, pair_options(opts));
        log::info!("{} translation pairs", pairs.len());
        let trained = train_generator_on(&pairs, &config.gen, opts).map_err(stage("train generator"))?;
        (pairs, Some(trained))
    };
    report.push("pairs.count", pairs.len());
    if let Some((_, log)) = &generator {
        report.push("generator.best_epoch", log.best_epoch);
        if let Some(ppl) = log
            .epochs
            .iter()
            .find(|e| e.epoch == log.best_epoch)
            .and_then(|e| e.dev_perplexity)
        {
            report.push("generator.dev_perplexity", ppl);
        }
    }

    let augmentation = augment(train, generator.as_ref().map(|(g, _)| g), &slot_map, opts);
    log::info!(
        "{} generations, augmented corpus has {} utterances",
        augmentation.realised.len(),
        augmentation.corpus.len()
    );
    report.push("augment.requests", augmentation.requests);
    report.push("augment.realised", augmentation.realised.len());
    report.push("augment.dropped", augmentation.dropped);
    report.push("augment.num_new_delex", augmentation.stats.num_new_delex);
    report.push(
        "augment.avg_max_edit_distance",
        augmentation.stats.avg_max_edit_distance,
    );
    report.push("augment.corpus_size", augmentation.corpus.len());

    let mut runs = Vec::new();
    for &seed in &config.seeds {
        let tcfg = TaggerConfig {
            seed,
            ..config.tagger_config()
        };
        let baseline_tagger =
            train_tagger_grid(train, dev, &tcfg, &config.dropout_grid).map_err(stage("train baseline tagger"))?;
        let augmented_tagger = train_tagger_grid(&augmentation.corpus, dev, &tcfg, &config.dropout_grid)
            .map_err(stage("train augmented tagger"))?;
        let run = SeedRun {
            seed,
            baseline: baseline_tagger.evaluate(test),
            augmented: augmented_tagger.evaluate(test),
            baseline_tagger,
            augmented_tagger,
        };
        log::info!(
            "seed {seed}: baseline F1 {:.2}, augmented F1 {:.2}",
            run.baseline.f1,
            run.augmented.f1
        );
        report.push_metrics(&format!("baseline.seed{seed}"), &run.baseline);
        report.push_metrics(&format!("augmented.seed{seed}"), &run.augmented);
        runs.push(run);
    }
    let base_mean = mean(runs.iter().map(|r| r.baseline.f1));
    let aug_mean = mean(runs.iter().map(|r| r.augmented.f1));
    report.push("baseline.mean_f1", base_mean);
    report.push("augmented.mean_f1", aug_mean);
    report.push("delta.mean_f1", aug_mean - base_mean);

    Ok(PipelineOutput {
        report,
        pairs,
        slot_map,
        generator,
        augmentation,
        runs,
    })
}

fn read_corpus(path: &Option<PathBuf>, name: &'static str) -> Result<Corpus, PipelineError> {
    let path = path
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid(format!("paths.{name} is required")))?;
    Corpus::read(path).map_err(stage("parse"))
}

fn write_artifacts(dir: &Path, out: &PipelineOutput) -> Result<(), PipelineError> {
    let write = |name: &str, contents: &[u8]| -> Result<(), PipelineError> {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| stage("write artifacts")(io_error(&path, e)))
    };
    write("pairs.tsv", write_pairs(&out.pairs).as_bytes())?;
    write("slot_values.tsv", out.slot_map.to_tsv().as_bytes())?;
    write(
        "generations.tsv",
        write_generations(&out.augmentation.generated).as_bytes(),
    )?;
    write("augmented.conll", write_conll(&out.augmentation.corpus).as_bytes())?;
    if let Some((g, log)) = &out.generator {
        write("generator.sfgn", &g.to_bytes())?;
        let log_json = serde_json::to_string_pretty(log).expect("log serializes") + "\n";
        write("generator_log.json", log_json.as_bytes())?;
    }
    for run in &out.runs {
        write(
            &format!("tagger_baseline_seed{}.sftg", run.seed),
            &run.baseline_tagger.to_bytes(),
        )?;
        write(
            &format!("tagger_augmented_seed{}.sftg", run.seed),
            &run.augmented_tagger.to_bytes(),
        )?;
    }
    write("report.tsv", out.report.to_tsv().as_bytes())?;
    write("report.json", out.report.to_json().as_bytes())?;
    Ok(())
}

/// Reads the configured corpora, runs every stage and, when `paths.out` is
/// set, writes all artifacts there. Outputs are staged in `<out>.partial`
/// and only moved into place once every stage has succeeded.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    let train = read_corpus(&config.paths.train, "train")?;
    let dev = match &config.paths.dev {
        Some(p) => Corpus::read(p).map_err(stage("parse"))?,
        None => Corpus::default(),
    };
    let test = read_corpus(&config.paths.test, "test")?;

    let Some(out_dir) = &config.paths.out else {
        return run_pipeline_on(&train, &dev, &test, config);
    };
    if out_dir.exists()
        && std::fs::read_dir(out_dir)
            .map(|mut d| d.next().is_some())
            .unwrap_or(true)
    {
        return Err(ConfigError::Invalid(format!("output directory {} is not empty", out_dir.display())).into());
    }
    let mut partial = out_dir.clone().into_os_string();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    if partial.exists() {
        std::fs::remove_dir_all(&partial).map_err(|e| stage("write artifacts")(io_error(&partial, e)))?;
    }
    std::fs::create_dir_all(&partial).map_err(|e| stage("write artifacts")(io_error(&partial, e)))?;

    let result = run_pipeline_on(&train, &dev, &test, config).and_then(|out| {
        write_artifacts(&partial, &out)?;
        std::fs::write(partial.join("config.txt"), config.to_text())
            .map_err(|e| stage("write artifacts")(io_error(&partial, e)))?;
        if out_dir.exists() {
            std::fs::remove_dir(out_dir).map_err(|e| stage("write artifacts")(io_error(out_dir, e)))?;
        }
        std::fs::rename(&partial, out_dir).map_err(|e| stage("write artifacts")(io_error(out_dir, e)))?;
        Ok(out)
    });
    if result.is_err() && partial.exists() {
        let _ = std::fs::remove_dir_all(&partial);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_conll;

    fn tiny() -> Corpus {
        parse_conll(
            "to O\nboston B-city\n\nfly O\nto O\ndenver B-city\n\nflights O\nto O\ndallas B-city\nplease O\n\n\
             at O\nnoon B-time\n",
        )
        .unwrap()
    }

    #[test]
    fn split_is_deterministic_and_sized() {
        let pairs: Vec<TranslationPair> = (0..20)
            .map(|i| TranslationPair {
                source: vec![format!("s{i}"), "#1".into()],
                target: vec![format!("t{i}")],
            })
            .collect();
        let (a, b) = split_pairs(&pairs, 0.1, 3);
        assert_eq!((a.len(), b.len()), (18, 2));
        assert_eq!(split_pairs(&pairs, 0.1, 3), (a, b));
        assert_eq!(split_pairs(&pairs, 0.0, 3).1.len(), 0);
    }

    #[test]
    fn requests_follow_cluster_sizes() {
        let c = tiny();
        let reqs = generation_requests(&c, false);
        // city cluster has 3 members -> one rank each; time cluster -> one.
        assert_eq!(reqs.len(), 4);
        assert!(reqs.iter().all(|(_, s)| s.last().unwrap() == "#1"));
        assert_eq!(generation_requests(&c, true).len(), 4);
    }

    #[test]
    fn re_realisation_yields_no_new_delex() {
        let c = tiny();
        let map = build_slot_value_map(&c);
        let a = augment(&c, None, &map, &AugmentOptions::default());
        assert_eq!(a.stats.num_new_delex, 0);
        assert_eq!(&a.corpus.utterances[..c.len()], &c.utterances[..]);
        assert_eq!(a.requests, c.len());
    }

    #[test]
    fn failed_run_leaves_no_partial_output() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("train.conll");
        std::fs::write(&train, "at O\nnoon B-time\n").unwrap();
        let out = dir.path().join("out");
        let mut config = PipelineConfig::default();
        config.paths.train = Some(train.clone());
        config.paths.test = Some(train);
        config.paths.out = Some(out.clone());
        // A single utterance yields no translation pairs, so generator training fails.
        let err = run_pipeline(&config).unwrap_err();
        assert!(err.to_string().starts_with("train generator"), "{err}");
        assert!(!out.exists());
        assert!(!dir.path().join("out.partial").exists());
    }
}
