use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use slotforge::config::{parse_seed_list, ConfigError, PipelineConfig};
use slotforge::corpus::{cluster_by_frame, Corpus};
use slotforge::delex::build_slot_value_map;
use slotforge::diversity::{build_training_pairs_with, read_pairs, write_pairs};
use slotforge::eval::{chunk_prf, MetricsReport};
use slotforge::pipeline::{augment, pair_options, run_pipeline, split_pairs, write_generations};
use slotforge::seq2seq::{train_generator, Generator};
use slotforge::synth::make_synthetic;
use slotforge::tagger::{train_tagger, Tagger, TaggerConfig};

type BoxError = Box<dyn std::error::Error>;

#[derive(Parser)]
#[command(
    name = "slotforge",
    version,
    about = "Diversity-ranked data augmentation for slot filling"
)]
struct Cli {
    /// key=value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set gen.beam_size=5`
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Comma-separated tagger seeds
    #[arg(long, value_name = "1,2,3", global = true)]
    seed_list: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Ablations {
    #[arg(long)]
    no_seq2seq: bool,
    #[arg(long)]
    no_ranks: bool,
    #[arg(long)]
    no_filter: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus, cluster and pair statistics
    Stats {
        #[arg(long)]
        train: PathBuf,
    },
    /// Build rank-tagged translation pairs
    Pairs {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        ablations: Ablations,
    },
    /// Train the seq2seq generator on a pair file
    TrainGen {
        #[arg(long)]
        pairs: PathBuf,
        /// Dev pairs; defaults to a held-out share of `--pairs`
        #[arg(long)]
        dev_pairs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate, realise and merge augmented utterances
    Augment {
        #[arg(long)]
        train: PathBuf,
        /// Generator checkpoint; without it training utterances are re-realised
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write `source<TAB>generation` lines here
        #[arg(long)]
        generations: Option<PathBuf>,
        #[arg(long)]
        top_m: Option<usize>,
        #[arg(long)]
        enforce_frame_match: bool,
        #[arg(long)]
        no_ranks: bool,
    },
    /// Train one BiLSTM tagger
    TrainTagger {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Chunk precision/recall/F1 of a tagger or of a prediction file
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, conflicts_with = "pred", required_unless_present = "pred")]
        tagger: Option<PathBuf>,
        /// CONLL file with predicted tags, aligned with `--gold`
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Full augmentation and evaluation run
    Pipeline {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        ablations: Ablations,
        #[arg(long)]
        json: bool,
    },
    /// Sample train/dev/test corpora from the built-in grammar
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 120)]
        n_train: usize,
        #[arg(long, default_value_t = 500)]
        n_test: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_logging() -> Result<(), BoxError> {
    let level = std::env::var("SLOTFORGE_LOG").unwrap_or_else(|_| "warn".into());
    if !["error", "warn", "info", "debug"].contains(&level.as_str()) {
        return Err(format!("SLOTFORGE_LOG must be one of error, warn, info, debug (got {level:?})").into());
    }
    env_logger::Builder::new().parse_filters(&level).init();
    Ok(())
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, ConfigError> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::read(p)?,
        None => PipelineConfig::default(),
    };
    for o in &cli.overrides {
        config.set_assignment(o)?;
    }
    if let Some(s) = &cli.seed_list {
        config.seeds = parse_seed_list(s)?;
    }
    Ok(config)
}

fn apply_ablations(config: &mut PipelineConfig, a: &Ablations) {
    config.augment.no_seq2seq |= a.no_seq2seq;
    config.augment.no_ranks |= a.no_ranks;
    config.augment.no_filter |= a.no_filter;
}

fn write(path: &PathBuf, contents: &[u8]) -> Result<(), BoxError> {
    std::fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn run(cli: Cli) -> Result<(), BoxError> {
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Stats { train } => {
            let c = Corpus::read(&train)?;
            let clusters = cluster_by_frame(&c);
            let pairs = build_training_pairs_with(&c, pair_options(&config.augment));
            let mut types: BTreeMap<String, usize> = BTreeMap::new();
            for u in c.iter() {
                for (t, n) in u.frame().counts() {
                    *types.entry(t.clone()).or_default() += n;
                }
            }
            let mut r = MetricsReport::new();
            r.push("utterances", c.len());
            r.push("tokens", c.iter().map(|u| u.len()).sum::<usize>());
            r.push("clusters", clusters.len());
            r.push("largest_cluster", clusters.values().map(Vec::len).max().unwrap_or(0));
            r.push("singleton_clusters", clusters.values().filter(|m| m.len() == 1).count());
            r.push("pairs", pairs.len());
            for (t, n) in types {
                r.push(format!("slots.{t}"), n);
            }
            print!("{}", r.to_tsv());
        }
        Command::Pairs { train, out, ablations } => {
            apply_ablations(&mut config, &ablations);
            let pairs = build_training_pairs_with(&Corpus::read(&train)?, pair_options(&config.augment));
            write(&out, write_pairs(&pairs).as_bytes())?;
            eprintln!("wrote {} pairs to {}", pairs.len(), out.display());
        }
        Command::TrainGen { pairs, dev_pairs, out } => {
            config.validate()?;
            let all = read_pairs(&pairs)?;
            let (train, dev) = match dev_pairs {
                Some(p) => (all, read_pairs(&p)?),
                None => split_pairs(&all, config.augment.dev_fraction, config.augment.seed),
            };
            let (gen, log) = train_generator(&train, &dev, &config.gen)?;
            gen.save(&out)?;
            eprintln!(
                "best epoch {} of {}; saved {}",
                log.best_epoch,
                log.epochs.len(),
                out.display()
            );
        }
        Command::Augment {
            train,
            generator,
            out,
            generations,
            top_m,
            enforce_frame_match,
            no_ranks,
        } => {
            if let Some(m) = top_m {
                config.augment.top_m = m;
            }
            config.augment.enforce_frame_match |= enforce_frame_match;
            config.augment.no_ranks |= no_ranks;
            config.validate()?;
            let c = Corpus::read(&train)?;
            let gen = generator.map(Generator::load).transpose()?;
            let a = augment(&c, gen.as_ref(), &build_slot_value_map(&c), &config.augment);
            a.corpus.write(&out)?;
            if let Some(p) = generations {
                write(&p, write_generations(&a.generated).as_bytes())?;
            }
            let mut r = MetricsReport::new();
            r.push("requests", a.requests);
            r.push("realised", a.realised.len());
            r.push("dropped", a.dropped);
            r.push("num_new_delex", a.stats.num_new_delex);
            r.push("avg_max_edit_distance", a.stats.avg_max_edit_distance);
            r.push("corpus_size", a.corpus.len());
            print!("{}", r.to_tsv());
        }
        Command::TrainTagger { train, dev, out, seed } => {
            let tcfg = TaggerConfig {
                seed: seed.unwrap_or(config.seeds.first().copied().unwrap_or(1)),
                ..config.tagger_config()
            };
            let dev = dev.map(Corpus::read).transpose()?.unwrap_or_default();
            let (tagger, log) = train_tagger(&Corpus::read(&train)?, &dev, &tcfg)?;
            tagger.save(&out)?;
            eprintln!(
                "best epoch {} of {}; saved {}",
                log.best_epoch,
                log.epochs.len(),
                out.display()
            );
        }
        Command::Evaluate {
            gold,
            tagger,
            pred,
            json,
        } => {
            let gold = Corpus::read(&gold)?;
            let predicted = match (tagger, pred) {
                (Some(t), _) => Tagger::load(t)?.predict_corpus(&gold),
                (None, Some(p)) => Corpus::read(p)?.iter().map(|u| u.tags().to_vec()).collect(),
                (None, None) => unreachable!("clap requires one of --tagger or --pred"),
            };
            let mut r = MetricsReport::new();
            r.push_metrics("test", &chunk_prf(&gold, &predicted)?);
            print!("{}", if json { r.to_json() } else { r.to_tsv() });
        }
        Command::Pipeline {
            train,
            dev,
            test,
            out,
            ablations,
            json,
        } => {
            apply_ablations(&mut config, &ablations);
            let paths = &mut config.paths;
            paths.train = train.or(paths.train.take());
            paths.dev = dev.or(paths.dev.take());
            paths.test = test.or(paths.test.take());
            paths.out = out.or(paths.out.take());
            let output = run_pipeline(&config)?;
            print!(
                "{}",
                if json {
                    output.report.to_json()
                } else {
                    output.report.to_tsv()
                }
            );
        }
        Command::Synth {
            seed,
            n_train,
            n_test,
            out,
        } => {
            if n_train == 0 || n_test == 0 {
                return Err("--n-train and --n-test must be positive".into());
            }
            std::fs::create_dir_all(&out)?;
            let (train, dev, test) = make_synthetic(seed, n_train, n_test);
            for (name, c) in [("train", &train), ("dev", &dev), ("test", &test)] {
                c.write(out.join(format!("{name}.conll")))?;
            }
            eprintln!(
                "wrote {} / {} / {} utterances to {}",
                train.len(),
                dev.len(),
                test.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    if let Err(e) = init_logging() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
