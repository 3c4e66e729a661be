mod common;

use std::collections::HashSet;
use std::process::Command;

use common::tiny_config;
use slotforge::corpus::{parse_conll, Corpus};
use slotforge::delex::delexicalise;
use slotforge::diversity::parse_rank_token;
use slotforge::pipeline::run_pipeline_on;
use slotforge::synth::make_synthetic;
use slotforge::{run_pipeline, PipelineConfig};

#[test]
fn augmented_corpus_extends_training_data() {
    let (train, dev, test) = make_synthetic(3, 40, 30);
    let out = run_pipeline_on(&train, &dev, &test, &tiny_config()).unwrap();
    let aug = &out.augmentation.corpus;
    assert_eq!(&aug.utterances[..train.len()], &train.utterances[..]);
    let distinct: HashSet<_> = aug.utterances.iter().collect();
    assert_eq!(distinct.len(), aug.len());
    for u in &aug.utterances[train.len()..] {
        assert_eq!(u.frame(), delexicalise(u).0.frame());
    }
    assert_eq!(out.runs.len(), 2);
    let f1 = |k: &str| out.report.get_f64(k).unwrap();
    let mean = (f1("augmented.seed1.f1") + f1("augmented.seed2.f1")) / 2.0;
    assert!((f1("augmented.mean_f1") - mean).abs() < 1e-12);
}

#[test]
fn rank_ablation_uses_one_rank_token() {
    let (train, dev, test) = make_synthetic(3, 30, 10);
    let mut config = tiny_config();
    config.augment.no_ranks = true;
    config.seeds = vec![1];
    let out = run_pipeline_on(&train, &dev, &test, &config).unwrap();
    assert!(!out.pairs.is_empty());
    assert!(out
        .pairs
        .iter()
        .all(|p| p.source.last().map(String::as_str) == Some("#1")));
    assert_eq!(out.augmentation.requests, train.len());
}

#[test]
fn frame_matching_filter_drops_mismatches() {
    let (train, dev, test) = make_synthetic(4, 30, 10);
    let mut config = tiny_config();
    config.seeds = vec![1];
    config.augment.enforce_frame_match = true;
    let out = run_pipeline_on(&train, &dev, &test, &config).unwrap();
    for (src, gens) in &out.augmentation.generated {
        for g in gens {
            assert_eq!(g.frame(), src.frame());
        }
    }
}

#[test]
fn pipeline_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (train, dev, test) = make_synthetic(5, 30, 10);
    for (name, c) in [("train", &train), ("dev", &dev), ("test", &test)] {
        c.write(dir.path().join(format!("{name}.conll"))).unwrap();
    }
    let mut config = tiny_config();
    config.seeds = vec![7];
    config.paths.train = Some(dir.path().join("train.conll"));
    config.paths.dev = Some(dir.path().join("dev.conll"));
    config.paths.test = Some(dir.path().join("test.conll"));
    config.paths.out = Some(dir.path().join("run"));
    let out = run_pipeline(&config).unwrap();
    let run = dir.path().join("run");
    for f in [
        "pairs.tsv",
        "slot_values.tsv",
        "generations.tsv",
        "augmented.conll",
        "generator.sfgn",
        "generator_log.json",
        "tagger_baseline_seed7.sftg",
        "tagger_augmented_seed7.sftg",
        "report.tsv",
        "report.json",
        "config.txt",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert_eq!(
        std::fs::read_to_string(run.join("report.tsv")).unwrap(),
        out.report.to_tsv()
    );
    let augmented = Corpus::read(run.join("augmented.conll")).unwrap();
    assert_eq!(augmented.utterances, out.augmentation.corpus.utterances);
    assert_eq!(PipelineConfig::read(run.join("config.txt")).unwrap(), config);
    assert!(!dir.path().join("run.partial").exists());
    // A second run refuses to overwrite existing results.
    assert!(run_pipeline(&config).is_err());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slotforge"))
}

#[test]
fn command_line_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |c: &mut Command| {
        let out = c.env("SLOTFORGE_LOG", "error").output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let data = d.join("data");
    ok(bin()
        .args(["synth", "--seed", "2", "--n-train", "30", "--n-test", "10", "--out"])
        .arg(&data));
    let train = data.join("train.conll");
    let stats = ok(bin().arg("stats").arg("--train").arg(&train));
    assert!(stats.starts_with("utterances\t30\n"), "{stats}");

    let cfg = d.join("desk.cfg");
    std::fs::write(
        &cfg,
        "gen.num_layers=1\ngen.hidden_size=8\ngen.embed_size=4\ngen.max_epochs=2\ngen.beam_size=2\n\
                          tagger.embed_size=8\ntagger.hidden_size=8\ntagger.max_epochs=2\ntagger.min_epochs=0\n",
    )
    .unwrap();
    let pairs = d.join("pairs.tsv");
    ok(bin()
        .arg("pairs")
        .arg("--train")
        .arg(&train)
        .arg("--out")
        .arg(&pairs)
        .arg("--no-ranks"));
    let text = std::fs::read_to_string(&pairs).unwrap();
    assert!(text.lines().all(|l| l.split('\t').next().unwrap().ends_with(" #1")));
    ok(bin().arg("pairs").arg("--train").arg(&train).arg("--out").arg(&pairs));

    let gen = d.join("gen.sfgn");
    ok(bin()
        .arg("--config")
        .arg(&cfg)
        .arg("train-gen")
        .arg("--pairs")
        .arg(&pairs)
        .arg("--out")
        .arg(&gen));
    let augmented = d.join("aug.conll");
    let summary = ok(bin()
        .args(["--config"])
        .arg(&cfg)
        .args(["--set", "augment.top_m=2", "augment"])
        .arg("--train")
        .arg(&train)
        .arg("--generator")
        .arg(&gen)
        .arg("--out")
        .arg(&augmented));
    assert!(summary.contains("num_new_delex\t"));
    assert!(
        parse_conll(&std::fs::read_to_string(&augmented).unwrap())
            .unwrap()
            .len()
            >= 30
    );

    let tagger = d.join("tagger.sftg");
    ok(bin()
        .arg("--config")
        .arg(&cfg)
        .arg("train-tagger")
        .arg("--train")
        .arg(&augmented)
        .arg("--dev")
        .arg(data.join("dev.conll"))
        .arg("--out")
        .arg(&tagger));
    let eval = ok(bin()
        .arg("evaluate")
        .arg("--gold")
        .arg(data.join("test.conll"))
        .arg("--tagger")
        .arg(&tagger)
        .arg("--json"));
    let v: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert!(v["test.f1"].as_f64().is_some());
    let self_eval = ok(bin()
        .arg("evaluate")
        .arg("--gold")
        .arg(&train)
        .arg("--pred")
        .arg(&train));
    assert!(self_eval.contains("test.f1\t100.0\n"), "{self_eval}");

    let report = ok(bin()
        .arg("--config")
        .arg(&cfg)
        .args(["--seed-list", "3", "pipeline", "--no-seq2seq", "--train"])
        .arg(&train)
        .arg("--dev")
        .arg(data.join("dev.conll"))
        .arg("--test")
        .arg(data.join("test.conll")));
    assert!(report.contains("augment.num_new_delex\t0\n"));
    assert!(report.contains("baseline.seed3.f1\t"));
}

#[test]
fn command_line_rejects_bad_input() {
    let out = bin()
        .arg("stats")
        .arg("--train")
        .arg("/nonexistent.conll")
        .env("SLOTFORGE_LOG", "error")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = bin()
        .args(["synth", "--out", "x"])
        .env("SLOTFORGE_LOG", "loud")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .args(["--seed-list", "1,1", "pipeline"])
        .env("SLOTFORGE_LOG", "error")
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn rank_tokens_never_leak_into_generations() {
    let (train, dev, test) = make_synthetic(6, 30, 10);
    let mut config = tiny_config();
    config.seeds = vec![1];
    let out = run_pipeline_on(&train, &dev, &test, &config).unwrap();
    for gens in out.augmentation.generated.values() {
        for g in gens {
            assert!(g.tokens().iter().all(|t| parse_rank_token(t).is_none()));
        }
    }
}
