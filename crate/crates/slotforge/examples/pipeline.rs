//! The full loop on a synthetic corpus: build pairs, train the generator,
//! augment, then train baseline and augmented taggers and compare them.
//!
//! ```bash
//! cargo run --release --example pipeline
//! ```

use slotforge::synth::make_synthetic;
use slotforge::{run_pipeline_on, PipelineConfig};

fn main() {
    let (train, dev, test) = make_synthetic(1, 100, 300);
    let mut config = PipelineConfig::default();
    for setting in [
        "gen.num_layers=1",
        "gen.hidden_size=32",
        "gen.embed_size=16",
        "gen.max_epochs=30",
        "gen.beam_size=5",
        "tagger.embed_size=32",
        "tagger.hidden_size=32",
        "tagger.max_epochs=40",
        "tagger.min_epochs=20",
        "tagger.patience=5",
        "seeds=1,2",
    ] {
        config.set_assignment(setting).unwrap();
    }

    let out = run_pipeline_on(&train, &dev, &test, &config).unwrap();
    print!("{}", out.report.to_tsv());

    println!("\nsome new utterances:");
    for u in out.augmentation.corpus.utterances[train.len()..].iter().take(6) {
        println!("  {}", u.tokens().join(" "));
    }
}
