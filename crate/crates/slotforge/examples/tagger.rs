//! Train the BiLSTM slot tagger, tag a fresh utterance, and reload the
//! checkpoint.
//!
//! ```bash
//! cargo run --release --example tagger
//! ```

use slotforge::synth::make_synthetic;
use slotforge::tagger::{train_tagger, Tagger, TaggerConfig};

fn main() {
    let (train, dev, test) = make_synthetic(2, 80, 100);
    let config = TaggerConfig {
        embed_size: 32,
        hidden_size: 32,
        max_epochs: 60,
        learning_rate: 0.005,
        ..Default::default()
    };
    let (tagger, log) = train_tagger(&train, &dev, &config).unwrap();
    for e in log.epochs.iter().step_by(5) {
        let dev = e.dev_f1.map_or("-".to_string(), |f| format!("{f:.1}"));
        println!("epoch {:>2}  loss {:.3}  dev F1 {dev}", e.epoch, e.train_loss);
    }
    println!(
        "kept epoch {}; tags {:?}",
        log.best_epoch,
        tagger.tag_set().iter().map(|t| t.to_string()).collect::<Vec<_>>()
    );

    let tokens: Vec<String> = "show me flights from boston to las vegas on friday"
        .split_whitespace()
        .map(String::from)
        .collect();
    let tags = tagger.predict_tags(&tokens);
    let tagged: Vec<String> = tokens.iter().zip(&tags).map(|(w, t)| format!("{w}/{t}")).collect();
    println!("\n{}", tagged.join(" "));

    let path = std::env::temp_dir().join("slotforge_example.sftg");
    tagger.save(&path).unwrap();
    let reloaded = Tagger::load(&path).unwrap();
    std::fs::remove_file(&path).ok();
    let m = reloaded.evaluate(&test);
    println!(
        "reloaded tagger on test: P {:.1} R {:.1} F1 {:.1}",
        m.precision, m.recall, m.f1
    );
}
