//! Train a small attentional seq2seq generator on translation pairs and
//! decode diverse paraphrases with beam search.
//!
//! ```bash
//! cargo run --release --example train_generator
//! ```

use slotforge::diversity::{build_training_pairs, rank_token};
use slotforge::pipeline::split_pairs;
use slotforge::seq2seq::{train_generator, GenConfig};
use slotforge::synth::make_synthetic;

fn main() {
    let (train, _, _) = make_synthetic(1, 60, 1);
    let pairs = build_training_pairs(&train);
    let (gen_train, gen_dev) = split_pairs(&pairs, 0.1, 1);
    let config = GenConfig {
        num_layers: 1,
        hidden_size: 32,
        embed_size: 16,
        max_epochs: 40,
        batch_size: 8,
        beam_size: 5,
        ..Default::default()
    };
    let (generator, log) = train_generator(&gen_train, &gen_dev, &config).unwrap();
    for e in &log.epochs {
        let dev = e.dev_perplexity.map_or("-".to_string(), |p| format!("{p:.3}"));
        println!("epoch {:>2}  train loss {:.3}  dev ppl {dev}", e.epoch, e.train_loss);
    }
    println!("best epoch {}; vocabulary {}", log.best_epoch, generator.vocab.len());

    let mut source: Vec<String> = pairs[0].source[..pairs[0].source.len() - 1].to_vec();
    println!("\nsource: {}", source.join(" "));
    for rank in 1..=2 {
        source.push(rank_token(rank));
        for hyp in generator.beam_search(&source, config.beam_size).iter().take(2) {
            let words: Vec<&str> = hyp.output().iter().map(|&i| generator.vocab.token(i)).collect();
            println!("  {} {:>7.3}  {}", rank_token(rank), hyp.log_prob, words.join(" "));
        }
        source.pop();
    }
}
