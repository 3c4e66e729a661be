//! Sample train, dev and test corpora from the built-in flight-booking
//! grammar and print them in CONLL form.
//!
//! ```bash
//! cargo run --example synthetic_corpus
//! ```

use slotforge::corpus::{cluster_by_frame, write_conll, Corpus};
use slotforge::synth::{make_synthetic, template_count};

fn main() {
    let (train, dev, test) = make_synthetic(1, 120, 500);
    println!("{} templates", template_count());
    for (name, c) in [("train", &train), ("dev", &dev), ("test", &test)] {
        println!(
            "{name:>5}: {:>3} utterances, {} frames",
            c.len(),
            cluster_by_frame(c).len()
        );
    }
    let head = Corpus::new(train.utterances[..3].to_vec());
    print!("\n{}", write_conll(&head));
}
