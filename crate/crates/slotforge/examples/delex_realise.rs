//! Delexicalise an annotated utterance, then realise a new surface form
//! from a slot-value map built over a tiny corpus.
//!
//! ```bash
//! cargo run --example delex_realise
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slotforge::corpus::{Corpus, Utterance};
use slotforge::delex::{build_slot_value_map, delexicalise, realise, DelexUtterance};

fn annotated(s: &str) -> Utterance {
    Utterance::from_pairs(s.split_whitespace().map(|p| p.split_once('/').unwrap_or((p, "O")))).unwrap()
}

fn main() {
    let corpus = Corpus::new(vec![
        annotated("find me the closest/B-distance route to starbucks/B-poi_type"),
        annotated("give me the nearest/B-distance route to whole/B-poi_type foods/I-poi_type"),
        annotated("is there a gas/B-poi_type station/I-poi_type nearby/B-distance"),
    ]);

    let (delex, alignment) = delexicalise(&corpus.utterances[1]);
    println!("delexicalised: {delex}");
    println!("alignment:     {alignment:?}");
    println!("frame:         {}", delex.frame());

    let map = build_slot_value_map(&corpus);
    println!("\nslot-value map ({} contexts):\n{}", map.len(), map.to_tsv());

    let unseen = DelexUtterance::from_tokens(
        "where is the <distance> <poi_type>"
            .split_whitespace()
            .map(String::from)
            .collect(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..3 {
        let u = realise(&unseen, &map, &mut rng).unwrap();
        let tagged: Vec<String> = u
            .tokens()
            .iter()
            .zip(u.tags())
            .map(|(w, t)| format!("{w}/{t}"))
            .collect();
        println!("realised: {}", tagged.join(" "));
    }
}
