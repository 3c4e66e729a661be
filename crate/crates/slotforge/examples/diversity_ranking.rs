//! Score and rank the paraphrases of one utterance by edit distance times
//! the length difference penalty.
//!
//! ```bash
//! cargo run --example diversity_ranking
//! ```

use slotforge::delex::DelexUtterance;
use slotforge::diversity::{diversity_score, edit_distance, ldp, rank_alternatives};

fn d(s: &str) -> DelexUtterance {
    DelexUtterance::from_tokens(s.split_whitespace().map(String::from).collect())
}

fn main() {
    let source = d("find me the <distance> route to <poi_type>");
    let cluster = [
        d("give me the <distance> route to <poi_type>"),
        d("i 'm desiring to eat at some <poi_type> is there any in <distance>"),
        d("is there a <distance> <poi_type>"),
    ];

    println!("source: {source}\n");
    println!("{:>4} {:>6} {:>7} {:>7}  alternative", "rank", "edit", "ldp", "score");
    for alt in rank_alternatives(&source, &cluster) {
        let (s, t) = (source.tokens(), alt.target.tokens());
        println!(
            "{:>4} {:>6} {:>7.4} {:>7.4}  {}",
            alt.rank,
            edit_distance(s, t),
            ldp(s, t).unwrap(),
            diversity_score(s, t).unwrap(),
            alt.target
        );
    }
}
