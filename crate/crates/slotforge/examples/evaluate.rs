//! Chunk-level precision, recall and F1 with conlleval chunking, including
//! an orphan `I-` tag that opens its own chunk.
//!
//! ```bash
//! cargo run --example evaluate
//! ```

use slotforge::corpus::{parse_conll, SlotTag};
use slotforge::eval::{chunk_prf, extract_chunks, MetricsReport};

const GOLD: &str = "\
flights O
from O
new B-from_city
york I-from_city
to O
denver B-to_city

on O
friday B-date
";

fn tags(s: &str) -> Vec<SlotTag> {
    s.split_whitespace().map(|t| t.parse().unwrap()).collect()
}

fn main() {
    let gold = parse_conll(GOLD).unwrap();
    let predicted = vec![tags("O O I-from_city I-from_city O B-from_city"), tags("O B-date")];

    for (u, p) in gold.iter().zip(&predicted) {
        println!("gold chunks:      {:?}", extract_chunks(u.tags()));
        println!("predicted chunks: {:?}", extract_chunks(p));
    }

    let metrics = chunk_prf(&gold, &predicted).unwrap();
    let mut report = MetricsReport::new();
    report.push_metrics("test", &metrics);
    print!("\n{}", report.to_tsv());
}
