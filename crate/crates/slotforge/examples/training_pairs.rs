//! Cluster a corpus by semantic frame and build rank-tagged translation
//! pairs, with and without the diversity filter.
//!
//! ```bash
//! cargo run --example training_pairs
//! ```

use slotforge::corpus::cluster_by_frame;
use slotforge::diversity::{build_training_pairs_with, PairOptions};
use slotforge::synth::make_synthetic;

fn main() {
    let (train, _, _) = make_synthetic(3, 40, 1);
    let clusters = cluster_by_frame(&train);
    println!("{} utterances in {} frame clusters", train.len(), clusters.len());
    for (frame, members) in &clusters {
        println!("  {:>3} x {frame}", members.len());
    }

    let filtered = build_training_pairs_with(&train, PairOptions::default());
    let unfiltered = build_training_pairs_with(
        &train,
        PairOptions {
            filter: false,
            ..Default::default()
        },
    );
    let unranked = build_training_pairs_with(
        &train,
        PairOptions {
            ranks: false,
            ..Default::default()
        },
    );
    println!(
        "\npairs: {} filtered, {} unfiltered, {} without ranks",
        filtered.len(),
        unfiltered.len(),
        unranked.len()
    );
    println!("\nfirst filtered pairs (source #rank TAB target):");
    for p in filtered.iter().take(6) {
        println!("  {p}");
    }
}
