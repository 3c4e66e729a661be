//! Diversity-ranked seq2seq data augmentation for slot-filling corpora.
//!
//! Utterances are delexicalised, clustered by semantic frame and paired with
//! their most diverse cluster mates. A rank-conditioned attentional
//! encoder-decoder learns those pairs; its generations are re-lexicalised
//! with context-keyed slot values and added to the training data of a BiLSTM
//! tagger.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod delex;
pub mod diversity;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod seq2seq;
pub mod synth;
pub mod tagger;

pub use config::{AugmentOptions, PipelineConfig};
pub use corpus::{Corpus, SemanticFrame, SlotTag, Utterance};
pub use delex::{delexicalise, realise, DelexUtterance, SlotValueMap};
pub use diversity::{build_training_pairs, diversity_score, edit_distance, rank_alternatives, TranslationPair};
pub use eval::{chunk_prf, ChunkMetrics, MetricsReport};
pub use pipeline::{run_pipeline, run_pipeline_on};
pub use seq2seq::{train_generator, GenConfig, Generator};
pub use synth::make_synthetic;
pub use tagger::{train_tagger, Tagger, TaggerConfig};
