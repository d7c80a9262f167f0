//! Corpus formats, preprocessing and the synthetic corpus generator.

pub mod corpus;
pub mod filter;
pub mod formats;
pub mod preprocess;
pub mod synth;

pub use corpus::{load_examples, load_record, load_sentence, Example, Sentence, DEFAULT_VOCAB};
pub use filter::{lowpass, CUTOFF, TRAJECTORY_RATE};
pub use formats::{
    format_ints, format_matrix, parse_durations, parse_matrix, parse_phonemes, read_durations,
    read_matrix, read_phonemes, CorpusManifest, Record, Split,
};
pub use preprocess::{
    lowpass_channels, normalize_sentence, preprocess_trajectory, ChannelStats, STD_FLOOR,
};
pub use synth::{generate_synthetic, ols_baseline, SyntheticSpec, MANIFEST_NAME};

pub use crate::models::{pad_rows as pad_and_mask, unpad_rows as unpad};
