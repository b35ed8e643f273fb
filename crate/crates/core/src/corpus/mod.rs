//! Lyrics, manifests, alignment files, the synthetic singing corpus and
//! dataset statistics.

mod clean;
mod lexicon;
mod manifest;
mod oracle;
mod stats;

pub use clean::Cleaner;
pub use lexicon::{G2pOutput, Lexicon, SEP, SEPARATION_MARK, SIL, UNK};
pub use manifest::{
    filter_by_length, load_alignments, load_manifest, read_jsonl, write_jsonl, AlignmentRecord, GroundTruth,
    ManifestEntry, PhonemeSpan,
};
pub use oracle::{gen_synthetic_song, write_synthetic_corpus, PhonemeKind, PhonemeProfile, SyntheticSong, SyntheticSpec};
pub use stats::{dataset_stats, CorpusCounts, DatasetStats, Histogram};
