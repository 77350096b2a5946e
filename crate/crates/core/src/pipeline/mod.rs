//! Corpus handling, workspace stages and synthetic corpora.

mod config;
mod manifest;
mod stages;
mod stats;
mod synth;
mod workspace;

pub use config::{
    CorpusConfig, FrameConfig, PipelineConfig, ScoringConfig, TransformConfig, UbmConfig, VowelConfig,
};
pub use manifest::{split_corpus, split_sizes, CorpusManifest, ManifestEntry, Split, MIN_UTTERANCES_PER_ACCENT};
pub use stages::{remap_labels, Pipeline, Stage, VowelWeightFile};
pub use stats::{corpus_stats, format_hms, AccentStats, CorpusStats, VadReport, VadRow};
pub use synth::{
    generate_audio_corpus, generate_synthetic_corpus, synth_tone_silence, AccentStyle, GeneratorParams,
    PhoneMixture, SynthUtterance, SyntheticSpec, ToneSilence, ToneSilenceSpec, DEFAULT_POPULARITY,
};
pub use workspace::{sha256_file, FileDigest, Provenance, Workspace};
