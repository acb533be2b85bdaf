//! Paired corpora: generation, on-disk layout, foreground handling, splits
//! and augmentation.

pub mod corpus;
pub mod io;
pub mod ops;

pub use corpus::{
    build_corpus, load_corpus, plan_corpus, render_corpus, render_sample, BrailleSpec, ClassifierSpec, Corpus,
    CorpusKind, CorpusManifest, GenerationConfig, PairedSample, PlannedSample, PretrainSpec, SampleRecord, Split,
    BACKGROUND_FILE, MANIFEST_FILE,
};
pub use ops::{
    augment_lighting, composite_background, extract_foreground, split_indices, split_pairs, subset_indices,
};
