//! Artifact locations, all relative to the output directory.

use std::path::{Path, PathBuf};

use tactile_diffusion::dataset::CorpusKind;

pub const CONFIG_FILE: &str = "config.toml";
pub const CORPORA_DIR: &str = "corpora";
pub const PRETRAIN_DIR: &str = "pretrain";
pub const FINETUNE_DIR: &str = "finetune";
pub const TRAIN_SUMMARY_FILE: &str = "log.json";
pub const SAMPLES_DIR: &str = "samples";
pub const EVAL_SAMPLES: &str = "finetune_test";
pub const CLASSIFIER_SAMPLES: &str = "classifier_train";
pub const SAMPLE_INDEX_FILE: &str = "index.json";
pub const EVAL_DIR: &str = "eval";
pub const SIMILARITY_FILE: &str = "similarity.json";
pub const PANELS_DIR: &str = "panels";
pub const COMPARE_DIR: &str = "compare";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TABLE_FILE: &str = "report.txt";

pub fn corpus_dir(out: &Path, kind: CorpusKind) -> PathBuf {
    out.join(CORPORA_DIR).join(kind.name())
}
