//! Orchestration of the tactile diffusion pipeline behind the `tacdiff`
//! binary. Each stage reads and writes artifacts under one output directory.

pub mod commands;
pub mod config;
pub mod layout;

pub use commands::{
    cmd_compare, cmd_eval, cmd_finetune, cmd_sample, cmd_simulate, cmd_train, evaluate, read_train_log, run,
    EvalSummary, SampleSet, StageOutcome,
};
pub use config::{Command, ExperimentConfig, RunConfig, SampleConfig, OUT_ENV};
