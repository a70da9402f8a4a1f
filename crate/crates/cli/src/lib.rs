//! Experiment driver behind the `htr-adapt` binary.

pub mod config;
pub mod error;
pub mod run;

pub use config::{ExperimentConfig, Method, OUTPUT_ENV};
pub use error::CliError;
pub use run::{
    adapt_writer, eval_run, gen_data, load_dataset, load_run, report, run_dir, train_seed, AdaptOutcome, EvalMode, LoadedRun,
};
