//! Error rates, significance testing and report rendering.

mod metrics;
mod report;
mod stats;

pub use metrics::{cer_wer, edit_distance};
pub use report::{
    export_layer_lrs, layer_lrs_csv, render_paired, render_report, render_summaries, summarize, ConditionSummary,
    EvalReport, PairedReport, WriterRow,
};
pub use stats::{
    aggregate_runs, student_t_two_sided, two_sample_t_test, Summary, TTest, VARIANCE_EPS,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {references} references")]
    LengthMismatch { predictions: usize, references: usize },
    #[error("no samples to score")]
    Empty,
    #[error("reference transcriptions must be non-empty")]
    EmptyReference,
    #[error("t-test needs at least two values per sample, got {xs} and {ys}")]
    TooFewSamples { xs: usize, ys: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
