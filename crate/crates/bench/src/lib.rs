//! Experiment harness for ECG identification: protocols, pipelines,
//! reports and the `ecgid` command line.

use thiserror::Error;

pub mod cli;
pub mod config;
pub mod pipeline;
pub mod protocol;
pub mod report;

pub use config::{ClassifierConfig, FeatureStage, PipelineConfig, Reduction};
pub use pipeline::{extract_cohort, run_on_features, run_pipeline, sweep_top_n, CohortFeatures, RunOptions};
pub use protocol::{split_protocol, Protocol};
pub use report::{render_report, ExperimentReport, ReportFormat, ReportRow};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty cohort: {0}")]
    EmptyCohort(String),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("malformed report: {0}")]
    MalformedReport(String),
    /// A core-stage failure with the subject and stage it happened in.
    #[error("{stage} failed for {subject}: {message}")]
    Stage {
        subject: String,
        stage: &'static str,
        message: String,
    },
    #[error(transparent)]
    Ingest(#[from] ecgid_core::ingest::IngestError),
    #[error(transparent)]
    Dsp(#[from] ecgid_core::dsp::DspError),
    #[error(transparent)]
    Detect(#[from] ecgid_core::detect::DetectError),
    #[error(transparent)]
    Feature(#[from] ecgid_core::features::FeatureError),
    #[error(transparent)]
    Select(#[from] ecgid_core::select::SelectError),
    #[error(transparent)]
    Classify(#[from] ecgid_core::classify::ClassifyError),
}

impl BenchError {
    /// Process exit code: 1 for usage and config mistakes, 2 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Usage(_) | BenchError::Config(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn stage(subject: &str, stage: &'static str, err: impl std::fmt::Display) -> Self {
        BenchError::Stage {
            subject: subject.to_string(),
            stage,
            message: err.to_string(),
        }
    }
}
