use htr_adapt::data::DataError;
use htr_adapt::eval::EvalError;
use htr_adapt::meta::MetaError;
use htr_adapt::models::ModelError;
use htr_adapt::writer_codes::WriterCodeError;

/// Failures grouped by the exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(e) => CliError::Data(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) | ModelError::Checkpoint(_) => CliError::Config(e.to_string()),
            ModelError::SequenceTooLong { .. } | ModelError::UnknownCharacter(_) | ModelError::EmptyBatch => {
                CliError::Data(e.to_string())
            }
            ModelError::NonFiniteLoss(_) => CliError::Numeric(e.to_string()),
            e => CliError::Other(e.to_string()),
        }
    }
}

impl From<MetaError> for CliError {
    fn from(e: MetaError) -> Self {
        match e {
            MetaError::Model(m) => m.into(),
            MetaError::Data(d) => d.into(),
            MetaError::InsufficientSamples { .. } => CliError::Data(e.to_string()),
            MetaError::NonFiniteLoss(_) => CliError::Numeric(e.to_string()),
            MetaError::InvalidConfig(_) | MetaError::VariantMismatch(_) => CliError::Config(e.to_string()),
            e => CliError::Other(e.to_string()),
        }
    }
}

impl From<WriterCodeError> for CliError {
    fn from(e: WriterCodeError) -> Self {
        match e {
            WriterCodeError::Model(m) => m.into(),
            WriterCodeError::InsufficientSamples { .. }
            | WriterCodeError::InsufficientInk { .. }
            | WriterCodeError::MixedWriterBatch(..)
            | WriterCodeError::UnknownWriter(_) => CliError::Data(e.to_string()),
            WriterCodeError::ShapeMismatch(_) | WriterCodeError::Codebook(_) => CliError::Config(e.to_string()),
            e => CliError::Other(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Other(e.to_string())
    }
}
