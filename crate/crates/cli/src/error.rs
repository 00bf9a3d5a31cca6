use thiserror::Error;

/// Validation problems exit with 1, everything else with 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(vec![msg.into()])
    }
}

macro_rules! runtime_from {
    ($($t:ty),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        })*
    };
}

runtime_from!(
    std::io::Error,
    serde_json::Error,
    auscult_core::alignment::AlignError,
    auscult_core::encoder::EncoderError,
    auscult_core::eval::EvalError,
    auscult_core::numerics::NumericsError,
    auscult_core::reports::ReportError,
    auscult_core::retrieval::RetrievalError,
    auscult_core::signal::SignalError,
    auscult_core::teacher::TeacherError,
);
