use std::path::PathBuf;

use thiserror::Error;

/// Broad failure classes. The CLI maps each class onto a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Validation,
    Degenerate,
    Config,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("provenance violation: {0}")]
    ProvenanceViolation(String),
    #[error("signal `{0}` is constant; correlation undefined")]
    DegenerateSignal(String),
    #[error("sampled concept labels have zero weighted variance")]
    DegenerateConcept,
    #[error("strategy `{0}` requires a guide vector")]
    MissingGuide(String),
    #[error("index {index} out of range for dataset of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("ground-truth correlation is zero for entry {0}")]
    ZeroGroundTruth(usize),
    #[error("rating set is empty")]
    EmptyRatings,
    #[error("no prior score for input {0}")]
    MissingPriorScore(usize),
    #[error("no ratings with ground truth available for calibration")]
    NoCalibrationData,
    #[error("every candidate concept is degenerate")]
    AllDegenerate,
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("unknown neuron `{0}`")]
    UnknownNeuron(String),
    #[error("explanation is empty")]
    EmptyExplanation,
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("no sweep cell fits within a budget of {0} USD")]
    NoFeasibleCell(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::DegenerateSignal(_)
            | Error::DegenerateConcept
            | Error::ZeroGroundTruth(_)
            | Error::AllDegenerate => ErrorClass::Degenerate,
            Error::Config(_) | Error::NoFeasibleCell(_) => ErrorClass::Config,
            _ => ErrorClass::Validation,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
