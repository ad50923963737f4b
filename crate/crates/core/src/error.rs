use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("element {element}: {field} = {value} is outside its valid range")]
    OutOfRange {
        element: usize,
        field: &'static str,
        value: f64,
    },
    #[error("layout has {count} elements, the maximum is {max}")]
    TooManyElements { count: usize, max: usize },
    #[error("element {element}: category {category} is outside 1..={num_categories}")]
    BadCategory {
        element: usize,
        category: u32,
        num_categories: u32,
    },
    #[error("vocabulary has no fitted centroids for {0}")]
    UnfittedVocab(&'static str),
    #[error("element slot {slot} mixes content with PAD/MASK tokens")]
    PartialElement { slot: usize },
    #[error("token {token} at position {position} does not belong to modality {modality}")]
    ModalityMismatch {
        position: usize,
        token: u32,
        modality: &'static str,
    },
    #[error("task {0} requires at least one element")]
    EmptyLayout(&'static str),
    #[error("no data to fit {0}")]
    EmptyData(&'static str),
    #[error("token {0} is not a geometric token")]
    NotGeometric(u32),
    #[error("schedule is infeasible at step {step}: beta = {beta}")]
    InfeasibleSchedule { step: usize, beta: f64 },
    #[error("q(z_t | z_0) is zero for z_t = {z_t}, z_0 = {z_0} at t = {t}")]
    ZeroEvidence { z_t: usize, z_0: usize, t: usize },
    #[error("non-finite loss at batch {batch}")]
    NonfiniteLoss { batch: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid condition: {0}")]
    InvalidCondition(String),
    #[error("every state at position {position} is suppressed")]
    AllMassesZero { position: usize },
    #[error("no probability mass on geometric tokens at position {position}")]
    NoGeometricMass { position: usize },
    #[error("layouts have different category multisets")]
    CategoryMismatch,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) => ErrorClass::Usage,
            Error::InfeasibleSchedule { .. }
            | Error::ZeroEvidence { .. }
            | Error::NonfiniteLoss { .. }
            | Error::AllMassesZero { .. }
            | Error::NoGeometricMass { .. }
            | Error::ShapeMismatch(_)
            | Error::Tensor(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
