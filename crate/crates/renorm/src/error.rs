//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("inversion failure: no convergence after {iterations} Newton iterations (residual {residual:e})")]
    InversionFailure { iterations: usize, residual: f64 },

    #[error("return-time overflow: orbit of (theta={theta}, y={y}) exceeded cap {cap}")]
    ReturnTimeOverflow { theta: f64, y: f64, cap: u64 },

    #[error("lift failure: displacement {displacement} exceeds 1/4, canonical lift undefined")]
    LiftFailure { displacement: f64 },

    #[error("invalid isotopy: degenerate at t={t}, y={y}")]
    InvalidIsotopy { t: f64, y: f64 },

    #[error("fragmentation failure: {0}")]
    FragmentationFailure(String),

    #[error("invalid target: boundary residual {residual:e} exceeds tolerance near {place}")]
    InvalidTarget { residual: f64, place: String },

    #[error("degenerate measure: {0}")]
    DegenerateMeasure(String),

    #[error("target not compilable: {0}")]
    NotCompilable(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
