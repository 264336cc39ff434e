use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("degenerate segment at ({east}, {north}): endpoints coincide")]
    DegenerateSegment { east: f64, north: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("unknown segment id {0}")]
    UnknownSegment(usize),
    #[error("road network is empty")]
    Empty,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KalmanError {
    #[error("least squares needs at least 4 satellites, got {0}")]
    TooFewSatellites(usize),
    #[error("least squares did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("degenerate satellite geometry")]
    DegenerateGeometry,
    #[error("singular road innovation covariance (det = {det:e})")]
    SingularInnovation { det: f64 },
    #[error("non-positive time step {0}")]
    NonPositiveStep(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar([usize; 2]),
    #[error("{op}: index {index} out of range for shape {shape:?}")]
    OutOfRange {
        op: &'static str,
        index: usize,
        shape: [usize; 2],
    },
    #[error("{op}: singular matrix")]
    Singular { op: &'static str },
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: unsupported format header {found:?}, expected {expected:?}")]
    Version {
        line: usize,
        found: String,
        expected: &'static str,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invalid reference: {message}")]
    Reference { line: usize, message: String },
    #[error("byte offset {offset}: {message}")]
    Binary { offset: usize, message: String },
    #[error("truncated input: {0}")]
    Truncated(String),
}

/// Crate-level error for the higher layers (training, harness, CLI).
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
