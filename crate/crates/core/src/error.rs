use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("field is already centered on its reference point")]
    AlreadyCentered,
    #[error("field must be centered on its reference point first")]
    NotCentered,
    #[error("field has no nodes")]
    EmptyField,
    #[error("non-finite value in node {index}")]
    NonFinite { index: usize },
    #[error("sensor region selected no nodes")]
    EmptySelection,
    #[error("invalid sensor region: {0}")]
    InvalidRegion(String),
    #[error("at least {required} nodes are needed, got {got}")]
    TooFewNodes { required: usize, got: usize },
    #[error("degenerate node geometry: {0}")]
    DegenerateGeometry(String),
    #[error("field is not symmetric about its reference point")]
    NotSymmetric,
    #[error("rotation entry {value} is outside [-1, 1]")]
    EntryOutOfRange { value: f64 },
    #[error("matrix is not a proper rotation (orthogonality error {orthogonality:e}, det {det})")]
    NotARotation { orthogonality: f64, det: f64 },

    #[error("wrench component {component} has zero magnitude")]
    ZeroMagnitude { component: &'static str },
    #[error("wrench has no nonzero component")]
    ZeroWrench,
    #[error("experiments do not form a canonical wrench scheme: {0}")]
    NotCanonical(String),
    #[error("insufficient experiments: need at least 6, got {got}")]
    InsufficientExperiments { got: usize },
    #[error("wrench matrix has rank {rank} < 6")]
    RankDeficientWrenches { rank: usize },
    #[error("compliance matrix is singular (smallest eigenvalue {min_eigenvalue:e})")]
    SingularCompliance { min_eigenvalue: f64 },

    #[error("insufficient degrees of freedom for noise estimation (fit {index} has {nodes} nodes)")]
    InsufficientDof { index: usize, nodes: usize },
    #[error("outlier fraction {0} is outside [0, 1)")]
    InvalidFraction(f64),
    #[error("outlier filtering would leave {remaining} nodes, at least 3 are needed")]
    TooFewRemaining { remaining: usize },
    #[error("no covariance supplied for experiment {index}")]
    MissingCovariance { index: usize },
    #[error("negative noise level {0}")]
    NegativeSigma(f64),

    #[error("invalid mesh pattern: {0}")]
    InvalidPattern(String),
    #[error("invalid beam parameters: {0}")]
    InvalidBeam(String),

    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("unsupported units: {0}")]
    InvalidUnits(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("experiment {index}: {source}")]
    InExperiment {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors raised by the numerics rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        if let Error::InExperiment { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::DegenerateGeometry(_)
                | Error::NotSymmetric
                | Error::EntryOutOfRange { .. }
                | Error::NotARotation { .. }
                | Error::InsufficientExperiments { .. }
                | Error::RankDeficientWrenches { .. }
                | Error::SingularCompliance { .. }
                | Error::InsufficientDof { .. }
                | Error::TooFewRemaining { .. }
                | Error::TooFewNodes { .. }
        )
    }

    pub fn in_experiment(self, index: usize) -> Self {
        match self {
            e @ Error::InExperiment { .. } => e,
            e => Error::InExperiment {
                index,
                source: Box::new(e),
            },
        }
    }

    /// Index of the experiment the error was raised for, if any.
    pub fn experiment_index(&self) -> Option<usize> {
        match self {
            Error::InExperiment { index, .. } => Some(*index),
            _ => None,
        }
    }
}
