//! Error type shared by all simulator modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The truncated basis is too small for the requested construction.
    /// `leakage` is the measured occupation of the guard band.
    #[error("cutoff {cutoff} too small for {what}: guard-band leakage {leakage:.3e} exceeds {tol:.1e}")]
    InsufficientCutoff {
        what: String,
        cutoff: usize,
        leakage: f64,
        tol: f64,
    },

    /// Leakage breached mid-sequence; reports the offending pulse.
    #[error("cutoff leakage breach at pulse {pulse_index}: leakage {leakage:.3e} exceeds {tol:.1e}")]
    SequenceLeakage {
        pulse_index: usize,
        leakage: f64,
        tol: f64,
    },

    #[error("unknown hamiltonian id `{0}` in pulse sequence")]
    UnknownHamiltonian(String),

    #[error("step size too coarse: halving-step disagreement {disagreement:.3e} > {tol:.1e} in trace distance")]
    StepTooCoarse { disagreement: f64, tol: f64 },

    #[error("fit failed: {0}")]
    FitFailure(String),

    /// Model-free design matrix is numerically rank deficient.
    #[error("design matrix ill-conditioned: condition number {condition:.3e} (times too few or aliased)")]
    RankDeficient { condition: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization failure: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
