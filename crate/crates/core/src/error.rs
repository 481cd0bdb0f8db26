use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RomError>;

#[derive(Debug, Error)]
pub enum RomError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("Coriolis parameter too small ({value:e}) at node {node}")]
    CoriolisTooSmall { node: usize, value: f64 },

    #[error("nonpositive height {value} at node {node}")]
    NonpositiveHeight { node: usize, value: f64 },

    #[error("quasi-Newton failed to converge after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("requested {requested} modes but numerical rank is {rank}")]
    RankExceeded { requested: usize, rank: usize },

    #[error("energy spectrum is identically zero")]
    ZeroSpectrum,

    #[error("zero-norm reference column at snapshot {0}")]
    ZeroNormReference(usize),

    #[error("DEIM selection breaks down at stage {stage}: {reason}")]
    DeimBreakdown { stage: usize, reason: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("unsupported file version: {0}")]
    Version(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("nothing to plot")]
    NothingToPlot,

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl RomError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            RomError::Config(_)
            | RomError::InvalidGrid(_)
            | RomError::InvalidInput(_)
            | RomError::NothingToPlot
            | RomError::Format(_)
            | RomError::Version(_)
            | RomError::Io(_) => 2,
            _ => 3,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(RomError::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
