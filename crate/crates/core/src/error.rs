//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Categorized error for every fallible operation in the pipeline.
///
/// The category name (see [`Error::category`]) is stable and is what the CLI
/// prints in its `error[<category>]: ...` diagnostic line.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad resolutions, mismatched list lengths,
    /// parameters outside their documented ranges.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or empty input data (files, clouds, scan logs, poses).
    #[error("input error: {0}")]
    Input(String),

    /// Matrix/vector dimension mismatch between pipeline stages.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Scalar argument outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A pose or frame that cannot define the requested quantity.
    #[error("degenerate pose: {0}")]
    DegeneratePose(String),

    /// Linear solver failed to converge or factorize.
    #[error("solver error: {0}")]
    Solver(String),

    /// A fitted or solved model violates its contract.
    #[error("model error: {0}")]
    Model(String),

    /// A probe point penetrated the surface but left the voxel grid.
    #[error("model coverage error: {0}")]
    Coverage(String),

    /// Surface extraction could not produce an estimate.
    #[error("extraction error: {0}")]
    Extraction(String),

    /// File format violation (headers, field counts, magic bytes).
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable category tag used by the CLI for its one-line error reports.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::Dimension(_) => "dimension",
            Error::Domain(_) => "domain",
            Error::DegeneratePose(_) => "degenerate-pose",
            Error::Solver(_) => "solver",
            Error::Model(_) => "model",
            Error::Coverage(_) => "coverage",
            Error::Extraction(_) => "extraction",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}
