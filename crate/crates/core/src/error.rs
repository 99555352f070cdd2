//! Crate-wide error type.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Domain geometry or cell counts that cannot produce a valid mesh.
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    /// A parameter set violates its documented validity range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A nodal field or indicator is bound to a different mesh version than
    /// the mesh it is being used with.
    #[error("stale field: bound to mesh version {bound}, current mesh version is {current}")]
    StaleField { bound: u64, current: u64 },

    /// A field has the wrong number of entries for its mesh.
    #[error("invalid field: {0}")]
    InvalidField(String),

    /// A point could not be located in the source mesh during field transfer.
    #[error("transfer failure: point ({x}, {y}, {z}) lies outside the source mesh beyond tolerance")]
    TransferFailure { x: f64, y: f64, z: f64 },

    /// The assembled system is structurally broken (indefinite matrix,
    /// inconsistent constraints, empty load set).
    #[error("assembly error: {0}")]
    Assembly(String),

    /// An iterative solve hit its iteration cap without reaching tolerance.
    #[error("solver failed to converge: {0}")]
    ConvergenceFailure(String),

    /// A structural invariant of the mesh was violated; indicates an internal
    /// bug rather than bad user input.
    #[error("mesh invariant violated: {0}")]
    MeshInvariant(String),

    /// Configuration file syntax or content error, with 1-based line number.
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    /// A data file does not match its expected format.
    #[error("file format error: {0}")]
    Format(String),

    /// File-system error carrying the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
