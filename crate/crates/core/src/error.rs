use thiserror::Error;

/// Errors raised by the library.
///
/// Class ids carried by errors are 1-based, matching the external file formats.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("class {0} has no labeled pixel")]
    EmptyClass(usize),

    #[error("non-finite entry at ({0}, {1})")]
    NonFiniteEntry(usize, usize),

    #[error("negative dictionary entry at ({0}, {1})")]
    NegativeDictionary(usize, usize),

    #[error("dictionary column {0} is identically zero")]
    ZeroDictionaryColumn(usize),

    #[error("observation matrix is identically zero")]
    ZeroImage,

    #[error("infeasible state: {0}")]
    InfeasibleState(String),

    #[error("non-finite iterate in block {block} at iteration {iteration}")]
    NonFiniteIterate { iteration: usize, block: &'static str },

    #[error("k-means needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("spectral angle undefined for a zero vector")]
    ZeroVector,

    #[error("group lasso pruned every candidate; lower alpha_group")]
    AllRowsPruned,

    #[error("evaluation mask selects no pixel")]
    EmptyMask,

    #[error("training fraction {0} outside (0, 1]")]
    InvalidFraction(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bad magic bytes in matrix file")]
    BadMagic,

    #[error("truncated matrix file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("unsupported matrix file version {0}")]
    VersionUnsupported(u16),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
