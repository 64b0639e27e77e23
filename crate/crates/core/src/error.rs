use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {message}")]
    Manifest { line: u64, message: String },

    #[error("negative speed at line {line}")]
    NegativeSpeed { line: u64 },

    #[error("duplicate frame_id {frame_id:?} at line {line}")]
    DuplicateFrame { frame_id: String, line: u64 },

    #[error("frame {frame_id:?}: label map {} not found", path.display())]
    MissingLabelMap { frame_id: String, path: PathBuf },

    #[error("invalid PGM: {0}")]
    Pgm(String),

    #[error(
        "class id out of range: pixel ({row}, {col}) holds {value}, class_count is {class_count}"
    )]
    ClassOutOfRange {
        value: u8,
        class_count: usize,
        row: usize,
        col: usize,
    },

    #[error("invalid score map: {0}")]
    ScoreMap(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("singular normal equations; supply ridge lambda > 0")]
    Singular,

    #[error("training diverged at iteration {iteration}: loss is not finite")]
    Diverged { iteration: usize },

    #[error("invalid model file: {0}")]
    ModelFormat(String),

    #[error("invalid feature cache: {0}")]
    FeatureCache(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical solvers themselves, as opposed to
    /// bad inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular | Error::Diverged { .. })
    }
}
