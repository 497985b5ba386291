use thiserror::Error;

/// Errors surfaced by the library. Caller bugs (length mismatches, empty
/// inputs) are reported rather than panicking so the CLI can attach stage
/// context.
#[derive(Debug, Error)]
pub enum Error {
    #[error("trajectory length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty trajectory where at least one point is required")]
    EmptyTrajectory,

    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    #[error("dataset shortfall building {split}: requested {requested} segments, only {available} available")]
    DatasetShortfall {
        split: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("non-finite loss at {stage} (index {index})")]
    NonFiniteLoss { stage: &'static str, index: usize },

    #[error("threshold tuning needs both classes present (got {positives} positives of {total})")]
    SingleClass { positives: usize, total: usize },

    #[error("csv ingest: missing required column '{0}'")]
    MissingColumn(String),

    #[error("csv ingest: malformed row at line {line}: {why}")]
    MalformedRow { line: usize, why: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("model file {path}: {why}")]
    ModelFormat { path: String, why: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            why: why.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap with a pipeline stage name so failures identify where they came from.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
