use thiserror::Error;

#[derive(Debug, Error)]
pub enum LandmarkError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("image {image_id}: {message}")]
    Structure { image_id: String, message: String },
    #[error("image {image_id}: {message}")]
    Value { image_id: String, message: String },
    #[error("invalid JSON landmark file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TiltError {
    #[error("vertebra {}: {} endplate landmarks coincide", .vertebra + 1, if *.lower { "lower" } else { "upper" })]
    DegenerateEndplate { vertebra: usize, lower: bool },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("{what}: expected {expected}, found {found}")]
    Mismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("{what}: non-finite value at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("{what}: {message}")]
    Invalid { what: &'static str, message: String },
}

impl ShapeError {
    pub(crate) fn mismatch(
        what: &'static str,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        ShapeError::Mismatch {
            what,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic bytes {0:?}")]
    Magic([u8; 4]),
    #[error("truncated container: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("image ids differ: only in predictions {only_pred:?}, only in ground truth {only_gt:?}")]
    Pairing {
        only_pred: Vec<String>,
        only_gt: Vec<String>,
    },
    #[error("duplicate image id {0}")]
    Duplicate(String),
    #[error("no image pairs to evaluate")]
    Empty,
    #[error("delta must be positive, got {0}")]
    Delta(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid spine spec: {0}")]
    Spec(String),
    #[error("vertebrae {} and {} overlap", .upper + 1, .lower + 1)]
    Overlap { upper: usize, lower: usize },
    #[error("generated landmarks rejected: {0}")]
    Landmark(String),
}
