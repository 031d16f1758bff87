use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure classes shared by every stage of the pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("insufficient detections: {got} accepted, {needed} required")]
    InsufficientDetections { got: usize, needed: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("point is behind the camera (z = {0} mm)")]
    BehindCamera(f64),

    #[error("translation is unobservable: {0}")]
    UnobservableTranslation(String),

    #[error("no consensus: best model has {inliers} inliers, {needed} required")]
    NoConsensus { inliers: usize, needed: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
