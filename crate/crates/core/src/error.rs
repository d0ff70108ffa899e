use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no frames found in {0}")]
    NoFrames(PathBuf),
    #[error("inconsistent frame sequence: {name} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    InconsistentSequence {
        name: String,
        want_w: usize,
        want_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("failed to decode {name}: {reason}")]
    Decode { name: String, reason: String },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("value {0} outside [0, 1]")]
    Range(f32),
    #[error("bad F32M container: {0}")]
    Format(String),
    #[error("truncated F32M payload: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input")]
    EmptyInput,
    #[error("at least two frames are required, got {0}")]
    InsufficientFrames(usize),
    #[error("invalid rectangle: {0}")]
    InvalidRect(String),
    #[error("no space for a torso below face at {0:?}")]
    NoTorsoSpace(crate::imaging::Rect),
    #[error("face detector failed: {0}")]
    Detector(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite loss encountered at coordinate {0:?}")]
    Numerical(Option<usize>),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// Whether the error stems from bad user input rather than a failing stage.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_input_error(),
            Error::NoFrames(_)
            | Error::InconsistentSequence { .. }
            | Error::Decode { .. }
            | Error::InvalidFrame(_)
            | Error::Range(_)
            | Error::Format(_)
            | Error::Truncated { .. }
            | Error::InvalidScene(_)
            | Error::InvalidConfig(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Image(_) => true,
            _ => false,
        }
    }
}
