use std::path::PathBuf;

/// Errors produced anywhere in the generation and evaluation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("character {0:?} is not in the alphabet")]
    UnknownCharacter(char),

    #[error("empty text")]
    EmptyText,

    #[error("text of {len} characters exceeds the limit of {max}")]
    TextTooLong { len: usize, max: usize },

    #[error("text {text:?} does not fit the canvas at minimum scale ({width:.1} px > {limit} px)")]
    DoesNotFit {
        text: String,
        width: f32,
        limit: usize,
    },

    #[error("writer id {id} out of range (have {count} writers)")]
    WriterOutOfRange { id: usize, count: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{mode} mode requires {field}")]
    MissingInput {
        mode: &'static str,
        field: &'static str,
    },

    #[error("empty {0} split")]
    EmptySplit(&'static str),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl std::fmt::Display, got: impl std::fmt::Display) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Stable short identifier used by the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnknownCharacter(_) => "unknown_character",
            Error::EmptyText => "empty_text",
            Error::TextTooLong { .. } => "text_too_long",
            Error::DoesNotFit { .. } => "does_not_fit",
            Error::WriterOutOfRange { .. } => "writer_out_of_range",
            Error::Shape { .. } => "shape",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::MissingInput { .. } => "missing_input",
            Error::EmptySplit(_) => "empty_split",
            Error::Diverged { .. } => "diverged",
            Error::TooFewSamples { .. } => "too_few_samples",
            Error::NonFinite(_) => "non_finite",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Json(_) => "json",
            Error::Tensor(_) => "tensor",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
