use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error ({context}): {source}")]
    Codec {
        context: String,
        #[source]
        source: image::ImageError,
    },

    #[error("JPEG encoder error ({context}): {source}")]
    Encode {
        context: String,
        #[source]
        source: jpeg_encoder::EncodingError,
    },

    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV error in {context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },

    /// The input data cannot support the requested statistic (e.g. constant scores).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// A computation produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than an internal fault.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Argument(_) | Error::Io { .. } | Error::Json { .. } | Error::Csv { .. } | Error::Degenerate(_)
        )
    }
}
