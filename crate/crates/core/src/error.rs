use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate out of range: {0}")]
    Range(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value at sample {index}")]
    NonFinite { index: usize },

    #[error("empty reconstruction: no pixel with positive reconstructed depth")]
    EmptyReconstruction,

    #[error("vertical-motion: vertical ratio {ratio:.4} exceeds {max:.4}")]
    VerticalMotion { ratio: f64, max: f64 },

    #[error("static-viewpoint: baseline is zero")]
    StaticViewpoint,

    #[error("degenerate geometry at pixel ({x}, {y}): point coincides with target camera")]
    DegenerateGeometry { x: usize, y: usize },

    #[error("insufficient overlap: coverage {coverage:.4} below minimum {min:.4}")]
    InsufficientOverlap { coverage: f64, min: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure in pair ({source_frame}, {target_frame}) at pixel ({x}, {y}): {what}")]
    Numerical {
        source_frame: usize,
        target_frame: usize,
        x: usize,
        y: usize,
        what: String,
    },

    #[error("parse error in {file} at byte {offset}: {message}")]
    Parse {
        file: String,
        offset: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(file: impl Into<String>, offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            offset,
            message: message.into(),
        }
    }

    /// True for failures that arise during computation rather than from bad
    /// inputs. Non-finite values read from files count as bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. })
    }
}
