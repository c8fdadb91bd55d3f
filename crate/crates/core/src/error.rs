use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// The inverse transform left an imaginary component, which only happens
    /// when a mask broke conjugate symmetry.
    #[error("symmetry violation: imaginary residue {residue:e} exceeds {limit:e}")]
    SymmetryViolation { residue: f32, limit: f32 },

    #[error("input error: {}: {reason}", path.display())]
    Input { path: PathBuf, reason: String },

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("io error: {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for the error class: 1 input, 2 config, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input { .. } | Error::Format { .. } | Error::Io { .. } => 1,
            Error::Config(_) => 2,
            Error::Shape(_) | Error::Numeric(_) | Error::SymmetryViolation { .. } => 3,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
