//! The user-facing half of the lab: JSON run configs, binary/CSV file
//! formats, content-addressed run directories, and the command layer the
//! `hac-lab` binary dispatches into. All computation lives in `hac-core`;
//! this crate only moves bytes and orchestrates.

#![forbid(unsafe_code)]

pub mod commands;
pub mod config;
pub mod formats;
pub mod gradcheck;

/// Failures grouped by the exit code they map to: 1 validation, 2
/// numerical, 3 I/O.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Validation(_) => 1,
            LabError::Numerical(_) => 2,
            LabError::Io(_) => 3,
        }
    }
}

impl From<hac_core::Error> for LabError {
    fn from(e: hac_core::Error) -> Self {
        if e.is_numerical() {
            LabError::Numerical(e.to_string())
        } else {
            LabError::Validation(e.to_string())
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub type LabResult<T> = Result<T, LabError>;
