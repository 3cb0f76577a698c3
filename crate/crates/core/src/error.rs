use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("scatterer {index} lies at z = {z} m, on or behind the aperture plane")]
    ScattererBehindAperture { index: usize, z: f64 },

    #[error("phase center ({x:.6}, {y:.6}) does not land on the virtual aperture grid")]
    OffGridPhaseCenter { x: f64, y: f64 },

    #[error("phase centers collide on virtual cell ({row}, {col})")]
    PhaseCenterCollision { row: usize, col: usize },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("image is {rows}x{cols}, smaller than the {window}x{window} window")]
    ImageTooSmall {
        rows: usize,
        cols: usize,
        window: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
