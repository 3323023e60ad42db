//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by the capture, simulation, estimation, and navigation
/// stages.
#[derive(Error, Debug)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: size {bytes} B is not a multiple of 4 (int16 I/Q pairs)")]
    SizeNotMultipleOfFour { path: PathBuf, bytes: u64 },

    #[error("capture metadata claims {expected} samples but file holds {actual}")]
    MetaSizeMismatch { expected: u64, actual: u64 },

    #[error("frame {k} out of range: capture holds {available} full frames")]
    FrameOutOfRange { k: usize, available: usize },

    #[error("{clipped} of {total} samples clip int16 range (tolerance {tolerance})")]
    Clipping {
        clipped: usize,
        total: usize,
        tolerance: f64,
    },

    #[error("length mismatch in {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("frequency grid is empty or malformed (f_min {f_min}, f_max {f_max}, f_step {f_step})")]
    BadFrequencyGrid { f_min: f64, f_max: f64, f_step: f64 },

    #[error("ephemeris times not strictly increasing at row {row}")]
    NonMonotoneEphemeris { row: usize },

    #[error("ephemeris for {sv_id} needs at least 2 samples, got {count}")]
    EphemerisTooShort { sv_id: String, count: usize },

    #[error("t = {t} s outside ephemeris span [{t_min}, {t_max}]")]
    OutOfEphemerisSpan { t: f64, t_min: f64, t_max: f64 },

    #[error("satellite and receiver positions coincide")]
    CoincidentPositions,

    #[error("beacon estimate is unresolved: {what}")]
    UnresolvedBeacon { what: String },

    #[error("under-determined system: {measurements} measurements for {unknowns} unknowns")]
    UnderDetermined { measurements: usize, unknowns: usize },

    #[error("singular geometry: condition number {condition:.3e}; weakest direction(s): {directions}")]
    SingularGeometry { condition: f64, directions: String },

    #[error("refinement keeps {kept} measurements, below the {unknowns} unknowns")]
    RefinementTooFew { kept: usize, unknowns: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("invalid configuration: {what}")]
    InvalidConfig { what: String },

    #[error("malformed CSV {path}: line {line}: {what}")]
    Csv {
        path: PathBuf,
        line: usize,
        what: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(what: impl Into<String>) -> Self {
        Error::InvalidConfig { what: what.into() }
    }
}
