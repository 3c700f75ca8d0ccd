//! Error type shared by every stage of the pipeline.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocError {
    /// Two nodes share a position, so no direction or distance can be formed.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Elevation at exactly ±π/2; azimuth partials are undefined there.
    #[error("gimbal singularity on link {link}: elevation {phi} rad")]
    GimbalSingularity { link: usize, phi: f64 },

    #[error("invalid link parameters: {0}")]
    InvalidLink(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The optimal schedule needs at least 2N+1 slots.
    #[error("training overhead too small: K = {k} but at least {required} slots are needed")]
    InsufficientOverhead { k: usize, required: usize },

    #[error("invalid power configuration: {0}")]
    InvalidPower(String),

    /// The Fisher matrix cannot be inverted; `direction` is the near-null eigenvector.
    #[error("unidentifiable configuration (condition number {condition:.3e}), near-null direction {direction:?}")]
    Unidentifiable { condition: f64, direction: Vec<f64> },

    /// Interference nulling left no dimensions for the target channel.
    #[error("interference null space is empty for channel {target}")]
    EmptyNullSpace { target: usize },

    #[error("invalid spatial frequency on axis {axis}: value {value}")]
    InvalidFrequency { axis: &'static str, value: f64 },

    #[error("zero channel estimate")]
    ZeroChannel,

    #[error("invalid noise variance {0}")]
    InvalidNoise(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, LocError>;
