use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the transport, alignment and modulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("length mismatch in {context}: expected {expected}, found {found}")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("feature row {row} has norm {norm:e}, below the zero-norm threshold")]
    ZeroNormFeature { row: usize, norm: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid mass vector: {0}")]
    InvalidMass(String),

    #[error("cost entry ({row}, {col}) = {value} outside [0, 2]")]
    CostOutOfRange { row: usize, col: usize, value: f64 },

    #[error("invalid solver options: {0}")]
    InvalidOptions(String),

    #[error("balanced solver needs equal total masses, got {alpha} and {beta}")]
    UnbalancedInput { alpha: f64, beta: f64 },

    #[error("dual potential left the finite range after {iters} iterations; eta is too small for the cost scale")]
    NonFiniteDual { iters: usize },

    #[error("plan entry ({row}, {col}) = {value} is negative")]
    NegativePlanEntry { row: usize, col: usize, value: f64 },

    #[error("instance of size {n} exceeds the oracle limit of {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("projected gradient diverged at step {step}")]
    Diverged { step: usize },

    #[error("unsupported plan expansion scale {0} (expected 2 or 4)")]
    UnsupportedScale(usize),

    #[error("resolution mismatch: {0}")]
    ResolutionMismatch(String),

    #[error("positional normalization needs at least 2 channels, got {0}")]
    TooFewChannels(usize),

    #[error("plan row {0} carries no mass")]
    EmptyRow(usize),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("{n} features cannot be arranged on a square grid")]
    NotSquare { n: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
