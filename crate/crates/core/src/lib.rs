//! Unbalanced entropic optimal transport for semantic feature alignment.

pub mod alignment;
pub mod cli;
pub mod error;
pub mod measures;
pub mod metrics;
pub mod oracle;
pub mod seace;
pub mod sinkhorn;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, Result};
