//! Post-processing and evaluation for relit frame sequences.

pub mod color;
pub mod error;
pub mod filter;
pub mod flow;
pub mod fusion;
pub mod image;
pub mod io;
pub mod metrics;
pub mod spectrum;
pub mod synth;
pub mod temporal;

pub use error::{Error, Result};
