//! Generalized bandsplit source separation toolkit.
//!
//! The library covers the full pipeline: psychoacoustic frequency scales and
//! overlapping band definitions ([`scales`], [`bands`]), STFT/iSTFT and
//! chunked overlap-add inference ([`dsp`]), the common-encoder masking
//! network ([`model`]), the SNR-family losses ([`losses`]), a reproducible
//! training loop ([`train`]), oracle separators and metrics ([`eval`]), and
//! data ingestion plus a deterministic synthetic corpus ([`data`]).

pub mod bands;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod scales;
pub mod train;

pub use error::{Error, Result};
