//! Fixed and learnable acoustic frontends for species-agnostic bird activity
//! detection.
//!
//! The crate covers the whole experimental pipeline:
//!
//! - [`dsp`]: framing, power spectrogram, mel filterbank, log compression
//! - [`gabor`]: 1-D/2-D Gabor kernels, Gaussian low-pass kernels, mel initialization
//! - [`frontends`]: spect, mel, logmel, STRF, TD, PCEN and LEAF with analytic gradients
//! - [`learning`]: compact CNN classifier, BCE loss, Adam, plateau schedule, gradient checking
//! - [`data`]: WAV decoding, dBFS normalization, manifests, stratified splits, synthetic clips
//! - [`stats`]: bootstrap accuracies, Shapiro-Wilk, one-way ANOVA, Tukey HSD
//! - [`cli`]: run configuration, feature files and the `avfe` subcommands

pub mod cli;
pub mod data;
pub mod dsp;
mod error;
pub mod frontends;
pub mod gabor;
mod grid;
mod linalg;
pub mod learning;
pub mod stats;

pub use error::{Error, Result};
pub use grid::Grid;
