//! Quantum-noise model and sub-SQL measurement pipeline for a squeezed-light
//! interferometer with suspended test masses.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fitting;
pub mod io;
pub mod model;
pub mod physics;
pub mod pipeline;
pub mod rng;
pub mod spectral;
pub mod spectrum;
pub mod synth;
pub mod workflow;

pub use error::{Error, Result};
pub use physics::{FrequencyGrid, InterferometerParams, ParamFile, SqueezerParams};
pub use spectral::{EstimatorConfig, Statistic, TimeSeries};
pub use spectrum::{SpectralDensity, Spectrum};
