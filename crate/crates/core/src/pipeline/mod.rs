//! Inference chain from measured spectra to the quantum noise: reference
//! subtraction, observed squeezing, stationarity checks, the relative error
//! budget and the two-detector gain calibration.

mod budget;
mod calibration;
mod stationarity;
mod subtraction;

pub use budget::{uncertainty_budget, BudgetComponents, Relative, UncertaintyBudget};
pub use calibration::{calibrate_gain, CalibrationConfig, GainEstimate};
pub use stationarity::{
    stationarity_combined, stationarity_pair, NamedSpectrum, StationarityConfig, StationarityReport,
};
pub use subtraction::{infer_quantum, observed_squeezing, SubtractionResult};

/// Variance inflation of a band average of periodogram-like bins due to the
/// Hann window's neighbour correlation (`|ρ₁| = 2/3`, `|ρ₂| = 1/6`):
/// `1 + 2Σρ²` for the bins themselves.
pub const HANN_BIN_VARIANCE_INFLATION: f64 = 1.0 + 2.0 * (4.0 / 9.0 + 1.0 / 36.0);

/// Same for squared bin fluctuations such as `N_ij²`: `1 + 2Σρ⁴`.
pub const HANN_SQUARED_VARIANCE_INFLATION: f64 = 1.0 + 2.0 * (16.0 / 81.0 + 1.0 / 1296.0);
