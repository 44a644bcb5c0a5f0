use serde::{Deserialize, Serialize};

use super::HANN_BIN_VARIANCE_INFLATION;
use crate::error::{domain, Error, Result};
use crate::spectral::{estimate_csd, estimate_psd, EstimatorConfig, TimeSeries};
use crate::spectrum::{SpectralDensity, Spectrum};
use crate::synth::recombine;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Shot-noise dominated band used for the gain, Hz.
    pub band_hz: (f64, f64),
    /// Fraction of the light on detector A.
    pub split_fraction: f64,
    /// Statistic is forced to the mean so PSD and CSD share one estimator.
    pub segment_seconds: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            band_hz: (100.0, 200.0),
            split_fraction: 0.5,
            segment_seconds: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainEstimate {
    pub g: f64,
    pub g_squared: f64,
    /// 1σ relative error of `g²`, which scales every calibrated PSD.
    pub relative_error_g_squared: f64,
    pub relative_error_g: f64,
    pub bins: usize,
    /// `PSD - Re CSD - dark`, arbitrary units².
    pub shot_observed: Spectrum,
}

/// Gain from the reference-mode detector pair: the cross spectrum carries
/// only the correlated noise, so `PSD - Re CSD - dark` leaves the shot
/// noise, whose ratio to the model shot PSD is `g²`.
pub fn calibrate_gain(
    pd_a: &TimeSeries,
    pd_b: &TimeSeries,
    dark_psd: &(impl SpectralDensity + ?Sized),
    model_shot: &(impl SpectralDensity + ?Sized),
    cfg: &CalibrationConfig,
) -> Result<GainEstimate> {
    let (lo, hi) = cfg.band_hz;
    if !(hi > lo) {
        return domain(format!("calibration band {lo}-{hi} Hz is empty"));
    }
    let est = EstimatorConfig {
        segment_seconds: cfg.segment_seconds,
        ..EstimatorConfig::mean()
    };
    let x = recombine(pd_a, pd_b, cfg.split_fraction)?;
    let psd = estimate_psd(&x, &est)?.spectrum;
    let csd = estimate_csd(pd_a, pd_b, &est)?;
    let re = csd.real_part("re_csd")?;
    psd.check_same_grid(&re)?;
    let shot_observed = Spectrum::new(
        psd.grid.clone(),
        psd.frequencies()
            .iter()
            .zip(psd.values.iter().zip(&re.values))
            .map(|(f, (p, c))| p - c - dark_psd.density(*f))
            .collect(),
        "shot_observed",
    )?
    .with_bin_width(psd.bin_width_hz)
    .with_segments(csd.n_segments);
    let idx = psd.grid.band_indices(lo, hi);
    if idx.is_empty() {
        return domain(format!("no bins in calibration band {lo}-{hi} Hz"));
    }
    let freqs = &psd.frequencies()[idx.clone()];
    let obs = &shot_observed.values[idx];
    let mean_obs = obs.iter().sum::<f64>() / obs.len() as f64;
    if !(mean_obs > 0.0) {
        return Err(Error::Domain(
            "observed shot noise is not positive over the calibration band".into(),
        ));
    }
    let mut ratios = Vec::with_capacity(obs.len());
    for (f, o) in freqs.iter().zip(obs) {
        let m = model_shot.density(*f);
        if !(m > 0.0) {
            return domain(format!("model shot noise not positive at {f} Hz"));
        }
        ratios.push(o / m);
    }
    let n = ratios.len();
    let g_squared = median(&mut ratios.clone());
    let mut dev: Vec<f64> = ratios.iter().map(|r| (r - g_squared).abs()).collect();
    let sigma_bin = 1.4826 * median(&mut dev);
    // median of n bins: sqrt(π/2) worse than the mean
    let sigma = sigma_bin * (std::f64::consts::FRAC_PI_2 * HANN_BIN_VARIANCE_INFLATION / n as f64).sqrt();
    let rel2 = sigma / g_squared;
    Ok(GainEstimate {
        g: g_squared.sqrt(),
        g_squared,
        relative_error_g_squared: rel2,
        relative_error_g: rel2 / 2.0,
        bins: n,
        shot_observed,
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
