//! Welch-Bartlett spectral estimation with a bin-wise median.
//!
//! A record is cut into overlapping segments (2 s, 50% overlap by default).
//! Each segment is linearly detrended, Hann windowed and Fourier transformed
//! into a one-sided density periodogram. The per-bin periodogram values of
//! Gaussian noise are `χ²₂`-distributed; their sample median is divided by
//! the expected median of `n` unit-mean exponential variates, which tends to
//! `ln 2` for many segments, so the median estimate carries the same mean as
//! the Welch average while ignoring the tail produced by glitches.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::physics::FrequencyGrid;
use crate::rng;
use crate::spectrum::Spectrum;

/// Uniformly sampled readout record.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub label: String,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64, label: impl Into<String>) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return domain(format!("sample rate must be positive, got {sample_rate_hz}"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return domain("time series contains non-finite samples");
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Median,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub segment_seconds: f64,
    pub overlap_fraction: f64,
    pub statistic: Statistic,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            segment_seconds: 2.0,
            overlap_fraction: 0.5,
            statistic: Statistic::Median,
        }
    }
}

impl EstimatorConfig {
    pub fn mean() -> Self {
        Self {
            statistic: Statistic::Mean,
            ..Self::default()
        }
    }

    pub fn with_statistic(self, statistic: Statistic) -> Self {
        Self { statistic, ..self }
    }

    /// Segment length in samples.
    pub fn segment_len(&self, fs: f64) -> Result<usize> {
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::Config(format!(
                "overlap fraction must lie in [0, 1), got {}",
                self.overlap_fraction
            )));
        }
        let n = self.segment_seconds * fs;
        if !(n >= 2.0) || (n - n.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "segment_seconds * fs = {n} must be an integer >= 2"
            )));
        }
        Ok(n.round() as usize)
    }

    /// Hop between segment starts, in samples.
    pub fn stride(&self, fs: f64) -> Result<usize> {
        let len = self.segment_len(fs)?;
        Ok((((1.0 - self.overlap_fraction) * len as f64).round() as usize).max(1))
    }

    pub fn segment_count(&self, n_samples: usize, fs: f64) -> Result<usize> {
        let len = self.segment_len(fs)?;
        if n_samples < len {
            return Ok(0);
        }
        Ok((n_samples - len) / self.stride(fs)? + 1)
    }

    pub fn bin_width_hz(&self) -> f64 {
        1.0 / self.segment_seconds
    }
}

/// A spectrum estimate together with how it was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEstimate {
    pub spectrum: Spectrum,
    pub statistic: Statistic,
    pub n_segments: usize,
    pub total_seconds: f64,
}

/// Periodic Hann window `w[n] = 0.5 (1 - cos(2πn/L))`.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
        .collect()
}

/// Removes the least-squares straight line in place.
pub fn detrend_linear(x: &mut [f64]) {
    let n = x.len();
    if n < 2 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let t_mean = (n - 1) as f64 / 2.0;
    let x_mean = x.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let dt = i as f64 - t_mean;
        sxy += dt * (v - x_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    for (i, v) in x.iter_mut().enumerate() {
        *v -= x_mean + slope * (i as f64 - t_mean);
    }
}

/// Detrended, windowed segments of one record.
#[derive(Debug, Clone)]
pub struct WindowedSegments {
    pub segments: Vec<Vec<f64>>,
    pub segment_len: usize,
    pub sample_rate_hz: f64,
    /// `Σ w²` of the Hann window, used for density scaling.
    pub window_sum_sq: f64,
    /// `1 / mean(w²)`, the power lost to the window.
    pub window_norm: f64,
}

pub fn segment_detrend_window(ts: &TimeSeries, cfg: &EstimatorConfig) -> Result<WindowedSegments> {
    let fs = ts.sample_rate_hz;
    let len = cfg.segment_len(fs)?;
    let stride = cfg.stride(fs)?;
    let required = len + stride;
    if ts.len() < required {
        return Err(Error::TooShort {
            required,
            actual: ts.len(),
        });
    }
    let count = cfg.segment_count(ts.len(), fs)?;
    let window = hann(len);
    let window_sum_sq: f64 = window.iter().map(|w| w * w).sum();
    let segments = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut seg = ts.samples[i * stride..i * stride + len].to_vec();
            detrend_linear(&mut seg);
            seg.iter_mut().zip(&window).for_each(|(v, w)| *v *= w);
            seg
        })
        .collect();
    Ok(WindowedSegments {
        segments,
        segment_len: len,
        sample_rate_hz: fs,
        window_sum_sq,
        window_norm: len as f64 / window_sum_sq,
    })
}

/// Reusable forward transform for one segment length.
pub struct Periodogram {
    fft: Arc<dyn Fft<f64>>,
    len: usize,
    fs: f64,
    window_sum_sq: f64,
}

impl Periodogram {
    pub fn new(len: usize, fs: f64, window_sum_sq: f64) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(len);
        Self {
            fft,
            len,
            fs,
            window_sum_sq,
        }
    }

    pub fn for_segments(segs: &WindowedSegments) -> Self {
        Self::new(segs.segment_len, segs.sample_rate_hz, segs.window_sum_sq)
    }

    /// Complex spectrum of one windowed segment, bins `0..=L/2`.
    pub fn transform(&self, segment: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = segment.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        self.fft.process(&mut buf);
        buf.truncate(self.len / 2 + 1);
        buf
    }

    /// Density scale for bin `k`, including the one-sided doubling.
    fn scale(&self, k: usize) -> f64 {
        let base = 1.0 / (self.fs * self.window_sum_sq);
        if k == 0 || (self.len.is_multiple_of(2) && k == self.len / 2) {
            base
        } else {
            2.0 * base
        }
    }

    /// One-sided PSD of one windowed segment, bins `0..=L/2`.
    pub fn psd(&self, segment: &[f64]) -> Vec<f64> {
        self.transform(segment)
            .iter()
            .enumerate()
            .map(|(k, x)| x.norm_sqr() * self.scale(k))
            .collect()
    }

    /// One-sided cross density `conj(A)·B`, bins `0..=L/2`.
    pub fn csd(&self, a: &[f64], b: &[f64]) -> Vec<Complex64> {
        let xa = self.transform(a);
        let xb = self.transform(b);
        xa.iter()
            .zip(&xb)
            .enumerate()
            .map(|(k, (p, q))| p.conj() * q * self.scale(k))
            .collect()
    }
}

/// One-sided density periodogram of a single windowed segment (bins
/// `0..=L/2`). `window_sum_sq` is `Σ w²` of the window that was applied.
pub fn periodogram(segment: &[f64], fs: f64, window_sum_sq: f64) -> Vec<f64> {
    Periodogram::new(segment.len(), fs, window_sum_sq).psd(segment)
}

/// Expected sample median of `n` independent unit-mean exponential
/// variates (the middle pair is averaged for even `n`). Tends to `ln 2`.
pub fn median_bias(n: usize) -> f64 {
    assert!(n > 0, "median of zero segments");
    let harmonic = |m: usize| (1..=m).map(|i| 1.0 / i as f64).sum::<f64>();
    let hn = harmonic(n);
    if n % 2 == 1 {
        hn - harmonic((n - 1) / 2)
    } else {
        hn - 0.5 * (harmonic(n / 2) + harmonic(n / 2 - 1))
    }
}

fn sample_median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Bin-wise reduction of a stack of periodograms. The median is rescaled
/// by [`median_bias`] so both statistics estimate the mean power.
pub fn reduce_periodograms(periodograms: &[Vec<f64>], statistic: Statistic) -> Vec<f64> {
    let n = periodograms.len();
    if n == 0 {
        return Vec::new();
    }
    let bins = periodograms[0].len();
    match statistic {
        Statistic::Mean => (0..bins)
            .map(|k| periodograms.iter().map(|p| p[k]).sum::<f64>() / n as f64)
            .collect(),
        Statistic::Median => {
            let bias = median_bias(n);
            (0..bins)
                .into_par_iter()
                .map(|k| {
                    let mut col: Vec<f64> = periodograms.iter().map(|p| p[k]).collect();
                    sample_median(&mut col) / bias
                })
                .collect()
        }
    }
}

fn positive_grid(len: usize, fs: f64) -> Result<FrequencyGrid> {
    let df = fs / len as f64;
    FrequencyGrid::new((1..=len / 2).map(|k| k as f64 * df).collect())
}

fn segment_psds(ts: &TimeSeries, cfg: &EstimatorConfig) -> Result<(Vec<Vec<f64>>, usize)> {
    let segs = segment_detrend_window(ts, cfg)?;
    let pg = Periodogram::for_segments(&segs);
    let psds = segs.segments.par_iter().map(|s| pg.psd(s)).collect();
    Ok((psds, segs.segment_len))
}

/// PSD estimate of one record.
pub fn estimate_psd(ts: &TimeSeries, cfg: &EstimatorConfig) -> Result<SpectrumEstimate> {
    estimate_psd_pooled(std::slice::from_ref(ts), cfg)
}

/// PSD estimate pooling the segments of several discontiguous records
/// (segments never straddle two records).
pub fn estimate_psd_pooled(series: &[TimeSeries], cfg: &EstimatorConfig) -> Result<SpectrumEstimate> {
    let first = series
        .first()
        .ok_or_else(|| Error::Domain("no time series to estimate".into()))?;
    let fs = first.sample_rate_hz;
    let mut all = Vec::new();
    let mut len = 0;
    let mut total_seconds = 0.0;
    for ts in series {
        if ts.sample_rate_hz != fs {
            return domain(format!("sample rates differ: {} vs {}", ts.sample_rate_hz, fs));
        }
        let (psds, l) = segment_psds(ts, cfg)?;
        len = l;
        all.extend(psds);
        total_seconds += ts.duration_seconds();
    }
    let n_segments = all.len();
    let reduced = reduce_periodograms(&all, cfg.statistic);
    let label = if series.len() == 1 {
        first.label.clone()
    } else {
        format!("{} (+{} records)", first.label, series.len() - 1)
    };
    let spectrum = Spectrum::new(positive_grid(len, fs)?, reduced[1..].to_vec(), label)?
        .with_segments(n_segments)
        .with_bin_width(fs / len as f64);
    Ok(SpectrumEstimate {
        spectrum,
        statistic: cfg.statistic,
        n_segments,
        total_seconds,
    })
}

/// Welch-averaged one-sided cross-spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSpectrum {
    pub grid: FrequencyGrid,
    pub values: Vec<Complex64>,
    pub n_segments: usize,
    pub bin_width_hz: f64,
}

impl CrossSpectrum {
    pub fn real_part(&self, label: impl Into<String>) -> Result<Spectrum> {
        Ok(
            Spectrum::new(self.grid.clone(), self.values.iter().map(|c| c.re).collect(), label)?
                .with_segments(self.n_segments)
                .with_bin_width(self.bin_width_hz),
        )
    }
}

/// Cross spectrum `E[conj(A)·B]`, always mean-averaged: a median of complex
/// values has no natural definition. `cfg.statistic` is ignored.
pub fn estimate_csd(a: &TimeSeries, b: &TimeSeries, cfg: &EstimatorConfig) -> Result<CrossSpectrum> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.sample_rate_hz != b.sample_rate_hz {
        return domain("sample rates differ");
    }
    let sa = segment_detrend_window(a, cfg)?;
    let sb = segment_detrend_window(b, cfg)?;
    let pg = Periodogram::for_segments(&sa);
    let n = sa.segments.len();
    let per_segment: Vec<Vec<Complex64>> = sa
        .segments
        .par_iter()
        .zip(&sb.segments)
        .map(|(x, y)| pg.csd(x, y))
        .collect();
    let bins = sa.segment_len / 2 + 1;
    let mean: Vec<Complex64> = (0..bins)
        .map(|k| per_segment.iter().map(|s| s[k]).sum::<Complex64>() / n as f64)
        .collect();
    Ok(CrossSpectrum {
        grid: positive_grid(sa.segment_len, a.sample_rate_hz)?,
        values: mean[1..].to_vec(),
        n_segments: n,
        bin_width_hz: a.sample_rate_hz / sa.segment_len as f64,
    })
}

/// Relative statistical uncertainty `(E·T·ΔF)^{-1/2}` of a PSD estimate.
pub fn statistical_uncertainty(total_seconds: f64, bin_width_hz: f64, efficiency: f64) -> Result<f64> {
    if !(total_seconds > 0.0 && bin_width_hz > 0.0 && efficiency > 0.0) {
        return domain(format!(
            "T = {total_seconds}, dF = {bin_width_hz}, E = {efficiency} must all be positive"
        ));
    }
    Ok((efficiency * total_seconds * bin_width_hz).powf(-0.5))
}

/// White-noise Monte-Carlo used to calibrate the statistical efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRun {
    pub trials: usize,
    pub duration_seconds: f64,
    pub sample_rate_hz: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for EfficiencyRun {
    fn default() -> Self {
        Self {
            trials: 200,
            duration_seconds: 120.0,
            sample_rate_hz: 256.0,
            sigma: 1.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyReport {
    /// `E = 1 / (var_rel · T · ΔF)`.
    pub efficiency: f64,
    /// Per-bin relative variance of the estimator, averaged over bins.
    pub relative_variance: f64,
    pub bins_used: usize,
}

/// Measures `E` from the per-bin relative variance of the estimator across
/// independent white-noise trials. Bins within 2 Hz of DC and Nyquist are
/// excluded (detrending and the one-sided end bins change their statistics).
pub fn measure_efficiency(cfg: &EstimatorConfig, run: &EfficiencyRun) -> Result<EfficiencyReport> {
    if run.trials < 100 {
        return Err(Error::Config(format!(
            "efficiency measurement needs >= 100 trials, got {}",
            run.trials
        )));
    }
    let n = (run.duration_seconds * run.sample_rate_hz).round() as usize;
    let estimates = (0..run.trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(run.seed, t as u64);
            let ts = TimeSeries::new(rng::white_noise(n, run.sigma, &mut r), run.sample_rate_hz, "white")?;
            Ok(estimate_psd(&ts, cfg)?.spectrum.values)
        })
        .collect::<Result<Vec<_>>>()?;
    let df = cfg.bin_width_hz();
    let nyquist = run.sample_rate_hz / 2.0;
    let bins = estimates[0].len();
    let (mut acc, mut used) = (0.0, 0);
    for k in 0..bins {
        let f = (k + 1) as f64 * df;
        if f < 2.0 || f > nyquist - 2.0 {
            continue;
        }
        let m = estimates.iter().map(|e| e[k]).sum::<f64>() / run.trials as f64;
        let v = estimates.iter().map(|e| (e[k] - m).powi(2)).sum::<f64>() / (run.trials - 1) as f64;
        acc += v / (m * m);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Config("no usable bins for efficiency measurement".into()));
    }
    let relative_variance = acc / used as f64;
    Ok(EfficiencyReport {
        efficiency: 1.0 / (relative_variance * run.duration_seconds * df),
        relative_variance,
        bins_used: used,
    })
}
