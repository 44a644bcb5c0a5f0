//! Synthetic experiments: Gaussian noise with a prescribed PSD, sine-Gaussian
//! glitches, the two-photodetector readout and the alternating
//! reference/squeezed measurement sequence.
//!
//! Quantum noise is drawn as Gaussian noise with the model PSD. The pipeline
//! only ever looks at spectra, so no field-level simulation is attempted.

use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{dip_frequency, lossy_displacement_psd, shot_psd, DEFAULT_DIP_SPAN_HZ};
use crate::physics::{FrequencyGrid, InterferometerParams, SqueezerParams};
use crate::rng;
use crate::spectral::TimeSeries;
use crate::spectrum::{SpectralDensity, Spectrum};

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 1024.0;

fn sample_count(duration_s: f64, fs: f64) -> Result<usize> {
    if !(fs > 0.0 && duration_s > 0.0) {
        return domain(format!("duration {duration_s} s and rate {fs} Hz must be positive"));
    }
    let n = duration_s * fs;
    if (n - n.round()).abs() > 1e-6 || n < 4.0 {
        return domain(format!("duration * fs = {n} must be an integer >= 4"));
    }
    Ok(n.round() as usize)
}

/// Per-bin mixing matrix for `channels` outputs driven by as many
/// independent unit complex normals: lower-triangular, row-major.
type Mixing = Vec<f64>;

/// Frequency-domain synthesis of `channels` jointly Gaussian series.
/// `mix(f)` returns the lower Cholesky factor of the one-sided PSD matrix.
fn synthesize(
    channels: usize,
    n: usize,
    fs: f64,
    seed: u64,
    mut mix: impl FnMut(f64) -> Result<Mixing>,
) -> Result<Vec<Vec<f64>>> {
    let mut r = rng::stream(seed, 0);
    let half = n / 2;
    let df = fs / n as f64;
    let mut spectra = vec![vec![Complex64::new(0.0, 0.0); n]; channels];
    let interior = (fs * n as f64 / 4.0).sqrt();
    let real_bin = (fs * n as f64 / 2.0).sqrt();
    for k in 1..=half {
        let l = mix(k as f64 * df)?;
        let nyquist = n.is_multiple_of(2) && k == half;
        let z: Vec<Complex64> = (0..channels)
            .map(|_| {
                if nyquist {
                    Complex64::new(real_bin * rng::gaussian(&mut r), 0.0)
                } else {
                    let re = rng::gaussian(&mut r);
                    let im = rng::gaussian(&mut r);
                    Complex64::new(interior * re, interior * im)
                }
            })
            .collect();
        for (c, spec) in spectra.iter_mut().enumerate() {
            let x: Complex64 = (0..=c).map(|j| z[j] * l[c * channels + j]).sum();
            spec[k] = x;
            if !nyquist {
                spec[n - k] = x.conj();
            }
        }
    }
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    Ok(spectra
        .into_iter()
        .map(|mut s| {
            ifft.process(&mut s);
            s.iter().map(|v| v.re / n as f64).collect()
        })
        .collect())
}

fn checked_density(target: &(impl SpectralDensity + ?Sized), f: f64) -> Result<f64> {
    let s = target.density(f);
    if !(s.is_finite() && s > 0.0) {
        return domain(format!("target PSD must be positive, got {s} at {f} Hz"));
    }
    Ok(s)
}

/// Gaussian series whose one-sided population PSD is `target`.
pub fn colorize(target: &(impl SpectralDensity + ?Sized), duration_s: f64, fs: f64, seed: u64) -> Result<TimeSeries> {
    let n = sample_count(duration_s, fs)?;
    let mut out = synthesize(1, n, fs, seed, |f| Ok(vec![checked_density(target, f)?.sqrt()]))?;
    TimeSeries::new(out.pop().expect("one channel"), fs, "colorized")
}

/// Two jointly Gaussian series with PSDs `psd_a`, `psd_b` and real
/// cross-spectral density `csd_ab`.
pub fn colorize_pair(
    psd_a: &(impl SpectralDensity + ?Sized),
    psd_b: &(impl SpectralDensity + ?Sized),
    csd_ab: &(impl SpectralDensity + ?Sized),
    duration_s: f64,
    fs: f64,
    seed: u64,
) -> Result<(TimeSeries, TimeSeries)> {
    let n = sample_count(duration_s, fs)?;
    let mut out = synthesize(2, n, fs, seed, |f| {
        let a = checked_density(psd_a, f)?;
        let b = checked_density(psd_b, f)?;
        let c = csd_ab.density(f);
        let l11 = a.sqrt();
        let l21 = c / l11;
        let rest = b - l21 * l21;
        if rest < -1e-12 * b {
            return domain(format!("cross spectrum exceeds sqrt(PSD_a PSD_b) at {f} Hz"));
        }
        let l22 = if rest.abs() <= 1e-12 * b { 0.0 } else { rest.sqrt() };
        Ok(vec![l11, 0.0, l21, l22])
    })?;
    let b = out.pop().expect("two channels");
    let a = out.pop().expect("two channels");
    Ok((TimeSeries::new(a, fs, "pd_a")?, TimeSeries::new(b, fs, "pd_b")?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawTerm {
    pub coefficient: f64,
    pub exponent: f64,
}

/// Log-normal bump in frequency, width in decades.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub center_hz: f64,
    pub width_decades: f64,
}

/// Smooth classical (non-quantum) displacement noise,
/// `Σ a_i (f/f_r)^{p_i}` plus optional bumps, m²/Hz.
///
/// The default shape is illustrative only: a steep seismic/thermal wall
/// and a shallow `1/f` tail with a broad bump near 60 Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalNoiseTemplate {
    pub reference_hz: f64,
    pub terms: Vec<PowerLawTerm>,
    #[serde(default)]
    pub bumps: Vec<Bump>,
}

impl ClassicalNoiseTemplate {
    pub fn validate(&self) -> Result<()> {
        if !(self.reference_hz > 0.0) || self.terms.is_empty() {
            return Err(Error::Config(
                "classical template needs a reference frequency and terms".into(),
            ));
        }
        let ok = self.terms.iter().all(|t| t.coefficient > 0.0 && t.exponent.is_finite())
            && self
                .bumps
                .iter()
                .all(|b| b.amplitude >= 0.0 && b.center_hz > 0.0 && b.width_decades > 0.0);
        if !ok {
            return Err(Error::Config("classical template terms must be positive".into()));
        }
        Ok(())
    }

    /// Unscaled default shape; see [`ClassicalNoiseTemplate::scaled_to_ratio`].
    pub fn default_shape() -> Self {
        Self {
            reference_hz: 100.0,
            terms: vec![
                PowerLawTerm {
                    coefficient: 1.0,
                    exponent: -4.0,
                },
                PowerLawTerm {
                    coefficient: 8.7,
                    exponent: -1.0,
                },
            ],
            bumps: vec![Bump {
                amplitude: 6.0,
                center_hz: 60.0,
                width_decades: 0.04,
            }],
        }
    }

    /// Rescales so that classical / squeezed-quantum PSD equals `ratio` at
    /// the sub-SQL dip of `(params, squeezer)`.
    pub fn scaled_to_ratio(
        &self,
        params: &InterferometerParams,
        squeezer: &SqueezerParams,
        ratio: f64,
    ) -> Result<Self> {
        if !(ratio > 0.0) {
            return domain(format!("classical/quantum ratio must be positive, got {ratio}"));
        }
        let f = dip_frequency(params, squeezer, DEFAULT_DIP_SPAN_HZ)?;
        let m_s = lossy_displacement_psd(params, squeezer, f)?;
        Ok(self.scaled(ratio * m_s / self.density(f)))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.terms.iter_mut().for_each(|t| t.coefficient *= factor);
        out.bumps.iter_mut().for_each(|b| b.amplitude *= factor);
        out
    }

    pub fn to_spectrum(&self, grid: &FrequencyGrid) -> Result<Spectrum> {
        Spectrum::from_fn(grid, "classical", |f| Ok(self.density(f)))
    }
}

impl SpectralDensity for ClassicalNoiseTemplate {
    fn density(&self, f_hz: f64) -> f64 {
        let x = f_hz / self.reference_hz;
        let power: f64 = self.terms.iter().map(|t| t.coefficient * x.powf(t.exponent)).sum();
        let bumps: f64 = self
            .bumps
            .iter()
            .map(|b| {
                let d = (f_hz / b.center_hz).log10() / b.width_decades;
                b.amplitude * (-0.5 * d * d).exp()
            })
            .sum();
        power + bumps
    }
}

/// Poisson-timed sine-Gaussian bursts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlitchConfig {
    pub rate_per_second: f64,
    /// Peak amplitude in units of the contaminated series' RMS.
    pub amplitude_scale: f64,
    pub center_freq_hz: f64,
    pub q_factor: f64,
}

impl GlitchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_per_second >= 0.0 && self.amplitude_scale >= 0.0) {
            return Err(Error::Config("glitch rate and amplitude must be >= 0".into()));
        }
        if !(self.center_freq_hz > 0.0 && self.q_factor > 0.0) {
            return Err(Error::Config("glitch frequency and Q must be positive".into()));
        }
        Ok(())
    }

    /// Gaussian envelope time constant `τ = Q / (√2 π f0)`.
    pub fn tau_seconds(&self) -> f64 {
        self.q_factor / (std::f64::consts::SQRT_2 * std::f64::consts::PI * self.center_freq_hz)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlitchInjection {
    pub series: TimeSeries,
    pub burst_times_s: Vec<f64>,
}

impl GlitchInjection {
    pub fn count(&self) -> usize {
        self.burst_times_s.len()
    }
}

/// Adds a sine-Gaussian burst centred on `t0_s` to `samples`.
pub fn add_sine_gaussian(samples: &mut [f64], fs: f64, t0_s: f64, amplitude: f64, cfg: &GlitchConfig) {
    let tau = cfg.tau_seconds();
    let w = 2.0 * std::f64::consts::PI * cfg.center_freq_hz;
    let lo = ((t0_s - 6.0 * tau) * fs).floor().max(0.0) as usize;
    let hi = (((t0_s + 6.0 * tau) * fs).ceil().max(0.0) as usize).min(samples.len());
    for (i, v) in samples.iter_mut().enumerate().take(hi).skip(lo) {
        let t = i as f64 / fs - t0_s;
        *v += amplitude * (-(t * t) / (tau * tau)).exp() * (w * t).sin();
    }
}

pub fn inject_glitches(ts: &TimeSeries, cfg: &GlitchConfig, seed: u64) -> Result<GlitchInjection> {
    cfg.validate()?;
    let mut series = ts.clone();
    let mut times = Vec::new();
    if cfg.rate_per_second > 0.0 {
        let mut r = rng::stream(seed, 0);
        let gap = Exp::new(cfg.rate_per_second).map_err(|e| Error::Config(e.to_string()))?;
        let duration = ts.duration_seconds();
        let mut t = gap.sample(&mut r);
        while t < duration {
            times.push(t);
            t += gap.sample(&mut r);
        }
        let amplitude = cfg.amplitude_scale * ts.rms();
        for t0 in &times {
            add_sine_gaussian(&mut series.samples, ts.sample_rate_hz, *t0, amplitude, cfg);
        }
    }
    series.label = format!("{} +{} glitches", ts.label, times.len());
    Ok(GlitchInjection {
        series,
        burst_times_s: times,
    })
}

/// Two photodetectors sharing the readout light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualReadoutConfig {
    /// Arbitrary units per metre of displacement.
    pub gain_g: f64,
    /// Per-detector dark-noise PSD as a fraction of that detector's shot noise.
    pub dark_noise_fraction: f64,
    /// Fraction `s` of the light on detector A.
    pub split_fraction: f64,
}

impl Default for DualReadoutConfig {
    fn default() -> Self {
        Self {
            gain_g: 1.0e18,
            dark_noise_fraction: 0.01,
            split_fraction: 0.5,
        }
    }
}

impl DualReadoutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain_g > 0.0 && self.gain_g.is_finite()) {
            return Err(Error::Config(format!("gain must be positive, got {}", self.gain_g)));
        }
        if !(self.dark_noise_fraction >= 0.0) {
            return Err(Error::Config("dark noise fraction must be >= 0".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config("split fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Dark-noise PSD of the recombined readout `s·A + (1-s)·B`, in
    /// arbitrary units².
    pub fn combined_dark_psd(&self, params: &InterferometerParams, grid: &FrequencyGrid) -> Result<Spectrum> {
        let g2 = self.gain_g * self.gain_g;
        Spectrum::from_fn(grid, "dark", |f| {
            Ok(g2 * self.dark_noise_fraction * shot_psd(params, f)?)
        })
    }
}

/// Simulates both photodetector streams, in arbitrary units.
///
/// Radiation pressure and classical noise are common to both detectors.
/// Each detector sees independent shot noise `shot/s` (resp. `shot/(1-s)`)
/// so that the recombined readout carries exactly the model shot term, plus
/// independent dark noise at `dark_noise_fraction` of its own shot noise.
#[allow(clippy::too_many_arguments)]
pub fn simulate_dual_readout(
    params: &InterferometerParams,
    squeezer: Option<&SqueezerParams>,
    classical: &(impl SpectralDensity + ?Sized),
    cfg: &DualReadoutConfig,
    hold_below_hz: f64,
    duration_s: f64,
    fs: f64,
    seed: u64,
) -> Result<(TimeSeries, TimeSeries)> {
    cfg.validate()?;
    let sqz = squeezer.copied().unwrap_or_else(SqueezerParams::vacuum);
    let s = cfg.split_fraction;
    let d = cfg.dark_noise_fraction;
    let held = |f: f64| f.max(hold_below_hz);
    let parts = |f: f64| -> (f64, f64) {
        let f = held(f);
        let shot = shot_psd(params, f).unwrap_or(f64::NAN);
        let quantum = lossy_displacement_psd(params, &sqz, f).unwrap_or(f64::NAN);
        (classical.density(f) + quantum - shot, shot)
    };
    let psd_a = |f: f64| {
        let (c, shot) = parts(f);
        c + shot / s * (1.0 + d)
    };
    let psd_b = |f: f64| {
        let (c, shot) = parts(f);
        c + shot / (1.0 - s) * (1.0 + d)
    };
    let csd = |f: f64| parts(f).0;
    let (mut a, mut b) = colorize_pair(&psd_a, &psd_b, &csd, duration_s, fs, seed)?;
    a.samples.iter_mut().for_each(|v| *v *= cfg.gain_g);
    b.samples.iter_mut().for_each(|v| *v *= cfg.gain_g);
    Ok((a, b))
}

/// Recombines the two detectors into the displacement readout.
pub fn recombine(a: &TimeSeries, b: &TimeSeries, split_fraction: f64) -> Result<TimeSeries> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let s = split_fraction;
    TimeSeries::new(
        a.samples
            .iter()
            .zip(&b.samples)
            .map(|(x, y)| s * x + (1.0 - s) * y)
            .collect(),
        a.sample_rate_hz,
        "readout",
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Mode {
    Reference,
    Squeezed { angle_deg: f64 },
}

impl Mode {
    pub fn is_reference(&self) -> bool {
        matches!(self, Mode::Reference)
    }

    pub fn squeezer(&self, template: &SqueezerParams) -> SqueezerParams {
        match self {
            Mode::Reference => SqueezerParams::vacuum(),
            Mode::Squeezed { angle_deg } => template.with_angle(angle_deg.to_radians()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    #[serde(flatten)]
    pub mode: Mode,
    pub duration_seconds: f64,
    /// Multiplies the classical template for this entry only; 1 is stationary.
    #[serde(default = "unit_scale")]
    pub classical_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl PlanEntry {
    pub fn reference(duration_seconds: f64) -> Self {
        Self {
            mode: Mode::Reference,
            duration_seconds,
            classical_scale: 1.0,
        }
    }

    pub fn squeezed(angle_deg: f64, duration_seconds: f64) -> Self {
        Self {
            mode: Mode::Squeezed { angle_deg },
            duration_seconds,
            classical_scale: 1.0,
        }
    }

    pub fn with_classical_scale(mut self, scale: f64) -> Self {
        self.classical_scale = scale;
        self
    }
}

/// Ordered measurement sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub entries: Vec<PlanEntry>,
}

/// Extra angles of the desk plan, degrees.
pub const DESK_SWEEP_ANGLES_DEG: [f64; 9] = [-50.0, -35.0, -20.0, 0.0, 10.0, 20.0, 50.0, 65.0, 80.0];

impl SegmentPlan {
    pub fn new(entries: Vec<PlanEntry>) -> Result<Self> {
        let plan = Self { entries };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Config("segment plan is empty".into()));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if !(e.duration_seconds > 0.0) {
                return Err(Error::Config(format!("plan entry {i} has non-positive duration")));
            }
            if !(e.classical_scale > 0.0) {
                return Err(Error::Config(format!(
                    "plan entry {i} has non-positive classical scale"
                )));
            }
        }
        Ok(())
    }

    /// Checks that the plan can feed a reference subtraction.
    pub fn validate_for_subtraction(&self) -> Result<()> {
        self.validate()?;
        let refs = self.entries.iter().filter(|e| e.mode.is_reference()).count();
        if refs == 0 || refs == self.entries.len() {
            return Err(Error::Config(
                "subtraction needs at least one reference and one squeezed entry".into(),
            ));
        }
        Ok(())
    }

    /// Alternating `pairs × (reference, squeezed@angle)`.
    pub fn alternating(pairs: usize, angle_deg: f64, seconds: f64) -> Self {
        let entries = (0..pairs)
            .flat_map(|_| [PlanEntry::reference(seconds), PlanEntry::squeezed(angle_deg, seconds)])
            .collect();
        Self { entries }
    }

    /// Minutes-long replica of the full sequence: three reference/squeezed
    /// pairs at 35°, nine short angle-sweep entries and a closing reference.
    pub fn desk_default() -> Self {
        let mut plan = Self::alternating(3, 35.0, 120.0);
        plan.entries
            .extend(DESK_SWEEP_ANGLES_DEG.iter().map(|a| PlanEntry::squeezed(*a, 40.0)));
        plan.entries.push(PlanEntry::reference(120.0));
        plan
    }

    pub fn total_seconds(&self) -> f64 {
        self.entries.iter().map(|e| e.duration_seconds).sum()
    }
}

/// Everything `run_experiment` needs besides the plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSetup {
    pub params: InterferometerParams,
    /// Squeeze factor for squeezed entries; the angle comes from the plan.
    pub squeezer: SqueezerParams,
    pub classical: ClassicalNoiseTemplate,
    pub sample_rate_hz: f64,
    /// The target PSD is held constant below this frequency so the steep
    /// low-frequency wall does not leak into the band of interest.
    pub hold_below_hz: f64,
}

impl ExperimentSetup {
    /// Table-1 interferometer with the classical template tuned to
    /// `ratio` × squeezed quantum noise at the dip.
    pub fn table1(ratio: f64) -> Result<Self> {
        let (params, squeezer) = crate::physics::ParamFile::table1().to_params()?;
        Self::with_params(params, squeezer, ratio)
    }

    /// Arbitrary interferometer and squeezer with the default classical
    /// shape tuned to `ratio` at the squeezed dip.
    pub fn with_params(params: InterferometerParams, squeezer: SqueezerParams, ratio: f64) -> Result<Self> {
        let classical = ClassicalNoiseTemplate::default_shape().scaled_to_ratio(&params, &squeezer, ratio)?;
        Ok(Self {
            params,
            squeezer,
            classical,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            hold_below_hz: 10.0,
        })
    }

    /// Population PSD of a plan entry.
    pub fn target_psd(&self, entry: &PlanEntry, f_hz: f64) -> Result<f64> {
        let f = f_hz.max(self.hold_below_hz);
        let sqz = entry.mode.squeezer(&self.squeezer);
        Ok(lossy_displacement_psd(&self.params, &sqz, f)? + entry.classical_scale * self.classical.density(f))
    }

    /// Quantum model PSD of a mode on a grid.
    pub fn quantum_model(&self, mode: &Mode, grid: &FrequencyGrid) -> Result<Spectrum> {
        let sqz = mode.squeezer(&self.squeezer);
        Spectrum::from_fn(grid, "quantum_model", |f| lossy_displacement_psd(&self.params, &sqz, f))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedSegment {
    pub index: usize,
    pub entry: PlanEntry,
    pub seed: u64,
    pub series: TimeSeries,
}

/// Synthesizes one series per plan entry. Entry `i` draws from
/// `child_seed(seed, i)`, so entries are independent and parallelizable.
pub fn run_experiment(plan: &SegmentPlan, setup: &ExperimentSetup, seed: u64) -> Result<Vec<RecordedSegment>> {
    plan.validate()?;
    setup.classical.validate()?;
    plan.entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let s = rng::child_seed(seed, i as u64);
            let target = |f: f64| setup.target_psd(entry, f).unwrap_or(f64::NAN);
            let mut series = colorize(&target, entry.duration_seconds, setup.sample_rate_hz, s)?;
            series.label = match entry.mode {
                Mode::Reference => format!("ref_{i:02}"),
                Mode::Squeezed { angle_deg } => format!("sqz_{i:02}_{angle_deg:+.0}deg"),
            };
            Ok(RecordedSegment {
                index: i,
                entry: *entry,
                seed: s,
                series,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{estimate_csd, estimate_psd, statistical_uncertainty, EstimatorConfig};

    #[test]
    fn flat_target_gives_white_noise() {
        let fs = 256.0;
        let sigma2 = 3.0;
        let flat = move |_f: f64| 2.0 * sigma2 / fs;
        let ts = colorize(&flat, 400.0, fs, 1).unwrap();
        let n = ts.len() as f64;
        let var = ts.samples.iter().map(|v| v * v).sum::<f64>() / n;
        // DC is not synthesized, so the variance is short by one bin
        let expected = sigma2 * (1.0 - 1.0 / n);
        assert!((var - expected).abs() < 3.0 * sigma2 * (2.0 / n).sqrt(), "{var}");
    }

    #[test]
    fn rejects_nonpositive_targets() {
        let bad = |f: f64| if f > 100.0 { 0.0 } else { 1.0 };
        assert!(colorize(&bad, 10.0, 256.0, 1).is_err());
        assert!(colorize(&|_f: f64| 1.0, 10.0001, 256.0, 1).is_err());
    }

    #[test]
    fn model_target_recovered_within_bands() {
        let ifo = InterferometerParams::table1();
        let target = |f: f64| lossy_displacement_psd(&ifo, &SqueezerParams::vacuum(), f.max(10.0)).unwrap();
        let fs = 512.0;
        let t = 1200.0;
        let ts = colorize(&target, t, fs, 5).unwrap();
        let est = estimate_psd(&ts, &EstimatorConfig::default()).unwrap();
        let sigma = statistical_uncertainty(t, 0.5, 0.92).unwrap();
        let band: Vec<(f64, f64)> = est
            .spectrum
            .frequencies()
            .iter()
            .zip(&est.spectrum.values)
            .filter(|(f, _)| (15.0..=250.0).contains(*f))
            .map(|(f, v)| (*f, *v))
            .collect();
        let inside = band
            .iter()
            .filter(|(f, v)| ((v / target(*f)) - 1.0).abs() < 2.0 * sigma)
            .count();
        assert!(inside as f64 >= 0.95 * band.len() as f64, "{inside}/{}", band.len());
    }

    #[test]
    fn seeds_decorrelate() {
        let flat = |_f: f64| 1.0;
        let a = colorize(&flat, 100.0, 128.0, 1).unwrap();
        let b = colorize(&flat, 100.0, 128.0, 2).unwrap();
        let c = colorize(&flat, 100.0, 128.0, 1).unwrap();
        assert_eq!(a, c);
        let dot: f64 = a.samples.iter().zip(&b.samples).map(|(x, y)| x * y).sum();
        let rho = dot / (a.rms() * b.rms() * a.len() as f64);
        assert!(rho.abs() < 3.0 / (a.len() as f64).sqrt(), "{rho}");
    }

    #[test]
    fn pair_with_full_correlation_is_identical() {
        let one = |_f: f64| 2.0;
        let (a, b) = colorize_pair(&one, &one, &one, 20.0, 64.0, 4).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x - y).abs() < 1e-12 * a.rms());
        }
        let over = |_f: f64| 3.0;
        assert!(colorize_pair(&one, &one, &over, 20.0, 64.0, 4).is_err());
    }

    #[test]
    fn glitch_rate_zero_is_identity() {
        let ts = colorize(&|_f: f64| 1.0, 10.0, 128.0, 3).unwrap();
        let cfg = GlitchConfig {
            rate_per_second: 0.0,
            amplitude_scale: 10.0,
            center_freq_hz: 40.0,
            q_factor: 9.0,
        };
        let g = inject_glitches(&ts, &cfg, 1).unwrap();
        assert_eq!(g.count(), 0);
        assert_eq!(g.series.samples, ts.samples);
    }

    #[test]
    fn glitch_counts_are_poisson() {
        let ts = TimeSeries::new(vec![0.0; 64 * 100], 64.0, "z").unwrap();
        let cfg = GlitchConfig {
            rate_per_second: 0.2,
            amplitude_scale: 1.0,
            center_freq_hz: 10.0,
            q_factor: 5.0,
        };
        let trials = 200;
        let total: usize = (0..trials)
            .map(|t| inject_glitches(&ts, &cfg, t).unwrap().count())
            .sum();
        let expected = cfg.rate_per_second * ts.duration_seconds() * trials as f64;
        assert!(
            (total as f64 - expected).abs() < 4.0 * expected.sqrt(),
            "{total} vs {expected}"
        );
    }

    #[test]
    fn sine_gaussian_shape() {
        let cfg = GlitchConfig {
            rate_per_second: 1.0,
            amplitude_scale: 1.0,
            center_freq_hz: 50.0,
            q_factor: 9.0,
        };
        let fs = 4096.0;
        let mut x = vec![0.0; 4096];
        add_sine_gaussian(&mut x, fs, 0.5, 2.0, &cfg);
        let peak = x.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(peak <= 2.0 && peak > 1.9);
        // energy of A e^{-2t²/τ²} sin²(ωt) is A² τ sqrt(π/2) / 2
        let energy: f64 = x.iter().map(|v| v * v).sum::<f64>() / fs;
        let tau = cfg.tau_seconds();
        let expected = 4.0 * tau * (std::f64::consts::PI / 2.0).sqrt() / 2.0;
        assert!((energy / expected - 1.0).abs() < 1e-3, "{energy} {expected}");
    }

    #[test]
    fn single_burst_moves_median_by_at_most_a_few_ranks() {
        let fs = 1024.0;
        let flat = |_f: f64| 2.0 / fs;
        let cfg = GlitchConfig {
            rate_per_second: 1.0,
            amplitude_scale: 10.0,
            center_freq_hz: 100.0,
            q_factor: 9.0,
        };
        let clean = colorize(&flat, 120.0, fs, 8).unwrap();
        let mut dirty = clean.clone();
        add_sine_gaussian(&mut dirty.samples, fs, 61.3, 10.0 * clean.rms(), &cfg);
        let med_c = estimate_psd(&clean, &EstimatorConfig::default()).unwrap().spectrum;
        let med_d = estimate_psd(&dirty, &EstimatorConfig::default()).unwrap().spectrum;
        let mean_c = estimate_psd(&clean, &EstimatorConfig::mean()).unwrap().spectrum;
        let mean_d = estimate_psd(&dirty, &EstimatorConfig::mean()).unwrap().spectrum;
        let k = med_c.grid.band_indices(99.9, 100.1).start;
        assert!(
            mean_d.values[k] / mean_c.values[k] > 1.15,
            "{}",
            mean_d.values[k] / mean_c.values[k]
        );
        // two overlapping segments can each push the median up by one rank,
        // about 2.4% of the level per rank with 119 segments
        let hit = med_c.grid.band_indices(90.0, 110.0);
        let n_hit = hit.len() as f64;
        let avg = hit.map(|i| med_d.values[i] / med_c.values[i] - 1.0).sum::<f64>() / n_hit;
        assert!(avg > 0.0 && avg < 0.05, "{avg}");
        let off_band = med_c.grid.band_indices(150.0, 500.0);
        let far = off_band
            .map(|i| (med_d.values[i] / med_c.values[i] - 1.0).abs())
            .fold(0.0f64, f64::max);
        assert!(far < 0.01, "{far}");
    }

    #[test]
    fn dual_readout_without_independent_noise_is_identical() {
        // Hypothetical limit: vanishing shot and dark noise.
        let ifo = InterferometerParams::table1();
        let mut no_shot = ifo;
        no_shot.arm_power_watts = 1e12;
        let classical = |_f: f64| 1e-38;
        let cfg = DualReadoutConfig {
            dark_noise_fraction: 0.0,
            ..DualReadoutConfig::default()
        };
        let (a, b) = simulate_dual_readout(&no_shot, None, &classical, &cfg, 10.0, 20.0, 256.0, 1).unwrap();
        let diff = a
            .samples
            .iter()
            .zip(&b.samples)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = a.samples.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff < 1e-3 * norm, "{}", diff / norm);
    }

    #[test]
    fn dual_readout_splits_common_and_shot() {
        let ifo = InterferometerParams::table1();
        let classical = |f: f64| 2e-39 * (50.0 / f).powi(2);
        let cfg = DualReadoutConfig::default();
        let fs = 512.0;
        let t = 600.0;
        let (a, b) = simulate_dual_readout(&ifo, None, &classical, &cfg, 10.0, t, fs, 2).unwrap();
        let est = EstimatorConfig::mean();
        let csd = estimate_csd(&a, &b, &est).unwrap().real_part("csd").unwrap();
        let x = recombine(&a, &b, cfg.split_fraction).unwrap();
        let psd = estimate_psd(&x, &est).unwrap().spectrum;
        let g2 = cfg.gain_g * cfg.gain_g;
        let idx = psd.grid.band_indices(20.0, 100.0);
        let (mut csd_sum, mut common_sum, mut shot_ratio) = (0.0, 0.0, 0.0);
        for i in idx.clone() {
            let f = psd.frequencies()[i];
            let shot = shot_psd(&ifo, f).unwrap();
            let common = classical(f) + lossy_displacement_psd(&ifo, &SqueezerParams::vacuum(), f).unwrap() - shot;
            csd_sum += csd.values[i] / g2;
            common_sum += common;
            shot_ratio += (psd.values[i] - csd.values[i]) / g2 / (shot * (1.0 + cfg.dark_noise_fraction));
        }
        let n = idx.len() as f64;
        assert!((csd_sum / common_sum - 1.0).abs() < 0.02, "{}", csd_sum / common_sum);
        assert!((shot_ratio / n - 1.0).abs() < 0.01, "{}", shot_ratio / n);
    }

    #[test]
    fn desk_plan_layout() {
        let plan = SegmentPlan::desk_default();
        assert_eq!(plan.entries.len(), 16);
        assert_eq!(plan.entries.iter().filter(|e| e.mode.is_reference()).count(), 4);
        assert_eq!(plan.total_seconds(), 6.0 * 120.0 + 9.0 * 40.0 + 120.0);
        plan.validate_for_subtraction().unwrap();
        assert!(SegmentPlan::new(vec![PlanEntry::reference(0.0)]).is_err());
        assert!(SegmentPlan::new(vec![PlanEntry::reference(1.0)])
            .unwrap()
            .validate_for_subtraction()
            .is_err());
        let json = serde_json::to_string(&plan).unwrap();
        let back: SegmentPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
    }

    #[test]
    fn classical_template_tuning() {
        let setup = ExperimentSetup::table1(7.2).unwrap();
        let f_dip = dip_frequency(&setup.params, &setup.squeezer, DEFAULT_DIP_SPAN_HZ).unwrap();
        let m_s = lossy_displacement_psd(&setup.params, &setup.squeezer, f_dip).unwrap();
        assert!((setup.classical.density(f_dip) / m_s - 7.2).abs() < 1e-9);
        let shot150 = shot_psd(&setup.params, 150.0).unwrap();
        let r = setup.classical.density(150.0) / shot150;
        assert!(r > 0.1 && r < 1.0, "{r}");
    }

    #[test]
    fn experiment_is_seeded_and_labelled() {
        let mut setup = ExperimentSetup::table1(7.2).unwrap();
        setup.sample_rate_hz = 256.0;
        let plan = SegmentPlan::alternating(1, 35.0, 8.0);
        let a = run_experiment(&plan, &setup, 3).unwrap();
        let b = run_experiment(&plan, &setup, 3).unwrap();
        let c = run_experiment(&plan, &setup, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].series.samples, c[0].series.samples);
        assert_ne!(a[0].seed, a[1].seed);
        assert_eq!(a[0].series.label, "ref_00");
        assert_eq!(a[1].series.label, "sqz_01_+35deg");
    }
}
