//! Physical constants, parameter containers and the frequency-domain kernels
//! shared by every quantum-noise expression.
//!
//! All public frequency arguments are in Hz. The sideband angular frequency
//! `Ω = 2πf` is formed inside each kernel, and `f <= 0` is rejected because
//! the ponderomotive gain and the SQL both diverge as `1/Ω²`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Speed of light in vacuum, m/s.
pub const C_LIGHT: f64 = 2.997_924_58e8;

/// Conversion from signal-recycling detuning `ξ` to the squeeze-angle shift
/// `ψ`, evaluated for the Livingston mirror parameters.
pub const DEFAULT_PSI_PER_DETUNING: f64 = 10.7;

/// Largest squeeze factor accepted; `e^{2r}` is unphysical well before this.
pub const MAX_SQUEEZE_FACTOR: f64 = 20.0;

const TABLE1_JSON: &str = include_str!("../data/table1.json");

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub c: f64,
}

impl PhysicalConstants {
    pub const CODATA: PhysicalConstants = PhysicalConstants { hbar: HBAR, c: C_LIGHT };
}

#[inline]
pub fn angular(f_hz: f64) -> f64 {
    2.0 * PI * f_hz
}

fn check_frequency(f_hz: f64) -> Result<f64> {
    if !(f_hz.is_finite() && f_hz > 0.0) {
        return domain(format!("frequency must be positive and finite, got {f_hz} Hz"));
    }
    Ok(angular(f_hz))
}

/// Optical and mechanical configuration of the interferometer.
///
/// Stored in internal units: angular bandwidth, wavenumber, efficiencies
/// (not losses) and the detuning in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferometerParams {
    /// Circulating arm power `P_arm`, W.
    pub arm_power_watts: f64,
    /// Mass of each test mirror, kg.
    pub mirror_mass_kg: f64,
    pub arm_length_m: f64,
    /// Signal bandwidth `γ`, rad/s.
    pub bandwidth_rad_s: f64,
    /// Laser wavenumber `k = 2π/λ`, rad/m.
    pub wavenumber_rad_m: f64,
    /// Squeezer-to-interferometer efficiency `η_i`.
    pub input_efficiency: f64,
    /// Interferometer-to-readout efficiency `η_o`.
    pub output_efficiency: f64,
    /// Signal-recycling cavity detuning `ξ`, rad.
    pub src_detuning_rad: f64,
    /// Model constant relating `ψ` to `ξ`.
    pub psi_per_detuning: f64,
}

impl InterferometerParams {
    /// The LIGO Livingston configuration used for modeling.
    pub fn table1() -> Self {
        ParamFile::table1()
            .to_params()
            .expect("shipped parameter file is valid")
            .0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("arm_power_watts", self.arm_power_watts),
            ("mirror_mass_kg", self.mirror_mass_kg),
            ("arm_length_m", self.arm_length_m),
            ("bandwidth_rad_s", self.bandwidth_rad_s),
            ("wavenumber_rad_m", self.wavenumber_rad_m),
            ("psi_per_detuning", self.psi_per_detuning),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("input_efficiency", self.input_efficiency),
            ("output_efficiency", self.output_efficiency),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !self.src_detuning_rad.is_finite() {
            return Err(Error::Config("src_detuning_rad must be finite".into()));
        }
        Ok(())
    }

    /// Squeeze-angle shift accumulated through the signal-recycling cavity.
    pub fn psi(&self) -> f64 {
        self.psi_per_detuning * self.src_detuning_rad
    }

    /// Sets the detuning so that `psi()` returns `psi`.
    pub fn with_psi(mut self, psi: f64) -> Self {
        self.src_detuning_rad = psi / self.psi_per_detuning;
        self
    }

    pub fn lossless(mut self) -> Self {
        self.input_efficiency = 1.0;
        self.output_efficiency = 1.0;
        self
    }

    /// `G(Ω) = sqrt(γc/2L) / (γ + iΩ)`.
    pub fn sensing_transmissivity(&self, f_hz: f64) -> Result<Complex64> {
        let omega = check_frequency(f_hz)?;
        let scale = (self.bandwidth_rad_s * C_LIGHT / (2.0 * self.arm_length_m)).sqrt();
        Ok(Complex64::new(scale, 0.0) / Complex64::new(self.bandwidth_rad_s, omega))
    }

    /// `|G(Ω)|² = (γc/2L) / (γ² + Ω²)`.
    pub fn sensing_gain_sq(&self, f_hz: f64) -> Result<f64> {
        let omega = check_frequency(f_hz)?;
        let g = self.bandwidth_rad_s;
        Ok(g * C_LIGHT / (2.0 * self.arm_length_m) / (g * g + omega * omega))
    }

    /// Ponderomotive interaction strength `K(Ω) = 32 k |G|² P / (m Ω² c)`.
    pub fn ponderomotive_gain(&self, f_hz: f64) -> Result<f64> {
        let omega = check_frequency(f_hz)?;
        let g2 = self.sensing_gain_sq(f_hz)?;
        Ok(32.0 * self.wavenumber_rad_m * g2 * self.arm_power_watts / (self.mirror_mass_kg * omega * omega * C_LIGHT))
    }

    /// Fraction `Ω²/(γ²+Ω²)` of `ψ` accumulated at this frequency.
    pub fn cavity_pole_fraction(&self, f_hz: f64) -> Result<f64> {
        let omega = check_frequency(f_hz)?;
        let g = self.bandwidth_rad_s;
        Ok(omega * omega / (g * g + omega * omega))
    }

    /// Ponderomotive rotation `θ = arctan K`, plus the signal-recycling shift
    /// `ψ·Ω²/(γ²+Ω²)` when `include_src` is set (`θ*`).
    pub fn rotation_angle(&self, f_hz: f64, include_src: bool) -> Result<f64> {
        let theta = self.ponderomotive_gain(f_hz)?.atan();
        if include_src {
            Ok(theta + self.cavity_pole_fraction(f_hz)? * self.psi())
        } else {
            Ok(theta)
        }
    }

    /// Frequency-dependent effective efficiency,
    /// `1 - η_e = (1 - η_i) + (1 - η_o)/(1 + K²)`.
    ///
    /// Only valid for small losses, so combined losses of one or more are
    /// rejected.
    pub fn effective_efficiency(&self, f_hz: f64) -> Result<f64> {
        let k = self.ponderomotive_gain(f_hz)?;
        let loss_in = 1.0 - self.input_efficiency;
        let loss_out = 1.0 - self.output_efficiency;
        if loss_in + loss_out >= 1.0 {
            return domain(format!(
                "combined losses {:.3} leave the small-loss regime",
                loss_in + loss_out
            ));
        }
        Ok(1.0 - (loss_in + loss_out / (1.0 + k * k)))
    }
}

/// Injected squeezed-vacuum state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezerParams {
    /// Squeeze factor `r`; `e^{-2r}` is the ideal PSD reduction.
    pub squeeze_factor: f64,
    /// Squeeze angle `φ`, rad, in `(-π/2, π/2]`. `φ = 0` reduces shot noise.
    pub squeeze_angle_rad: f64,
}

impl SqueezerParams {
    pub fn new(squeeze_factor: f64, squeeze_angle_rad: f64) -> Result<Self> {
        if !(squeeze_factor.is_finite() && squeeze_factor >= 0.0) {
            return domain(format!("squeeze factor must be >= 0, got {squeeze_factor}"));
        }
        if squeeze_factor > MAX_SQUEEZE_FACTOR {
            return domain(format!(
                "squeeze factor {squeeze_factor} exceeds the physical limit {MAX_SQUEEZE_FACTOR}"
            ));
        }
        if !squeeze_angle_rad.is_finite() {
            return domain("squeeze angle must be finite");
        }
        Ok(Self {
            squeeze_factor,
            squeeze_angle_rad: normalize_angle(squeeze_angle_rad),
        })
    }

    /// Unsqueezed vacuum.
    pub fn vacuum() -> Self {
        Self {
            squeeze_factor: 0.0,
            squeeze_angle_rad: 0.0,
        }
    }

    /// `db` decibels of generated squeezing: `e^{-2r} = 10^{-db/10}`.
    pub fn from_db(db: f64, squeeze_angle_rad: f64) -> Result<Self> {
        Self::new(db_to_squeeze_factor(db), squeeze_angle_rad)
    }

    pub fn db(&self) -> f64 {
        squeeze_factor_to_db(self.squeeze_factor)
    }

    pub fn with_angle(self, squeeze_angle_rad: f64) -> Self {
        Self {
            squeeze_angle_rad: normalize_angle(squeeze_angle_rad),
            ..self
        }
    }
}

/// Maps an angle onto `(-π/2, π/2]`; the squeezing factor has period `π`.
pub fn normalize_angle(phi: f64) -> f64 {
    let n = ((FRAC_PI_2 - phi) / PI).floor();
    phi + n * PI
}

pub fn db_to_squeeze_factor(db: f64) -> f64 {
    db * std::f64::consts::LN_10 / 20.0
}

pub fn squeeze_factor_to_db(r: f64) -> f64 {
    10.0 * (2.0 * r).exp().log10()
}

/// Strictly increasing list of positive frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    frequencies_hz: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(frequencies_hz: Vec<f64>) -> Result<Self> {
        if frequencies_hz.is_empty() {
            return domain("frequency grid is empty");
        }
        if !frequencies_hz.iter().all(|f| f.is_finite() && *f > 0.0) {
            return domain("frequency grid must be positive and finite");
        }
        if frequencies_hz.windows(2).any(|w| w[1] <= w[0]) {
            return domain("frequency grid must be strictly increasing");
        }
        Ok(Self { frequencies_hz })
    }

    /// `n` evenly spaced points from `f_min` to `f_max` inclusive.
    pub fn linspace(f_min: f64, f_max: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Self::new(vec![f_min]);
        }
        let step = (f_max - f_min) / (n - 1) as f64;
        Self::new((0..n).map(|i| f_min + step * i as f64).collect())
    }

    /// Points `f_min, f_min + df, ...` not exceeding `f_max` (up to rounding).
    pub fn arange(f_min: f64, f_max: f64, df: f64) -> Result<Self> {
        if !(df > 0.0) || f_max < f_min {
            return domain(format!("invalid range {f_min}..{f_max} step {df}"));
        }
        let n = ((f_max - f_min) / df + 1e-9).floor() as usize + 1;
        Self::new((0..n).map(|i| f_min + df * i as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.frequencies_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies_hz.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.frequencies_hz
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.frequencies_hz.iter().copied()
    }

    /// Angular frequencies `Ω = 2πf`.
    pub fn angular(&self) -> Vec<f64> {
        self.iter().map(angular).collect()
    }

    pub fn first(&self) -> f64 {
        self.frequencies_hz[0]
    }

    pub fn last(&self) -> f64 {
        self.frequencies_hz[self.frequencies_hz.len() - 1]
    }

    /// Indices of grid points inside `[lo, hi]`.
    pub fn band_indices(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let start = self.frequencies_hz.partition_point(|f| *f < lo);
        let end = self.frequencies_hz.partition_point(|f| *f <= hi);
        start..end.max(start)
    }

    pub fn same_as(&self, other: &FrequencyGrid) -> bool {
        self.len() == other.len()
            && self
                .iter()
                .zip(other.iter())
                .all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0))
    }
}

/// On-disk parameter file in laboratory units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    #[serde(rename = "arm_power_W")]
    pub arm_power_w: f64,
    pub mirror_mass_kg: f64,
    pub arm_length_m: f64,
    pub bandwidth_hz: f64,
    pub wavelength_m: f64,
    pub input_loss: f64,
    pub output_loss: f64,
    pub src_detuning_mrad: f64,
    pub squeeze_db: f64,
    pub squeeze_angle_deg: f64,
    #[serde(default = "default_psi_per_xi", skip_serializing_if = "is_default_psi")]
    pub psi_per_xi: f64,
}

fn default_psi_per_xi() -> f64 {
    DEFAULT_PSI_PER_DETUNING
}

fn is_default_psi(v: &f64) -> bool {
    *v == DEFAULT_PSI_PER_DETUNING
}

impl ParamFile {
    pub fn table1() -> Self {
        serde_json::from_str(TABLE1_JSON).expect("shipped parameter file parses")
    }

    pub fn table1_json() -> &'static str {
        TABLE1_JSON
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_params(&self) -> Result<(InterferometerParams, SqueezerParams)> {
        if !(self.wavelength_m > 0.0) {
            return Err(Error::Config(format!(
                "wavelength_m must be positive, got {}",
                self.wavelength_m
            )));
        }
        let ifo = InterferometerParams {
            arm_power_watts: self.arm_power_w,
            mirror_mass_kg: self.mirror_mass_kg,
            arm_length_m: self.arm_length_m,
            bandwidth_rad_s: angular(self.bandwidth_hz),
            wavenumber_rad_m: 2.0 * PI / self.wavelength_m,
            input_efficiency: 1.0 - self.input_loss,
            output_efficiency: 1.0 - self.output_loss,
            src_detuning_rad: self.src_detuning_mrad * 1e-3,
            psi_per_detuning: self.psi_per_xi,
        };
        ifo.validate()?;
        let sqz = SqueezerParams::from_db(self.squeeze_db, self.squeeze_angle_deg.to_radians())?;
        Ok((ifo, sqz))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn dc_limit_of_sensing_gain() {
        let p = InterferometerParams::table1();
        let dc = C_LIGHT / (2.0 * p.arm_length_m * p.bandwidth_rad_s);
        assert!((dc - 13.27).abs() < 0.005, "{dc}");
        // deep below the pole the gain is flat
        assert!(rel(p.sensing_gain_sq(1e-3).unwrap(), dc) < 1e-9);
        assert!((p.sensing_gain_sq(40.0).unwrap() - 13.17).abs() < 0.005);
    }

    #[test]
    fn half_power_at_cavity_pole() {
        let p = InterferometerParams::table1();
        let dc = C_LIGHT / (2.0 * p.arm_length_m * p.bandwidth_rad_s);
        assert!(rel(p.sensing_gain_sq(450.0).unwrap(), dc / 2.0) < 1e-12);
    }

    #[test]
    fn transmissivity_modulus_matches_gain() {
        let p = InterferometerParams::table1();
        for f in [5.0, 40.0, 450.0, 3000.0] {
            let g = p.sensing_transmissivity(f).unwrap();
            assert!(rel(g.norm_sqr(), p.sensing_gain_sq(f).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn ponderomotive_gain_at_40hz() {
        let p = InterferometerParams::table1();
        let k = p.ponderomotive_gain(40.0).unwrap();
        assert!((k - 0.657).abs() < 5e-4, "{k}");
        let theta = p.rotation_angle(40.0, false).unwrap().to_degrees();
        assert!((theta - 33.3).abs() < 0.05, "{theta}");
    }

    #[test]
    fn doubled_power_doubles_gain() {
        let p = InterferometerParams::table1();
        let mut q = p;
        q.arm_power_watts *= 2.0;
        for f in [10.0, 40.0, 200.0] {
            let ratio = q.ponderomotive_gain(f).unwrap() / p.ponderomotive_gain(f).unwrap();
            assert!((ratio - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gain_structure_is_constant() {
        let p = InterferometerParams::table1();
        let g = p.bandwidth_rad_s;
        let inv = |f: f64| {
            let w = angular(f);
            p.ponderomotive_gain(f).unwrap() * f * f * (g * g + w * w)
        };
        let base = inv(1.0);
        for f in [3.0, 40.0, 450.0, 2000.0] {
            assert!(rel(inv(f), base) < 1e-12);
        }
    }

    #[test]
    fn rejects_nonpositive_frequency() {
        let p = InterferometerParams::table1();
        assert!(matches!(p.ponderomotive_gain(0.0), Err(Error::Domain(_))));
        assert!(p.sensing_gain_sq(-1.0).is_err());
        assert!(p.rotation_angle(0.0, true).is_err());
        assert!(p.effective_efficiency(f64::NAN).is_err());
    }

    #[test]
    fn src_shift_limits() {
        let p = InterferometerParams::table1();
        let psi = p.psi();
        assert!((psi - 0.1605).abs() < 1e-12);
        let hi = p.rotation_angle(1e6, true).unwrap();
        assert!((hi - psi).abs() < 1e-4);
        let zero = p.with_psi(0.0);
        for f in [10.0, 38.0, 400.0] {
            assert_eq!(
                zero.rotation_angle(f, true).unwrap(),
                zero.rotation_angle(f, false).unwrap()
            );
        }
    }

    #[test]
    fn effective_efficiency_limits() {
        let p = InterferometerParams::table1();
        let hi = 1.0 - p.effective_efficiency(1e6).unwrap();
        assert!((hi - 0.346).abs() < 1e-6);
        let lo = 1.0 - p.effective_efficiency(0.01).unwrap();
        assert!((lo - 0.172).abs() < 1e-6);
        let mid = 1.0 - p.effective_efficiency(40.0).unwrap();
        assert!((mid - 0.293).abs() < 1e-3, "{mid}");
    }

    #[test]
    fn large_losses_rejected() {
        let mut p = InterferometerParams::table1();
        p.input_efficiency = 0.4;
        p.output_efficiency = 0.5;
        assert!(p.effective_efficiency(1e4).is_err());
    }

    #[test]
    fn db_round_trip() {
        for db in [0.0, 3.0, 9.8, 15.0] {
            let r = db_to_squeeze_factor(db);
            assert!((squeeze_factor_to_db(r) - db).abs() < 1e-12);
        }
        let s = SqueezerParams::from_db(9.8, 0.0).unwrap();
        assert!((s.squeeze_factor - 1.12827).abs() < 1e-5);
    }

    #[test]
    fn angle_normalization() {
        let n = |d: f64| normalize_angle(d.to_radians()).to_degrees();
        assert!((n(90.0) - 90.0).abs() < 1e-12);
        assert!((n(-90.0) - 90.0).abs() < 1e-12);
        assert!((n(135.0) + 45.0).abs() < 1e-12);
        assert!((n(-50.0) + 50.0).abs() < 1e-12);
    }

    #[test]
    fn squeezer_guards() {
        assert!(SqueezerParams::new(-0.1, 0.0).is_err());
        assert!(SqueezerParams::new(20.5, 0.0).is_err());
        assert!(SqueezerParams::new(20.0, 0.0).is_ok());
    }

    #[test]
    fn grid_validation() {
        assert!(FrequencyGrid::new(vec![1.0, 1.0]).is_err());
        assert!(FrequencyGrid::new(vec![0.0, 1.0]).is_err());
        assert!(FrequencyGrid::new(vec![]).is_err());
        let g = FrequencyGrid::arange(10.0, 200.0, 0.5).unwrap();
        assert_eq!(g.len(), 381);
        assert_eq!(g.band_indices(20.0, 30.0).len(), 21);
    }

    #[test]
    fn param_file_conversion() {
        let (ifo, sqz) = ParamFile::table1().to_params().unwrap();
        assert!((ifo.bandwidth_rad_s - 2.0 * PI * 450.0).abs() < 1e-9);
        assert!((ifo.input_efficiency - 0.828).abs() < 1e-12);
        assert!((ifo.output_efficiency - 0.826).abs() < 1e-12);
        assert!((ifo.src_detuning_rad - 0.015).abs() < 1e-15);
        assert!((sqz.db() - 9.8).abs() < 1e-12);
        assert!((sqz.squeeze_angle_rad.to_degrees() - 35.0).abs() < 1e-12);
    }

    #[test]
    fn psi_factor_overridable() {
        let mut pf = ParamFile::table1();
        pf.psi_per_xi = 5.0;
        let (ifo, _) = pf.to_params().unwrap();
        assert!((ifo.psi() - 0.075).abs() < 1e-12);
    }

    #[test]
    fn kernels_are_deterministic() {
        let p = InterferometerParams::table1();
        for f in [12.5, 38.8, 333.0] {
            assert_eq!(
                p.effective_efficiency(f).unwrap().to_bits(),
                p.effective_efficiency(f).unwrap().to_bits()
            );
        }
    }

    proptest::proptest! {
        #[test]
        fn kernel_ranges(f in 0.1f64..5000.0) {
            let p = InterferometerParams::table1();
            let k = p.ponderomotive_gain(f).unwrap();
            let eta = p.effective_efficiency(f).unwrap();
            let theta = p.rotation_angle(f, false).unwrap();
            proptest::prop_assert!(k > 0.0);
            proptest::prop_assert!(eta > 0.0 && eta < 1.0);
            proptest::prop_assert!(theta > 0.0 && theta < FRAC_PI_2);
        }

        #[test]
        fn gain_invariant_under_power_mass_scaling(f in 1.0f64..1000.0, alpha in 0.1f64..10.0) {
            let p = InterferometerParams::table1();
            let mut q = p;
            q.arm_power_watts *= alpha;
            q.mirror_mass_kg *= alpha;
            let a = p.ponderomotive_gain(f).unwrap();
            let b = q.ponderomotive_gain(f).unwrap();
            proptest::prop_assert!(((a - b) / a).abs() < 1e-12);
        }

        #[test]
        fn src_shift_is_additive(f in 1.0f64..2000.0, psi in -0.5f64..0.5) {
            let p = InterferometerParams::table1().with_psi(psi);
            let z = p.with_psi(0.0);
            let w = angular(f);
            let g = p.bandwidth_rad_s;
            let diff = p.rotation_angle(f, true).unwrap() - z.rotation_angle(f, true).unwrap();
            proptest::prop_assert!((diff - psi * w * w / (g * g + w * w)).abs() < 1e-12);
        }
    }
}
