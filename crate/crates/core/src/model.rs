//! Quantum-noise displacement spectra: the idealized lossless model, the
//! loss- and detuning-aware model, the free-mass SQL, the shot/QRPN split,
//! the location of the sub-SQL dip and the `(φ, f)` squeezing contour.
//!
//! "X dB of squeezing" always means a PSD factor `e^{-2r} = 10^{-X/10}`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::physics::{angular, FrequencyGrid, InterferometerParams, SqueezerParams, C_LIGHT, HBAR, MAX_SQUEEZE_FACTOR};
use crate::spectrum::Spectrum;

/// Readout squeezing `S = e^{-2r}cos²(φ-θ) + e^{2r}sin²(φ-θ)`.
pub fn squeezing_factor(r: f64, phi: f64, theta: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return domain(format!("squeeze factor must be >= 0, got {r}"));
    }
    if r > MAX_SQUEEZE_FACTOR {
        return domain(format!("squeeze factor {r} is unphysical"));
    }
    let d = phi - theta;
    let (s, c) = d.sin_cos();
    Ok((-2.0 * r).exp() * c * c + (2.0 * r).exp() * s * s)
}

/// Squeezing degraded by the effective efficiency:
/// `S* = η_e S(Ω, φ, ψ) + (1 - η_e)`.
pub fn lossy_squeezing_factor(params: &InterferometerParams, squeezer: &SqueezerParams, f_hz: f64) -> Result<f64> {
    let eta = params.effective_efficiency(f_hz)?;
    let theta = params.rotation_angle(f_hz, true)?;
    let s = squeezing_factor(squeezer.squeeze_factor, squeezer.squeeze_angle_rad, theta)?;
    Ok(eta * s + (1.0 - eta))
}

/// Shot-noise displacement PSD referred through the output efficiency,
/// `ħc / (η_o 8k|G|² P_arm)`.
pub fn shot_psd(params: &InterferometerParams, f_hz: f64) -> Result<f64> {
    let g2 = params.sensing_gain_sq(f_hz)?;
    Ok(HBAR * C_LIGHT / (params.output_efficiency * 8.0 * params.wavenumber_rad_m * g2 * params.arm_power_watts))
}

/// Radiation-pressure displacement PSD, `η_o K²` times the shot term.
pub fn qrpn_psd(params: &InterferometerParams, f_hz: f64) -> Result<f64> {
    let k = params.ponderomotive_gain(f_hz)?;
    Ok(params.output_efficiency * k * k * shot_psd(params, f_hz)?)
}

/// Lossless model `Δx² = S (1 + K²) ħc / (8k|G|²P)` with `θ = arctan K`.
/// Efficiencies and the detuning in `params` are ignored.
pub fn ideal_displacement_psd(params: &InterferometerParams, squeezer: &SqueezerParams, f_hz: f64) -> Result<f64> {
    let k = params.ponderomotive_gain(f_hz)?;
    let g2 = params.sensing_gain_sq(f_hz)?;
    let s = squeezing_factor(squeezer.squeeze_factor, squeezer.squeeze_angle_rad, k.atan())?;
    Ok(s * (1.0 + k * k) * HBAR * C_LIGHT / (8.0 * params.wavenumber_rad_m * g2 * params.arm_power_watts))
}

/// Loss-aware model `Δx² = S* (1 + η_o K²) ħc / (η_o 8k|G|²P)`.
pub fn lossy_displacement_psd(params: &InterferometerParams, squeezer: &SqueezerParams, f_hz: f64) -> Result<f64> {
    let k = params.ponderomotive_gain(f_hz)?;
    let s_star = lossy_squeezing_factor(params, squeezer, f_hz)?;
    Ok(s_star * (1.0 + params.output_efficiency * k * k) * shot_psd(params, f_hz)?)
}

/// Free-mass standard quantum limit `8ħ/(mΩ²)`.
pub fn sql_psd(params: &InterferometerParams, f_hz: f64) -> Result<f64> {
    if !(f_hz.is_finite() && f_hz > 0.0) {
        return domain(format!("frequency must be positive, got {f_hz}"));
    }
    let w = angular(f_hz);
    Ok(8.0 * HBAR / (params.mirror_mass_kg * w * w))
}

/// Unsqueezed model spectrum with its shot and radiation-pressure parts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseDecomposition {
    pub total: Spectrum,
    pub shot: Spectrum,
    pub qrpn: Spectrum,
}

pub fn decompose(params: &InterferometerParams, grid: &FrequencyGrid) -> Result<NoiseDecomposition> {
    let shot = Spectrum::from_fn(grid, "shot", |f| shot_psd(params, f))?;
    let qrpn = Spectrum::from_fn(grid, "qrpn", |f| qrpn_psd(params, f))?;
    let vacuum = SqueezerParams::vacuum();
    let total = Spectrum::from_fn(grid, "quantum_unsqueezed", |f| {
        lossy_displacement_psd(params, &vacuum, f)
    })?;
    Ok(NoiseDecomposition { total, shot, qrpn })
}

/// Frequency span searched by [`dip_frequency`] when none is given.
pub const DEFAULT_DIP_SPAN_HZ: (f64, f64) = (1.0, 5000.0);

/// Frequency at which `θ*(f) = φ`, found by bisection to 1e-6 Hz.
pub fn dip_frequency(params: &InterferometerParams, squeezer: &SqueezerParams, span_hz: (f64, f64)) -> Result<f64> {
    let (mut lo, mut hi) = span_hz;
    if !(lo > 0.0 && hi > lo) {
        return domain(format!("invalid search span {lo}..{hi} Hz"));
    }
    let phi = squeezer.squeeze_angle_rad;
    let h = |f: f64| params.rotation_angle(f, true).map(|t| t - phi);
    let mut h_lo = h(lo)?;
    let h_hi = h(hi)?;
    if h_lo == 0.0 {
        return Ok(lo);
    }
    if h_hi == 0.0 {
        return Ok(hi);
    }
    if h_lo.signum() == h_hi.signum() {
        return Err(Error::NoRoot {
            f_min_hz: span_hz.0,
            f_max_hz: span_hz.1,
        });
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        let h_mid = h(mid)?;
        if h_mid == 0.0 {
            return Ok(mid);
        }
        if h_mid.signum() == h_lo.signum() {
            lo = mid;
            h_lo = h_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Minimum of the amplitude ratio `Δx/Δx_SQL` of the lossy model inside
/// `[f_lo, f_hi]`: a dense scan refined by golden-section search.
/// Returns `(f_hz, ratio)`.
pub fn sql_ratio_minimum(
    params: &InterferometerParams,
    squeezer: &SqueezerParams,
    f_lo: f64,
    f_hi: f64,
) -> Result<(f64, f64)> {
    let ratio =
        |f: f64| -> Result<f64> { Ok((lossy_displacement_psd(params, squeezer, f)? / sql_psd(params, f)?).sqrt()) };
    let n = 2000;
    let step = (f_hi - f_lo) / n as f64;
    let mut best = (f_lo, ratio(f_lo)?);
    for i in 1..=n {
        let f = f_lo + step * i as f64;
        let v = ratio(f)?;
        if v < best.1 {
            best = (f, v);
        }
    }
    let (mut a, mut b) = ((best.0 - step).max(f_lo), (best.0 + step).min(f_hi));
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    while b - a > 1e-7 {
        let c = b - gr * (b - a);
        let d = a + gr * (b - a);
        if ratio(c)? < ratio(d)? {
            b = d;
        } else {
            a = c;
        }
    }
    let f = 0.5 * (a + b);
    let v = ratio(f)?;
    Ok(if v < best.1 { (f, v) } else { best })
}

/// `S*(f, φ)` on a grid, one row per squeeze angle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SqueezingContour {
    pub phis_rad: Vec<f64>,
    pub grid: FrequencyGrid,
    pub rows: Vec<Vec<f64>>,
}

impl SqueezingContour {
    /// Grid index of the minimum of each row.
    pub fn row_argmins(&self) -> Vec<usize> {
        self.rows
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            })
            .collect()
    }
}

pub fn squeezing_contour(
    params: &InterferometerParams,
    squeezer_base: &SqueezerParams,
    phis_rad: &[f64],
    grid: &FrequencyGrid,
) -> Result<SqueezingContour> {
    if let Some(p) = phis_rad
        .iter()
        .find(|p| !(**p > -std::f64::consts::FRAC_PI_2 && **p <= std::f64::consts::FRAC_PI_2))
    {
        return domain(format!("squeeze angle {p} rad outside (-pi/2, pi/2]"));
    }
    let rows = phis_rad
        .par_iter()
        .map(|phi| {
            let sqz = squeezer_base.with_angle(*phi);
            grid.iter()
                .map(|f| lossy_squeezing_factor(params, &sqz, f))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SqueezingContour {
        phis_rad: phis_rad.to_vec(),
        grid: grid.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::db_to_squeeze_factor;

    fn table1() -> (InterferometerParams, SqueezerParams) {
        crate::physics::ParamFile::table1().to_params().unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn squeezing_factor_cases() {
        let r = db_to_squeeze_factor(9.8);
        assert!(rel(squeezing_factor(r, 0.3, 0.3).unwrap(), (-2.0 * r).exp()) < 1e-14);
        assert!((squeezing_factor(0.0, 1.1, -0.4).unwrap() - 1.0).abs() < 1e-15);
        let anti = squeezing_factor(r, std::f64::consts::FRAC_PI_2, 0.0).unwrap();
        assert!((anti - 9.55).abs() < 0.01, "{anti}");
        assert!(squeezing_factor(20.1, 0.0, 0.0).is_err());
        assert!(squeezing_factor(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn lossy_squeezing_limits() {
        let (ifo, sqz) = table1();
        let lossless = ifo.lossless();
        for f in [10.0, 40.0, 300.0] {
            let theta = lossless.rotation_angle(f, true).unwrap();
            let s = squeezing_factor(sqz.squeeze_factor, sqz.squeeze_angle_rad, theta).unwrap();
            assert!(rel(lossy_squeezing_factor(&lossless, &sqz, f).unwrap(), s) < 1e-14);
            let vac = SqueezerParams::vacuum().with_angle(0.7);
            assert!((lossy_squeezing_factor(&ifo, &vac, f).unwrap() - 1.0).abs() < 1e-14);
        }
        // high frequency, angle matched to psi
        let matched = sqz.with_angle(ifo.psi());
        let s = lossy_squeezing_factor(&ifo, &matched, 1e5).unwrap();
        assert!((s - 0.414).abs() < 1e-3, "{s}");
    }

    #[test]
    fn sql_values() {
        let (ifo, _) = table1();
        let amp = sql_psd(&ifo, 40.0).unwrap().sqrt();
        assert!(rel(amp, 1.83e-20) < 0.005, "{amp}");
        assert!(rel(sql_psd(&ifo, 80.0).unwrap().sqrt(), amp / 2.0) < 1e-12);
        let mut heavy = ifo;
        heavy.mirror_mass_kg *= 4.0;
        assert!(rel(sql_psd(&heavy, 40.0).unwrap().sqrt(), amp / 2.0) < 1e-12);
        assert!(sql_psd(&ifo, 0.0).is_err());
    }

    #[test]
    fn ideal_at_unit_gain_equals_sql() {
        let (mut ifo, _) = table1();
        let f = 40.0;
        let k = ifo.ponderomotive_gain(f).unwrap();
        ifo.arm_power_watts /= k;
        assert!((ifo.ponderomotive_gain(f).unwrap() - 1.0).abs() < 1e-12);
        let v = ideal_displacement_psd(&ifo, &SqueezerParams::vacuum(), f).unwrap();
        assert!(rel(v, sql_psd(&ifo, f).unwrap()) < 1e-12);
    }

    #[test]
    fn ideal_unsqueezed_at_40hz() {
        let (ifo, _) = table1();
        let amp = ideal_displacement_psd(&ifo, &SqueezerParams::vacuum(), 40.0)
            .unwrap()
            .sqrt();
        assert!(rel(amp, 1.91e-20) < 0.005, "{amp}");
    }

    #[test]
    fn ideal_identity_with_gain() {
        let (ifo, _) = table1();
        let vac = SqueezerParams::vacuum();
        for f in [5.0, 20.0, 40.0, 150.0, 900.0] {
            let k = ifo.ponderomotive_gain(f).unwrap();
            let w = angular(f);
            let lhs = ideal_displacement_psd(&ifo, &vac, f).unwrap() * k / (1.0 + k * k);
            assert!(rel(lhs, 4.0 * HBAR / (ifo.mirror_mass_kg * w * w)) < 1e-12);
        }
    }

    #[test]
    fn lossless_reduces_to_ideal() {
        let (ifo, sqz) = table1();
        let reduced = ifo.lossless().with_psi(0.0);
        for f in FrequencyGrid::linspace(10.0, 200.0, 96).unwrap().iter() {
            let a = lossy_displacement_psd(&reduced, &sqz, f).unwrap();
            let b = ideal_displacement_psd(&reduced, &sqz, f).unwrap();
            assert!(rel(a, b) < 1e-12, "{f}: {a} vs {b}");
        }
    }

    #[test]
    fn dip_ratio_in_expected_range() {
        let (ifo, sqz) = table1();
        let f_dip = dip_frequency(&ifo, &sqz, (10.0, 200.0)).unwrap();
        let ratio = (lossy_displacement_psd(&ifo, &sqz, f_dip).unwrap() / sql_psd(&ifo, f_dip).unwrap()).sqrt();
        assert!((0.66..=0.71).contains(&ratio), "{ratio}");
        assert!((38.0..=39.0).contains(&f_dip), "{f_dip}");
    }

    #[test]
    fn signal_independent_of_angle_without_squeezing() {
        let (ifo, _) = table1();
        let a = lossy_displacement_psd(&ifo, &SqueezerParams::vacuum().with_angle(0.2), 30.0);
        let b = lossy_displacement_psd(&ifo, &SqueezerParams::vacuum().with_angle(-1.2), 30.0);
        let (a, b) = (a.unwrap(), b.unwrap());
        assert!((a - b).abs() <= 1e-14 * a);
    }

    #[test]
    fn decomposition_properties() {
        let (ifo, _) = table1();
        let lossless = ifo.lossless();
        let grid = FrequencyGrid::new(vec![32.4637, 40.0, 1e5]).unwrap();
        let d = decompose(&lossless, &grid).unwrap();
        for i in 0..grid.len() {
            let sum = d.shot.values[i] + d.qrpn.values[i];
            assert!(rel(sum, d.total.values[i]) < 1e-12);
        }
        let k = lossless.ponderomotive_gain(40.0).unwrap();
        let frac = d.qrpn.values[1] / d.total.values[1];
        assert!((frac - k * k / (1.0 + k * k)).abs() < 1e-12);
        assert!((frac - 0.30).abs() < 0.005, "{frac}");
        assert!(d.qrpn.values[2] / d.total.values[2] < 1e-8);
    }

    #[test]
    fn shot_equals_qrpn_at_unit_gain() {
        let (ifo, _) = table1();
        let lossless = ifo.lossless();
        // bisection for K = 1
        let (mut lo, mut hi) = (10.0, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if lossless.ponderomotive_gain(mid).unwrap() > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let f = 0.5 * (lo + hi);
        let d = decompose(&lossless, &FrequencyGrid::new(vec![f]).unwrap()).unwrap();
        assert!(rel(d.shot.values[0], d.qrpn.values[0]) < 1e-9);
    }

    #[test]
    fn dip_frequency_vs_dense_scan() {
        let (ifo, sqz) = table1();
        let mut prev = f64::INFINITY;
        for deg in [10.0f64, 20.0, 30.0, 35.0, 40.0] {
            let s = sqz.with_angle(deg.to_radians());
            let f = dip_frequency(&ifo, &s, DEFAULT_DIP_SPAN_HZ).unwrap();
            // dense scan oracle: the grid point with theta* closest to phi
            let mut best = (0.0, f64::INFINITY);
            let mut x = 1.0;
            while x < 5000.0 {
                let d = (ifo.rotation_angle(x, true).unwrap() - s.squeeze_angle_rad).abs();
                if d < best.1 {
                    best = (x, d);
                }
                x += 0.01;
            }
            assert!((f - best.0).abs() < 0.011, "{deg}: {f} vs {}", best.0);
            assert!(f < prev, "dip must move down as phi grows");
            prev = f;
        }
    }

    #[test]
    fn dip_no_root_for_tiny_angle() {
        let (ifo, sqz) = table1();
        let s = sqz.with_angle(0.01);
        assert!(matches!(
            dip_frequency(&ifo, &s, (10.0, 200.0)),
            Err(Error::NoRoot { .. })
        ));
    }

    #[test]
    fn s_star_minimum_at_dip() {
        let (ifo, sqz) = table1();
        let f_dip = dip_frequency(&ifo, &sqz, (10.0, 200.0)).unwrap();
        let theta = ifo.rotation_angle(f_dip, true).unwrap();
        let s = squeezing_factor(sqz.squeeze_factor, sqz.squeeze_angle_rad, theta).unwrap();
        assert!((s - (-2.0 * sqz.squeeze_factor).exp()).abs() < 1e-9);
        // loss varies with frequency, so the lossy minimum sits slightly off the root
        let at = lossy_squeezing_factor(&ifo, &sqz, f_dip).unwrap();
        let floor = (0..=2000)
            .map(|i| lossy_squeezing_factor(&ifo, &sqz, f_dip - 10.0 + 0.01 * i as f64).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(at >= floor && at < 1.02 * floor, "{at} {floor}");
    }

    #[test]
    fn contour_rows_and_valley() {
        let (ifo, sqz) = table1();
        let grid = FrequencyGrid::arange(5.0, 500.0, 0.25).unwrap();
        let phis: Vec<f64> = [-50.0f64, 20.0, 35.0, 50.0, 80.0]
            .iter()
            .map(|d| d.to_radians())
            .collect();
        let c = squeezing_contour(&ifo, &sqz, &phis, &grid).unwrap();
        let row35 = &c.rows[2];
        for (i, f) in grid.iter().enumerate().step_by(97) {
            let direct = lossy_squeezing_factor(&ifo, &sqz.with_angle(phis[2]), f).unwrap();
            assert_eq!(row35[i], direct);
        }
        let argmins = c.row_argmins();
        // valley sweeps down in frequency as phi increases
        let fmins: Vec<f64> = argmins.iter().map(|i| grid.as_slice()[*i]).collect();
        for w in fmins[1..].windows(2) {
            assert!(w[1] < w[0], "{fmins:?}");
        }
        for (k, phi) in phis.iter().enumerate().skip(1) {
            let theta = ifo.rotation_angle(fmins[k], true).unwrap();
            assert!(
                (theta - phi).abs() < 0.02,
                "{} {}",
                phi.to_degrees(),
                theta.to_degrees()
            );
        }
        // anti-squeezed, far from theta*: everything above unity
        assert!(c.rows[0].iter().all(|v| *v > 1.0));
        assert!(row35.iter().any(|v| *v < 1.0));
    }

    #[test]
    fn contour_unsqueezed_is_unity() {
        let (ifo, _) = table1();
        let grid = FrequencyGrid::arange(10.0, 100.0, 1.0).unwrap();
        let c = squeezing_contour(&ifo, &SqueezerParams::vacuum(), &[-0.5, 0.0, 1.2], &grid).unwrap();
        assert!(c.rows.iter().flatten().all(|v| (v - 1.0).abs() < 1e-14));
        assert!(squeezing_contour(&ifo, &SqueezerParams::vacuum(), &[2.0], &grid).is_err());
    }

    #[test]
    fn sub_sql_requires_squeezing() {
        let (mut ifo, _) = table1();
        let vac = SqueezerParams::vacuum();
        for (ei, eo) in [(1.0, 1.0), (0.828, 0.826), (0.6, 0.7)] {
            ifo.input_efficiency = ei;
            ifo.output_efficiency = eo;
            for f in FrequencyGrid::arange(5.0, 2000.0, 0.5).unwrap().iter() {
                let v = lossy_displacement_psd(&ifo, &vac, f).unwrap();
                assert!(v >= sql_psd(&ifo, f).unwrap() * (1.0 - 1e-12), "{f}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn squeezing_bounded(r in 0.0f64..3.0, phi in -1.5f64..1.5, theta in -1.5f64..1.5) {
            let s = squeezing_factor(r, phi, theta).unwrap();
            proptest::prop_assert!(s >= (-2.0 * r).exp() * (1.0 - 1e-12));
            proptest::prop_assert!(s <= (2.0 * r).exp() * (1.0 + 1e-12));
        }

        #[test]
        fn loss_floor(f in 5.0f64..2000.0, phi in -1.5f64..1.5) {
            let (ifo, sqz) = table1();
            let sqz = sqz.with_angle(phi);
            let eta = ifo.effective_efficiency(f).unwrap();
            let floor = eta * (-2.0 * sqz.squeeze_factor).exp() + 1.0 - eta;
            let s = lossy_squeezing_factor(&ifo, &sqz, f).unwrap();
            proptest::prop_assert!(s >= floor * (1.0 - 1e-12));
        }

        #[test]
        fn power_optimum_is_sql(f in 5.0f64..1000.0) {
            // K is linear in power, so K = 1 is reached at P/K(P)
            let (mut ifo, _) = table1();
            let k = ifo.ponderomotive_gain(f).unwrap();
            ifo.arm_power_watts /= k;
            let v = ideal_displacement_psd(&ifo, &SqueezerParams::vacuum(), f).unwrap();
            proptest::prop_assert!(rel(v, sql_psd(&ifo, f).unwrap()) < 1e-9);
        }
    }
}
