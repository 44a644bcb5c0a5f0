use serde::{Deserialize, Serialize};

use super::{HANN_BIN_VARIANCE_INFLATION, HANN_SQUARED_VARIANCE_INFLATION};
use crate::error::{domain, Error, Result};
use crate::spectral::statistical_uncertainty;
use crate::spectrum::Spectrum;

/// `N_ij = 2(D_i - D_j)/(D_i + D_j)`, bounded in `[-2, 2]`.
pub fn stationarity_pair(d_i: &Spectrum, d_j: &Spectrum) -> Result<Spectrum> {
    d_i.check_same_grid(d_j)?;
    if let Some(k) = d_i.values.iter().zip(&d_j.values).position(|(a, b)| a + b == 0.0) {
        return domain(format!("D_i + D_j vanishes at {} Hz", d_i.frequencies()[k]));
    }
    d_i.zip_with(d_j, format!("N[{}|{}]", d_i.label, d_j.label), |a, b| {
        2.0 * (a - b) / (a + b)
    })
}

/// Durations feeding the statistical floors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityConfig {
    pub efficiency: f64,
    pub reference_seconds: f64,
    pub squeezed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedSpectrum {
    pub name: String,
    pub spectrum: Spectrum,
    /// 2σ statistical band on `|N_ij|`.
    pub band_2sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    /// `R12, R23, R31, S12, S23, S31`.
    pub pairs: Vec<NamedSpectrum>,
    /// `N_Σ²`, the mean of the six squared pair metrics.
    pub combined: Spectrum,
    /// Bin-wise `sqrt(N_Σ² / 3)`.
    pub delta_nt: Spectrum,
    /// Expected `N_Σ` for stationary data, `√2 (E T ΔF)^{-1/2}`
    /// (the reference and squeezed floors averaged in quadrature).
    pub floor: f64,
    /// Bin-wise 2σ bound on `N_Σ²`, i.e. `(2 · floor)²`.
    pub combined_bound_2sigma: f64,
}

impl StationarityReport {
    pub fn pair(&self, name: &str) -> Option<&NamedSpectrum> {
        self.pairs.iter().find(|p| p.name == name)
    }

    fn band_indices(&self, lo: f64, hi: f64) -> Result<std::ops::Range<usize>> {
        let idx = self.combined.grid.band_indices(lo, hi);
        if idx.is_empty() {
            return domain(format!("no bins in {lo}-{hi} Hz"));
        }
        Ok(idx)
    }

    /// Fraction of bins in `[lo, hi]` with `N_Σ² ≤ (2 floor)²`.
    pub fn combined_coverage(&self, lo: f64, hi: f64) -> Result<f64> {
        let idx = self.band_indices(lo, hi)?;
        let n = idx.len() as f64;
        let inside = self.combined.values[idx]
            .iter()
            .filter(|v| **v <= self.combined_bound_2sigma)
            .count();
        Ok(inside as f64 / n)
    }

    /// Fraction of bins in `[lo, hi]` with `|N_ij|` inside its 2σ band.
    pub fn pair_coverage(&self, name: &str, lo: f64, hi: f64) -> Result<f64> {
        let p = self
            .pair(name)
            .ok_or_else(|| Error::Domain(format!("no stationarity pair {name}")))?;
        let idx = self.band_indices(lo, hi)?;
        let n = idx.len() as f64;
        let inside = p.spectrum.values[idx]
            .iter()
            .filter(|v| v.abs() <= p.band_2sigma)
            .count();
        Ok(inside as f64 / n)
    }

    /// Significance of the band-averaged excess of `N_Σ²` over its floor.
    /// Stationary data have `N_Σ² ≈ (floor²/4) χ²₄`, so each bin has
    /// standard deviation `floor²/√2`.
    pub fn combined_excess_z(&self, lo: f64, hi: f64) -> Result<f64> {
        let idx = self.band_indices(lo, hi)?;
        let n = idx.len() as f64;
        let mean = self.combined.values[idx].iter().sum::<f64>() / n;
        let f2 = self.floor * self.floor;
        let sigma = f2 / 2f64.sqrt() * (HANN_SQUARED_VARIANCE_INFLATION / n).sqrt();
        Ok((mean - f2) / sigma)
    }

    /// Significance of the band-averaged signed `N_ij`.
    pub fn pair_excess_z(&self, name: &str, lo: f64, hi: f64) -> Result<f64> {
        let p = self
            .pair(name)
            .ok_or_else(|| Error::Domain(format!("no stationarity pair {name}")))?;
        let idx = self.band_indices(lo, hi)?;
        let n = idx.len() as f64;
        let mean = p.spectrum.values[idx].iter().sum::<f64>() / n;
        let sigma = p.band_2sigma / 2.0 * (HANN_BIN_VARIANCE_INFLATION / n).sqrt();
        Ok(mean / sigma)
    }

    /// Band-averaged `sqrt(N_Σ²/3)`, the data-driven bound on `δN_t`.
    pub fn delta_nt_band(&self, lo: f64, hi: f64) -> Result<f64> {
        let idx = self.band_indices(lo, hi)?;
        let n = idx.len() as f64;
        Ok((self.combined.values[idx].iter().sum::<f64>() / n / 3.0).sqrt())
    }
}

/// Pairwise and combined non-stationarity of three reference and three
/// squeezed spectra.
pub fn stationarity_combined(
    refs: &[Spectrum; 3],
    sqzs: &[Spectrum; 3],
    cfg: &StationarityConfig,
) -> Result<StationarityReport> {
    for s in refs.iter().chain(sqzs.iter()) {
        refs[0].check_same_grid(s)?;
    }
    let df = refs[0].bin_width_hz;
    let d_r = statistical_uncertainty(cfg.reference_seconds, df, cfg.efficiency)?;
    let d_s = statistical_uncertainty(cfg.squeezed_seconds, df, cfg.efficiency)?;
    let mut pairs = Vec::with_capacity(6);
    for (prefix, set, delta) in [("R", refs, d_r), ("S", sqzs, d_s)] {
        for (i, j) in [(0usize, 1usize), (1, 2), (2, 0)] {
            pairs.push(NamedSpectrum {
                name: format!("{prefix}{}{}", i + 1, j + 1),
                spectrum: stationarity_pair(&set[i], &set[j])?,
                band_2sigma: 2.0 * (2.0 * delta * delta).sqrt(),
            });
        }
    }
    let bins = refs[0].len();
    let combined_values: Vec<f64> = (0..bins)
        .map(|k| pairs.iter().map(|p| p.spectrum.values[k].powi(2)).sum::<f64>() / 6.0)
        .collect();
    let combined = Spectrum::new(refs[0].grid.clone(), combined_values, "N_sigma_sq")?.with_bin_width(df);
    let delta_nt = combined.map("delta_nt", |v| (v / 3.0).sqrt())?;
    let floor = (d_r * d_r + d_s * d_s).sqrt();
    Ok(StationarityReport {
        pairs,
        combined,
        delta_nt,
        floor,
        combined_bound_2sigma: 4.0 * floor * floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::FrequencyGrid;

    fn spec(v: Vec<f64>) -> Spectrum {
        let grid = FrequencyGrid::arange(0.5, 0.5 * v.len() as f64, 0.5).unwrap();
        Spectrum::new(grid, v, "d").unwrap()
    }

    #[test]
    fn pair_arithmetic() {
        let a = spec(vec![3.0, 1.0, 2.0]);
        let b = spec(vec![1.0, 1.0, 0.0]);
        assert_eq!(stationarity_pair(&a, &b).unwrap().values, vec![1.0, 0.0, 2.0]);
        assert!(stationarity_pair(&spec(vec![0.0]), &spec(vec![0.0])).is_err());
    }

    #[test]
    fn identical_sextet_is_zero() {
        let s = spec(vec![1.0; 40]);
        let arr = [s.clone(), s.clone(), s.clone()];
        let cfg = StationarityConfig {
            efficiency: 1.0,
            reference_seconds: 100.0,
            squeezed_seconds: 100.0,
        };
        let rep = stationarity_combined(&arr, &arr, &cfg).unwrap();
        assert!(rep.combined.values.iter().all(|v| *v == 0.0));
        assert!((rep.floor - 2f64.sqrt() * (50.0f64).powf(-0.5)).abs() < 1e-15);
        assert_eq!(rep.pairs.len(), 6);
        assert_eq!(rep.combined_coverage(1.0, 10.0).unwrap(), 1.0);
    }

    proptest::proptest! {
        #[test]
        fn antisymmetric_and_bounded(
            a in proptest::collection::vec(0.0f64..1e3, 1..20),
            scale in 1e-3f64..1e3,
        ) {
            let b: Vec<f64> = a.iter().rev().map(|v| v * scale + 1e-9).collect();
            let a: Vec<f64> = a.iter().map(|v| v + 1e-9).collect();
            let (sa, sb) = (spec(a), spec(b));
            let nij = stationarity_pair(&sa, &sb).unwrap();
            let nji = stationarity_pair(&sb, &sa).unwrap();
            for (x, y) in nij.values.iter().zip(&nji.values) {
                proptest::prop_assert_eq!(*x, -*y);
                proptest::prop_assert!(x.abs() <= 2.0);
            }
        }
    }
}
