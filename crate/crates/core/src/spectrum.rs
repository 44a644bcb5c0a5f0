//! One-sided spectral densities on a frequency grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::FrequencyGrid;

/// A one-sided PSD (m²/Hz unless labelled otherwise) sampled on a grid.
///
/// Estimated spectra are non-negative. Derived quantities such as the
/// inferred quantum noise or a non-stationarity metric reuse this type and
/// may carry negative bins; [`Spectrum::is_nonnegative`] tells them apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub grid: FrequencyGrid,
    pub values: Vec<f64>,
    pub bin_width_hz: f64,
    pub segment_count: Option<usize>,
    pub label: String,
}

impl Spectrum {
    pub fn new(grid: FrequencyGrid, values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::LengthMismatch {
                left: grid.len(),
                right: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("spectrum value {v} is not finite")));
        }
        let bin_width_hz = if grid.len() > 1 {
            grid.as_slice()[1] - grid.as_slice()[0]
        } else {
            0.0
        };
        Ok(Self {
            grid,
            values,
            bin_width_hz,
            segment_count: None,
            label: label.into(),
        })
    }

    /// Evaluates `f` at every grid point.
    pub fn from_fn(
        grid: &FrequencyGrid,
        label: impl Into<String>,
        mut f: impl FnMut(f64) -> Result<f64>,
    ) -> Result<Self> {
        let values = grid.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        Self::new(grid.clone(), values, label)
    }

    pub fn with_segments(mut self, n: usize) -> Self {
        self.segment_count = Some(n);
        self
    }

    pub fn with_bin_width(mut self, df: f64) -> Self {
        self.bin_width_hz = df;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn frequencies(&self) -> &[f64] {
        self.grid.as_slice()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|v| *v >= 0.0)
    }

    /// Elementwise square root; negative bins map to `-sqrt(|v|)`.
    pub fn amplitude(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.signum() * v.abs().sqrt()).collect()
    }

    pub fn check_same_grid(&self, other: &Spectrum) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "'{}' ({} bins) vs '{}' ({} bins)",
                self.label,
                self.len(),
                other.label,
                other.len()
            )))
        }
    }

    /// Bin-wise combination of two spectra on the same grid.
    pub fn zip_with(
        &self,
        other: &Spectrum,
        label: impl Into<String>,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Spectrum> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect();
        let mut out = Spectrum::new(self.grid.clone(), values, label)?;
        out.bin_width_hz = self.bin_width_hz;
        Ok(out)
    }

    pub fn map(&self, label: impl Into<String>, f: impl Fn(f64) -> f64) -> Result<Spectrum> {
        let values = self.values.iter().map(|v| f(*v)).collect();
        let mut out = Spectrum::new(self.grid.clone(), values, label)?;
        out.bin_width_hz = self.bin_width_hz;
        out.segment_count = self.segment_count;
        Ok(out)
    }

    /// Restricts to the bins within `[lo, hi]` Hz.
    pub fn band(&self, lo: f64, hi: f64) -> Result<Spectrum> {
        let idx = self.grid.band_indices(lo, hi);
        let grid = FrequencyGrid::new(self.grid.as_slice()[idx.clone()].to_vec())?;
        Ok(Spectrum {
            grid,
            values: self.values[idx].to_vec(),
            bin_width_hz: self.bin_width_hz,
            segment_count: self.segment_count,
            label: self.label.clone(),
        })
    }

    /// Log-log interpolation, holding the end values outside the grid.
    /// Falls back to linear interpolation where a value is not positive.
    pub fn interpolate(&self, f_hz: f64) -> f64 {
        let fs = self.grid.as_slice();
        let n = fs.len();
        if n == 1 || f_hz <= fs[0] {
            return self.values[0];
        }
        if f_hz >= fs[n - 1] {
            return self.values[n - 1];
        }
        let hi = fs.partition_point(|f| *f < f_hz);
        let lo = hi - 1;
        let (f0, f1) = (fs[lo], fs[hi]);
        let (v0, v1) = (self.values[lo], self.values[hi]);
        if v0 > 0.0 && v1 > 0.0 {
            let t = (f_hz / f0).ln() / (f1 / f0).ln();
            (v0.ln() + t * (v1.ln() - v0.ln())).exp()
        } else {
            let t = (f_hz - f0) / (f1 - f0);
            v0 + t * (v1 - v0)
        }
    }
}

/// Local quadratic least-squares smoothing of `y(x)` over a window of
/// `half` points either side (shrunk at the edges).
pub fn local_quadratic(x: &[f64], y: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            if hi - lo < 3 {
                return y[i];
            }
            let x0 = x[i];
            // normal equations for y = a + b t + c t², t = x - x0
            let mut s = [0.0f64; 5];
            let mut t = [0.0f64; 3];
            for j in lo..hi {
                let d = x[j] - x0;
                let mut p = 1.0;
                for (k, sk) in s.iter_mut().enumerate() {
                    *sk += p;
                    if k < 3 {
                        t[k] += p * y[j];
                    }
                    p *= d;
                }
            }
            let m = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
            let det = |m: [[f64; 3]; 3]| {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            };
            let d = det(m);
            if d.abs() < 1e-300 {
                return y[i];
            }
            let mut ma = m;
            for (r, tr) in t.iter().enumerate() {
                ma[r][0] = *tr;
            }
            det(ma) / d
        })
        .collect()
}

impl Spectrum {
    /// Local quadratic smoothing of `ln v` against `ln f`; falls back to
    /// smoothing `v` against `f` if any bin is not positive.
    pub fn smoothed(&self, half: usize) -> Result<Spectrum> {
        let label = format!("{} (smoothed)", self.label);
        let values = if self.is_nonnegative() && self.values.iter().all(|v| *v > 0.0) {
            let lx: Vec<f64> = self.frequencies().iter().map(|f| f.ln()).collect();
            let ly: Vec<f64> = self.values.iter().map(|v| v.ln()).collect();
            local_quadratic(&lx, &ly, half).into_iter().map(f64::exp).collect()
        } else {
            local_quadratic(self.frequencies(), &self.values, half)
        };
        let mut out = Spectrum::new(self.grid.clone(), values, label)?;
        out.bin_width_hz = self.bin_width_hz;
        out.segment_count = self.segment_count;
        Ok(out)
    }
}

/// Anything that can report a one-sided PSD at an arbitrary frequency.
pub trait SpectralDensity: Sync {
    fn density(&self, f_hz: f64) -> f64;
}

impl SpectralDensity for Spectrum {
    fn density(&self, f_hz: f64) -> f64 {
        self.interpolate(f_hz)
    }
}

impl<F> SpectralDensity for F
where
    F: Fn(f64) -> f64 + Sync,
{
    fn density(&self, f_hz: f64) -> f64 {
        self(f_hz)
    }
}
