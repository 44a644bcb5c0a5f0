use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::physics::FrequencyGrid;
use crate::spectrum::Spectrum;

/// A relative error, either one number for all bins or one per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Relative {
    Scalar(f64),
    PerBin(Vec<f64>),
}

impl Default for Relative {
    fn default() -> Self {
        Relative::Scalar(0.0)
    }
}

impl Relative {
    fn expand(&self, name: &str, bins: usize) -> Result<Vec<f64>> {
        let v = match self {
            Relative::Scalar(x) => vec![*x; bins],
            Relative::PerBin(v) if v.len() == bins => v.clone(),
            Relative::PerBin(v) => {
                return Err(Error::LengthMismatch {
                    left: v.len(),
                    right: bins,
                })
            }
        };
        if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return domain(format!("relative error {name} must be finite and >= 0"));
        }
        Ok(v)
    }
}

/// Relative error inputs: calibration `G`, loop correction `C`, reference
/// model `M_r`, the two measured spectra, non-stationarity `N_t` and
/// model-mismatch `N_m`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetComponents {
    #[serde(rename = "dG")]
    pub d_g: Relative,
    #[serde(rename = "dC")]
    pub d_c: Relative,
    #[serde(rename = "dMr")]
    pub d_mr: Relative,
    #[serde(rename = "dDr")]
    pub d_dr: Relative,
    #[serde(rename = "dDs")]
    pub d_ds: Relative,
    #[serde(rename = "dNt")]
    pub d_nt: Relative,
    #[serde(rename = "dNm")]
    pub d_nm: Relative,
}

/// Bin-wise relative error of the inferred quantum noise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintyBudget {
    pub grid: FrequencyGrid,
    /// `δQ`; NaN where `Q = 0`.
    pub dq: Vec<f64>,
    pub dg: Vec<f64>,
    pub dc: Vec<f64>,
    pub dmr: Vec<f64>,
    pub ddr: Vec<f64>,
    pub dds: Vec<f64>,
    pub dnt: Vec<f64>,
    pub dnm: Vec<f64>,
    /// `V = (D_r - M_r)/Q`; NaN where `Q = 0`.
    pub v: Vec<f64>,
    pub undefined_bins: Vec<usize>,
    d_r: Vec<f64>,
    d_s: Vec<f64>,
    m_r: Vec<f64>,
    q: Vec<f64>,
}

fn quadrature(q: f64, d_r: f64, d_s: f64, m_r: f64, [dg, dc, dmr, ddr, dds, dnt, dnm]: [f64; 7]) -> f64 {
    let c = d_r - m_r;
    let inner = m_r * m_r * dmr * dmr
        + (d_r - d_s).powi(2) * dc * dc
        + d_r * d_r * ddr * ddr
        + d_s * d_s * dds * dds
        + c * c * (dnt * dnt + dnm * dnm);
    (dg * dg + inner / (q * q)).sqrt()
}

impl UncertaintyBudget {
    fn components(&self, k: usize) -> [f64; 7] {
        [
            self.dg[k],
            self.dc[k],
            self.dmr[k],
            self.ddr[k],
            self.dds[k],
            self.dnt[k],
            self.dnm[k],
        ]
    }

    /// Absolute 1σ error of `Q`, `δQ·|Q|`, which stays finite at `Q = 0`.
    pub fn absolute(&self, k: usize) -> f64 {
        let [dg, dc, dmr, ddr, dds, dnt, dnm] = self.components(k);
        let (q, d_r, d_s, m_r) = (self.q[k], self.d_r[k], self.d_s[k], self.m_r[k]);
        let c = d_r - m_r;
        (q * q * dg * dg
            + m_r * m_r * dmr * dmr
            + (d_r - d_s).powi(2) * dc * dc
            + d_r * d_r * ddr * ddr
            + d_s * d_s * dds * dds
            + c * c * (dnt * dnt + dnm * dnm))
            .sqrt()
    }

    /// Recomputes `δQ` from the stored components and inputs.
    pub fn reassemble(&self) -> Vec<f64> {
        (0..self.dq.len())
            .map(|k| {
                if self.q[k] == 0.0 {
                    f64::NAN
                } else {
                    quadrature(self.q[k], self.d_r[k], self.d_s[k], self.m_r[k], self.components(k))
                }
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.dq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dq.is_empty()
    }
}

pub fn uncertainty_budget(
    d_r: &Spectrum,
    d_s: &Spectrum,
    m_r: &Spectrum,
    q: &Spectrum,
    components: &BudgetComponents,
) -> Result<UncertaintyBudget> {
    for s in [d_s, m_r, q] {
        d_r.check_same_grid(s)?;
    }
    let n = d_r.len();
    let dg = components.d_g.expand("dG", n)?;
    let dc = components.d_c.expand("dC", n)?;
    let dmr = components.d_mr.expand("dMr", n)?;
    let ddr = components.d_dr.expand("dDr", n)?;
    let dds = components.d_ds.expand("dDs", n)?;
    let dnt = components.d_nt.expand("dNt", n)?;
    let dnm = components.d_nm.expand("dNm", n)?;
    let mut dq = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut undefined_bins = Vec::new();
    for k in 0..n {
        let (qk, dr, ds, mr) = (q.values[k], d_r.values[k], d_s.values[k], m_r.values[k]);
        if qk == 0.0 {
            undefined_bins.push(k);
            dq.push(f64::NAN);
            v.push(f64::NAN);
            continue;
        }
        dq.push(quadrature(
            qk,
            dr,
            ds,
            mr,
            [dg[k], dc[k], dmr[k], ddr[k], dds[k], dnt[k], dnm[k]],
        ));
        v.push((dr - mr) / qk);
    }
    Ok(UncertaintyBudget {
        grid: d_r.grid.clone(),
        dq,
        dg,
        dc,
        dmr,
        ddr,
        dds,
        dnt,
        dnm,
        v,
        undefined_bins,
        d_r: d_r.values.clone(),
        d_s: d_s.values.clone(),
        m_r: m_r.values.clone(),
        q: q.values.clone(),
    })
}
