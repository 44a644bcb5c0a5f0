//! Weighted least-squares recovery of the squeezer and interferometer
//! parameters `(r, ψ, η_i, Δφ)` from observed-squeezing spectra taken at
//! several nominal squeeze angles.
//!
//! The fit runs in `S*` space, where the sensing gain has already been
//! removed by calibration. A coarse grid over `(r, ψ, Δφ)` seeds a bounded
//! downhill simplex. The weights are iterated: the first pass uses the
//! noise predicted from smoothed data, later passes the noise predicted from
//! the previous best model, which removes the bias of data-derived weights.

mod linalg;
pub mod simplex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::InterferometerParams;
use crate::spectrum::{local_quadratic, Spectrum};

pub use linalg::{inverse_spd, symmetric_eigen};
pub use simplex::SimplexOptions;

pub const PARAM_NAMES: [&str; 4] = ["squeeze_factor", "psi_rad", "input_efficiency", "angle_offset_rad"];

/// Free parameters shared by every dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub squeeze_factor: f64,
    pub psi_rad: f64,
    pub input_efficiency: f64,
    /// Global offset added to every nominal squeeze angle.
    pub angle_offset_rad: f64,
}

impl FitParams {
    pub fn to_array(&self) -> [f64; 4] {
        [
            self.squeeze_factor,
            self.psi_rad,
            self.input_efficiency,
            self.angle_offset_rad,
        ]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            squeeze_factor: a[0],
            psi_rad: a[1],
            input_efficiency: a[2],
            angle_offset_rad: a[3],
        }
    }

    /// The parameters a model `(ifo, squeeze factor)` implies, with zero offset.
    pub fn from_model(ifo: &InterferometerParams, squeeze_factor: f64) -> Self {
        Self {
            squeeze_factor,
            psi_rad: ifo.psi(),
            input_efficiency: ifo.input_efficiency,
            angle_offset_rad: 0.0,
        }
    }
}

/// Box constraints; a parameter with `lo == hi` is held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub squeeze_factor: (f64, f64),
    pub psi_rad: (f64, f64),
    pub input_efficiency: (f64, f64),
    pub angle_offset_rad: (f64, f64),
}

/// Smallest admissible input efficiency; the box is open at 0.5.
pub const MIN_INPUT_EFFICIENCY: f64 = 0.5 + 1e-9;

impl Default for Bounds {
    fn default() -> Self {
        Self {
            squeeze_factor: (0.0, 3.0),
            psi_rad: (-0.5, 0.5),
            input_efficiency: (MIN_INPUT_EFFICIENCY, 1.0),
            angle_offset_rad: (-10f64.to_radians(), 10f64.to_radians()),
        }
    }
}

impl Bounds {
    pub fn to_array(&self) -> [(f64, f64); 4] {
        [
            self.squeeze_factor,
            self.psi_rad,
            self.input_efficiency,
            self.angle_offset_rad,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let limits = Bounds::default().to_array();
        for ((name, (lo, hi)), (llo, lhi)) in PARAM_NAMES.iter().zip(self.to_array()).zip(limits) {
            if !(lo <= hi && lo >= llo - 1e-12 && hi <= lhi + 1e-12) {
                return Err(Error::Config(format!(
                    "bounds for {name} [{lo}, {hi}] must be ordered and inside [{llo}, {lhi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &FitParams) -> bool {
        self.to_array()
            .iter()
            .zip(p.to_array())
            .all(|((lo, hi), v)| v >= *lo && v <= *hi)
    }

    pub fn fix(mut self, index: usize, value: f64) -> Self {
        match index {
            0 => self.squeeze_factor = (value, value),
            1 => self.psi_rad = (value, value),
            2 => self.input_efficiency = (value, value),
            _ => self.angle_offset_rad = (value, value),
        }
        self
    }
}

/// Statistical noise of `S*_obs` predicted from the subtraction inputs:
/// `σ(S) = sqrt((C + S M_r)² δ_s² + D_r² δ_r² + C² δ_Nt²) / M_r`, with
/// `C = D_r - M_r` the (smoothed) classical noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedNoise {
    pub classical: Vec<f64>,
    pub reference_model: Vec<f64>,
    pub delta_squeezed: f64,
    pub delta_reference: f64,
    pub delta_nt: f64,
}

impl PredictedNoise {
    pub fn sigma(&self, k: usize, s_model: f64) -> f64 {
        let c = self.classical[k];
        let m = self.reference_model[k];
        let d_s = c + s_model * m;
        let d_r = c + m;
        ((d_s * self.delta_squeezed).powi(2) + (d_r * self.delta_reference).powi(2) + (c * self.delta_nt).powi(2))
            .sqrt()
            / m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseModel {
    /// Fixed per-bin 1σ of `S*_obs`.
    Fixed {
        sigma: Vec<f64>,
    },
    Predicted(PredictedNoise),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDataset {
    pub label: String,
    pub phi_nominal_rad: f64,
    pub s_obs: Spectrum,
    pub noise: NoiseModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitProblem {
    pub datasets: Vec<FitDataset>,
    /// Fixed interferometer configuration (`η_o`, power, masses, `γ`, `k`);
    /// its `ψ` and `η_i` are replaced by the fit parameters.
    pub base: InterferometerParams,
    pub bounds: Bounds,
    pub init: FitParams,
    pub band_hz: (f64, f64),
    /// Number of weight iterations (1 = weights from smoothed data only).
    pub weight_stages: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Coarse grid points over `(r, ψ, Δφ)`.
    pub grid_points: [usize; 3],
    pub simplex: SimplexOptions,
    /// Extra simplex restarts from the best point.
    pub restarts: usize,
    /// Half-width, in bins, of the smoothing used for first-pass weights.
    pub smoothing_half_width: usize,
    /// Hessian condition number beyond which the problem is unidentifiable.
    pub max_condition: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            grid_points: [13, 11, 9],
            simplex: SimplexOptions::default(),
            restarts: 2,
            smoothing_half_width: 10,
            max_condition: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub value: f64,
    pub sigma: f64,
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: FitParams,
    pub estimates: Vec<ParamEstimate>,
    pub objective: f64,
    pub initial_objective: f64,
    pub grid_objective: f64,
    pub chi2_per_dof: f64,
    pub dof: usize,
    pub iterations: usize,
    pub condition_number: f64,
    /// Final per-bin 1σ used as weights, one vector per dataset.
    pub sigmas: Vec<Vec<f64>>,
}

impl FitResult {
    pub fn estimate(&self, name: &str) -> Option<ParamEstimate> {
        PARAM_NAMES.iter().position(|n| *n == name).map(|i| self.estimates[i])
    }
}

/// Parameter-independent per-bin quantities of one dataset.
struct Prepared {
    phi: f64,
    range: std::ops::Range<usize>,
    obs: Vec<f64>,
    atan_k: Vec<f64>,
    pole: Vec<f64>,
    output_loss: Vec<f64>,
}

impl Prepared {
    fn new(ds: &FitDataset, base: &InterferometerParams, band: (f64, f64)) -> Result<Self> {
        let range = ds.s_obs.grid.band_indices(band.0, band.1);
        if range.is_empty() {
            return Err(Error::Domain(format!(
                "dataset {} has no bins in the fit band",
                ds.label
            )));
        }
        let freqs = &ds.s_obs.frequencies()[range.clone()];
        let mut atan_k = Vec::with_capacity(freqs.len());
        let mut pole = Vec::with_capacity(freqs.len());
        let mut output_loss = Vec::with_capacity(freqs.len());
        for f in freqs {
            let k = base.ponderomotive_gain(*f)?;
            atan_k.push(k.atan());
            pole.push(base.cavity_pole_fraction(*f)?);
            output_loss.push((1.0 - base.output_efficiency) / (1.0 + k * k));
        }
        Ok(Self {
            phi: ds.phi_nominal_rad,
            obs: ds.s_obs.values[range.clone()].to_vec(),
            range,
            atan_k,
            pole,
            output_loss,
        })
    }

    /// `S*` at band bin `j`.
    fn model(&self, p: &[f64; 4], j: usize) -> f64 {
        let [r, psi, eta_i, dphi] = *p;
        let theta = self.atan_k[j] + psi * self.pole[j];
        let d = self.phi + dphi - theta;
        let (s, c) = d.sin_cos();
        let sq = (-2.0 * r).exp() * c * c + (2.0 * r).exp() * s * s;
        let eta = 1.0 - ((1.0 - eta_i) + self.output_loss[j]);
        eta * sq + 1.0 - eta
    }

    fn model_curve(&self, p: &[f64; 4]) -> Vec<f64> {
        (0..self.obs.len()).map(|j| self.model(p, j)).collect()
    }
}

/// `S*` predicted by `params` for one dataset's full grid, for plotting.
pub fn model_curve(problem: &FitProblem, params: &FitParams, dataset: usize) -> Result<Spectrum> {
    let ds = &problem.datasets[dataset];
    let full = (ds.s_obs.grid.first(), ds.s_obs.grid.last());
    let prep = Prepared::new(ds, &problem.base, full)?;
    Spectrum::new(
        ds.s_obs.grid.clone(),
        prep.model_curve(&params.to_array()),
        format!("{} model", ds.label),
    )
}

fn sigmas_for(ds: &FitDataset, prep: &Prepared, s_ref: &[f64]) -> Result<Vec<f64>> {
    let out: Vec<f64> = match &ds.noise {
        NoiseModel::Fixed { sigma } => {
            if sigma.len() != ds.s_obs.len() {
                return Err(Error::LengthMismatch {
                    left: sigma.len(),
                    right: ds.s_obs.len(),
                });
            }
            sigma[prep.range.clone()].to_vec()
        }
        NoiseModel::Predicted(n) => {
            if n.classical.len() != ds.s_obs.len() || n.reference_model.len() != ds.s_obs.len() {
                return Err(Error::LengthMismatch {
                    left: n.classical.len(),
                    right: ds.s_obs.len(),
                });
            }
            prep.range.clone().zip(s_ref).map(|(k, s)| n.sigma(k, *s)).collect()
        }
    };
    if let Some(s) = out.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::Domain(format!(
            "dataset {} has non-positive weight sigma {s}",
            ds.label
        )));
    }
    Ok(out)
}

struct Objective<'a> {
    prepared: &'a [Prepared],
    weights: Vec<Vec<f64>>,
}

impl Objective<'_> {
    fn value(&self, p: &[f64; 4]) -> f64 {
        self.prepared
            .iter()
            .zip(&self.weights)
            .map(|(prep, w)| {
                prep.obs
                    .iter()
                    .zip(w)
                    .enumerate()
                    .map(|(j, (o, w))| w * (o - prep.model(p, j)).powi(2))
                    .sum::<f64>()
            })
            .sum()
    }
}

fn distinct_angles(problem: &FitProblem) -> usize {
    let mut angles: Vec<f64> = problem.datasets.iter().map(|d| d.phi_nominal_rad).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    angles.len()
}

impl FitProblem {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.datasets.is_empty() {
            return Err(Error::Unidentifiable("no datasets to fit".into()));
        }
        if !self.bounds.contains(&self.init) {
            return Err(Error::Config("initial parameters lie outside the bounds".into()));
        }
        if self.weight_stages == 0 {
            return Err(Error::Config("weight_stages must be >= 1".into()));
        }
        let [r, _, eta, _] = self.bounds.to_array();
        if distinct_angles(self) < 2 && r.0 < r.1 && eta.0 < eta.1 {
            return Err(Error::Unidentifiable(
                "one squeeze angle cannot separate the squeeze factor from the input efficiency".into(),
            ));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.datasets
            .iter()
            .map(|d| d.s_obs.grid.band_indices(self.band_hz.0, self.band_hz.1).len())
            .sum()
    }
}

fn free_indices(bounds: &Bounds) -> Vec<usize> {
    bounds
        .to_array()
        .iter()
        .enumerate()
        .filter(|(_, (lo, hi))| hi > lo)
        .map(|(i, _)| i)
        .collect()
}

fn to_unit(p: &[f64; 4], b: &[(f64, f64); 4], free: &[usize]) -> Vec<f64> {
    free.iter().map(|i| (p[*i] - b[*i].0) / (b[*i].1 - b[*i].0)).collect()
}

fn from_unit(u: &[f64], base: &[f64; 4], b: &[(f64, f64); 4], free: &[usize]) -> [f64; 4] {
    let mut p = *base;
    for (x, i) in u.iter().zip(free) {
        p[*i] = b[*i].0 + x.clamp(0.0, 1.0) * (b[*i].1 - b[*i].0);
    }
    p
}

fn coarse_grid(obj: &Objective, start: &[f64; 4], b: &[(f64, f64); 4], points: [usize; 3]) -> ([f64; 4], f64) {
    // grid axes: squeeze factor, psi, angle offset
    let axes: Vec<(usize, Vec<f64>)> = [0usize, 1, 3]
        .iter()
        .zip(points)
        .map(|(i, n)| {
            let (lo, hi) = b[*i];
            let vals = if hi > lo && n > 1 {
                (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
            } else {
                vec![start[*i]]
            };
            (*i, vals)
        })
        .collect();
    let mut candidates = Vec::new();
    for a in &axes[0].1 {
        for p in &axes[1].1 {
            for d in &axes[2].1 {
                let mut x = *start;
                x[axes[0].0] = *a;
                x[axes[1].0] = *p;
                x[axes[2].0] = *d;
                candidates.push(x);
            }
        }
    }
    candidates.push(*start);
    candidates
        .into_par_iter()
        .map(|x| (x, obj.value(&x)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grid is non-empty")
}

fn hessian(obj: &Objective, p: &[f64; 4], b: &[(f64, f64); 4], free: &[usize]) -> Vec<Vec<f64>> {
    let n = free.len();
    let h: Vec<f64> = free.iter().map(|i| 1e-4 * (b[*i].1 - b[*i].0)).collect();
    let f0 = obj.value(p);
    let shifted = |d: &[(usize, f64)]| {
        let mut x = *p;
        for (i, s) in d {
            x[free[*i]] += s;
        }
        obj.value(&x)
    };
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        out[i][i] = (shifted(&[(i, h[i])]) - 2.0 * f0 + shifted(&[(i, -h[i])])) / (h[i] * h[i]);
        for j in 0..i {
            let v = (shifted(&[(i, h[i]), (j, h[j])])
                - shifted(&[(i, h[i]), (j, -h[j])])
                - shifted(&[(i, -h[i]), (j, h[j])])
                + shifted(&[(i, -h[i]), (j, -h[j])]))
                / (4.0 * h[i] * h[j]);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    out
}

/// Condition number of the Hessian after scaling each parameter to its box.
fn condition(hess: &[Vec<f64>], b: &[(f64, f64); 4], free: &[usize]) -> f64 {
    let scaled: Vec<Vec<f64>> = (0..free.len())
        .map(|i| {
            (0..free.len())
                .map(|j| hess[i][j] * (b[free[i]].1 - b[free[i]].0) * (b[free[j]].1 - b[free[j]].0))
                .collect()
        })
        .collect();
    let (vals, _) = symmetric_eigen(&scaled);
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Runs the full fit: weight stages, each a coarse grid plus simplex refinement.
pub fn fit(problem: &FitProblem, cfg: &FitConfig) -> Result<FitResult> {
    problem.validate()?;
    let b = problem.bounds.to_array();
    let free = free_indices(&problem.bounds);
    let prepared = problem
        .datasets
        .iter()
        .map(|d| Prepared::new(d, &problem.base, problem.band_hz))
        .collect::<Result<Vec<_>>>()?;
    let init = problem.init.to_array();
    let bins: usize = prepared.iter().map(|p| p.obs.len()).sum();
    if bins <= free.len() {
        return Err(Error::Unidentifiable(format!(
            "{bins} bins for {} free parameters",
            free.len()
        )));
    }
    let dof = bins - free.len();

    // first-pass weights from smoothed observations
    let mut s_ref: Vec<Vec<f64>> = problem
        .datasets
        .iter()
        .zip(&prepared)
        .map(|(d, p)| {
            let f = &d.s_obs.frequencies()[p.range.clone()];
            local_quadratic(f, &p.obs, cfg.smoothing_half_width)
        })
        .collect();
    let mut best = init;
    let mut initial_objective = f64::NAN;
    let mut grid_objective = f64::NAN;
    let mut objective = f64::NAN;
    let mut iterations = 0;
    let mut sigmas = Vec::new();
    let mut final_obj = None;
    for stage in 0..problem.weight_stages {
        sigmas = problem
            .datasets
            .iter()
            .zip(&prepared)
            .zip(&s_ref)
            .map(|((d, p), s)| sigmas_for(d, p, s))
            .collect::<Result<Vec<_>>>()?;
        let obj = Objective {
            prepared: &prepared,
            weights: sigmas
                .iter()
                .map(|s| s.iter().map(|v| 1.0 / (v * v)).collect())
                .collect(),
        };
        if stage == 0 {
            initial_objective = obj.value(&init);
        }
        let (grid_best, grid_val) = if stage == 0 {
            coarse_grid(&obj, &init, &b, cfg.grid_points)
        } else {
            (best, obj.value(&best))
        };
        grid_objective = grid_val;
        let mut point = grid_best;
        let mut value = grid_val;
        let mut converged = free.is_empty();
        if !free.is_empty() {
            for _ in 0..=cfg.restarts {
                let start = to_unit(&point, &b, &free);
                let mut f = |u: &[f64]| obj.value(&from_unit(u, &point, &b, &free));
                let m = simplex::minimize(&mut f, &start, &cfg.simplex);
                iterations += m.iterations;
                converged = m.converged;
                if m.value <= value {
                    point = from_unit(&m.x, &point, &b, &free);
                    let improved = value - m.value;
                    value = m.value;
                    if improved <= cfg.simplex.rel_tol * value.abs() {
                        break;
                    }
                }
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                iterations,
                best_objective: value,
            });
        }
        best = point;
        objective = value;
        s_ref = prepared.iter().map(|p| p.model_curve(&best)).collect();
        final_obj = Some(obj);
    }
    let obj = final_obj.expect("at least one stage");
    let chi2_per_dof = objective / dof as f64;
    let mut estimates: Vec<ParamEstimate> = best
        .iter()
        .map(|v| ParamEstimate {
            value: *v,
            sigma: 0.0,
            fixed: true,
        })
        .collect();
    let mut condition_number = 1.0;
    if !free.is_empty() {
        let hess = hessian(&obj, &best, &b, &free);
        condition_number = condition(&hess, &b, &free);
        if !(condition_number <= cfg.max_condition) {
            return Err(Error::Unidentifiable(format!(
                "objective is flat along some parameter combination (condition number {condition_number:.3e})"
            )));
        }
        let inv = inverse_spd(&hess).ok_or_else(|| {
            Error::Unidentifiable("objective curvature is not positive definite at the optimum".into())
        })?;
        let scale = 2.0 * chi2_per_dof.max(f64::MIN_POSITIVE);
        for (k, i) in free.iter().enumerate() {
            estimates[*i] = ParamEstimate {
                value: best[*i],
                sigma: (scale * inv[k][k]).sqrt(),
                fixed: false,
            };
        }
    }
    Ok(FitResult {
        params: FitParams::from_array(best),
        estimates,
        objective,
        initial_objective,
        grid_objective,
        chi2_per_dof,
        dof,
        iterations,
        condition_number,
        sigmas,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    /// `(S*_obs - S*_model) / σ` over the fit band, one per dataset.
    pub datasets: Vec<Spectrum>,
    pub chi2: f64,
    pub dof: usize,
    pub chi2_per_dof: f64,
}

pub fn predict_residuals(result: &FitResult, problem: &FitProblem) -> Result<ResidualReport> {
    let p = result.params.to_array();
    let free = free_indices(&problem.bounds).len();
    let mut datasets = Vec::with_capacity(problem.datasets.len());
    let mut chi2 = 0.0;
    let mut bins = 0;
    for (k, ds) in problem.datasets.iter().enumerate() {
        let prep = Prepared::new(ds, &problem.base, problem.band_hz)?;
        let sig = match result.sigmas.get(k) {
            Some(s) if s.len() == prep.obs.len() => s.clone(),
            _ => sigmas_for(ds, &prep, &prep.model_curve(&p))?,
        };
        let res: Vec<f64> = prep
            .obs
            .iter()
            .zip(&sig)
            .enumerate()
            .map(|(j, (o, s))| (o - prep.model(&p, j)) / s)
            .collect();
        chi2 += res.iter().map(|r| r * r).sum::<f64>();
        bins += res.len();
        let grid = crate::physics::FrequencyGrid::new(ds.s_obs.frequencies()[prep.range.clone()].to_vec())?;
        datasets
            .push(Spectrum::new(grid, res, format!("{} residual", ds.label))?.with_bin_width(ds.s_obs.bin_width_hz));
    }
    let dof = bins.saturating_sub(free).max(1);
    Ok(ResidualReport {
        datasets,
        chi2,
        dof,
        chi2_per_dof: chi2 / dof as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::lossy_squeezing_factor;
    use crate::physics::{FrequencyGrid, SqueezerParams};
    use crate::rng;

    fn truth() -> (InterferometerParams, SqueezerParams) {
        crate::physics::ParamFile::table1().to_params().unwrap()
    }

    fn grid() -> FrequencyGrid {
        FrequencyGrid::arange(15.0, 500.0, 0.5).unwrap()
    }

    fn synthetic(angles_deg: &[f64], sigma: f64, seed: u64, psi_override: Option<f64>) -> FitProblem {
        let (ifo, sqz) = truth();
        let ifo_true = psi_override.map(|p| ifo.with_psi(p)).unwrap_or(ifo);
        let g = grid();
        let mut r = rng::stream(seed, 0);
        let datasets = angles_deg
            .iter()
            .map(|a| {
                let s = sqz.with_angle(a.to_radians());
                let vals: Vec<f64> = g
                    .iter()
                    .map(|f| lossy_squeezing_factor(&ifo_true, &s, f).unwrap() + sigma * rng::gaussian(&mut r))
                    .collect();
                FitDataset {
                    label: format!("{a}"),
                    phi_nominal_rad: a.to_radians(),
                    s_obs: Spectrum::new(g.clone(), vals, "s").unwrap(),
                    noise: NoiseModel::Fixed {
                        sigma: vec![sigma.max(1e-3); g.len()],
                    },
                }
            })
            .collect();
        FitProblem {
            datasets,
            base: ifo,
            bounds: Bounds::default(),
            init: FitParams {
                squeeze_factor: 1.0,
                psi_rad: 0.0,
                input_efficiency: 0.9,
                angle_offset_rad: 0.0,
            },
            band_hz: (15.0, 500.0),
            weight_stages: 1,
        }
    }

    const ANGLES: [f64; 4] = [-35.0, 0.0, 35.0, 65.0];

    #[test]
    fn fast_model_matches_reference_model() {
        let (ifo, sqz) = truth();
        let ds = FitDataset {
            label: "x".into(),
            phi_nominal_rad: 0.3,
            s_obs: Spectrum::new(grid(), vec![1.0; grid().len()], "x").unwrap(),
            noise: NoiseModel::Fixed {
                sigma: vec![1.0; grid().len()],
            },
        };
        let prep = Prepared::new(&ds, &ifo, (15.0, 500.0)).unwrap();
        let p = FitParams::from_model(&ifo, sqz.squeeze_factor);
        for (j, f) in grid().iter().enumerate().step_by(37) {
            let direct = lossy_squeezing_factor(&ifo, &sqz.with_angle(0.3), f).unwrap();
            assert!((prep.model(&p.to_array(), j) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_recovery_is_exact() {
        let (ifo, sqz) = truth();
        let problem = synthetic(&ANGLES, 0.0, 1, None);
        let res = fit(&problem, &FitConfig::default()).unwrap();
        assert!(res.objective < 1e-12, "{}", res.objective);
        let t = FitParams::from_model(&ifo, sqz.squeeze_factor);
        assert!((res.params.squeeze_factor - t.squeeze_factor).abs() < 1e-5);
        assert!((res.params.psi_rad - t.psi_rad).abs() < 1e-5);
        assert!((res.params.input_efficiency - t.input_efficiency).abs() < 1e-5);
        assert!(res.params.angle_offset_rad.abs() < 1e-5);
        assert!(res.objective <= res.grid_objective && res.grid_objective <= res.initial_objective);
        let resid = predict_residuals(&res, &problem).unwrap();
        assert!(resid
            .datasets
            .iter()
            .flat_map(|d| d.values.iter())
            .all(|r| r.abs() < 1e-4));
    }

    #[test]
    fn noisy_recovery_and_chi2() {
        let (ifo, sqz) = truth();
        let problem = synthetic(&ANGLES, 0.02, 2, None);
        let res = fit(&problem, &FitConfig::default()).unwrap();
        let t = FitParams::from_model(&ifo, sqz.squeeze_factor);
        for (i, name) in PARAM_NAMES.iter().enumerate() {
            let e = res.estimates[i];
            assert!(!e.fixed && e.sigma > 0.0);
            assert!(
                (e.value - t.to_array()[i]).abs() < 5.0 * e.sigma,
                "{name}: {} vs {} ± {}",
                e.value,
                t.to_array()[i],
                e.sigma
            );
        }
        assert!((res.chi2_per_dof - 1.0).abs() < 0.05, "{}", res.chi2_per_dof);
        assert!(Bounds::default().contains(&res.params));
    }

    #[test]
    fn weight_scaling_keeps_argmin() {
        let mut problem = synthetic(&ANGLES, 0.02, 3, None);
        let a = fit(&problem, &FitConfig::default()).unwrap();
        for d in problem.datasets.iter_mut() {
            if let NoiseModel::Fixed { sigma } = &mut d.noise {
                sigma.iter_mut().for_each(|s| *s *= 7.0);
            }
        }
        let b = fit(&problem, &FitConfig::default()).unwrap();
        for (x, y) in a.params.to_array().iter().zip(b.params.to_array()) {
            assert!((x - y).abs() < 1e-6, "{x} {y}");
        }
        assert!((a.objective / b.objective - 49.0).abs() < 1e-3);
    }

    #[test]
    fn single_angle_is_unidentifiable() {
        let problem = synthetic(&[0.0, 0.0], 0.01, 4, None);
        assert!(matches!(
            fit(&problem, &FitConfig::default()),
            Err(Error::Unidentifiable(_))
        ));
        let mut fixed = synthetic(&[0.0], 0.01, 4, None);
        fixed.bounds = fixed.bounds.fix(2, 0.9).fix(1, 0.0);
        fixed.init.psi_rad = 0.0;
        assert!(fit(&fixed, &FitConfig::default()).is_ok());
    }

    #[test]
    fn bounds_are_respected_and_validated() {
        let mut problem = synthetic(&ANGLES, 0.0, 5, None);
        problem.bounds.squeeze_factor = (0.0, 0.8);
        problem.init.squeeze_factor = 0.5;
        let res = fit(&problem, &FitConfig::default()).unwrap();
        assert!(res.params.squeeze_factor <= 0.8 && res.params.squeeze_factor > 0.79);
        let mut bad = synthetic(&ANGLES, 0.0, 5, None);
        bad.bounds.psi_rad = (-1.0, 1.0);
        assert!(matches!(fit(&bad, &FitConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn psi_forced_to_zero_leaves_structured_residual() {
        let problem = synthetic(&ANGLES, 0.0, 6, Some(0.3));
        let mut wrong = problem.clone();
        // the angle offset is held too, otherwise it trades against ψ
        wrong.bounds = wrong.bounds.fix(1, 0.0).fix(3, 0.0);
        wrong.init.psi_rad = 0.0;
        let res = fit(&wrong, &FitConfig::default()).unwrap();
        let resid = predict_residuals(&res, &wrong).unwrap();
        let band_rms = |lo: f64, hi: f64| {
            let (mut acc, mut n) = (0.0, 0);
            for d in &resid.datasets {
                for (f, r) in d.frequencies().iter().zip(&d.values) {
                    if (lo..hi).contains(f) {
                        acc += r * r;
                        n += 1;
                    }
                }
            }
            (acc / n as f64).sqrt()
        };
        let low = band_rms(15.0, 60.0);
        let high = band_rms(300.0, 500.0);
        assert!(high > 3.0 * low, "{low} {high}");
        let right = fit(&problem, &FitConfig::default()).unwrap();
        assert!((right.params.psi_rad - 0.3).abs() < 1e-4);
    }
}
