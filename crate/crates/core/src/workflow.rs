//! The full desk-scale analysis: per-segment spectra, pooled reference and
//! squeezed estimates, subtraction with its error budget, stationarity,
//! observed squeezing per angle and the parameter fit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{
    self, Bounds, FitConfig, FitDataset, FitParams, FitProblem, FitResult, NoiseModel, PredictedNoise,
};
use crate::model::{dip_frequency, lossy_displacement_psd, sql_psd, sql_ratio_minimum, DEFAULT_DIP_SPAN_HZ};
use crate::physics::{FrequencyGrid, InterferometerParams};
use crate::pipeline::{
    infer_quantum, observed_squeezing, stationarity_combined, uncertainty_budget, BudgetComponents, Relative,
    StationarityConfig, StationarityReport, SubtractionResult, UncertaintyBudget,
};
use crate::rng;
use crate::spectral::{
    estimate_psd, estimate_psd_pooled, measure_efficiency, statistical_uncertainty, EfficiencyRun, EstimatorConfig,
    TimeSeries,
};
use crate::spectrum::{SpectralDensity, Spectrum};
use crate::synth::{run_experiment, ExperimentSetup, Mode, PlanEntry, RecordedSegment, SegmentPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub estimator: EstimatorConfig,
    /// Statistical efficiency `E`; measured on white noise when absent.
    pub efficiency: Option<f64>,
    pub efficiency_trials: usize,
    /// Band for the subtraction closure and the data-driven `δN_t`.
    pub closure_band_hz: (f64, f64),
    pub fit_band_hz: (f64, f64),
    /// Angle of the alternating squeezed segments, degrees.
    pub main_angle_deg: f64,
    /// Calibration, loop and model terms of the budget (default 0).
    pub d_g: f64,
    pub d_c: f64,
    pub d_mr: f64,
    pub d_nm: f64,
    /// Smoothing half-width (bins) for the reference used in fit weights.
    pub smoothing_half_width: usize,
    pub fit_weight_stages: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorConfig::default(),
            efficiency: None,
            efficiency_trials: 200,
            closure_band_hz: (20.0, 100.0),
            fit_band_hz: (15.0, 500.0),
            main_angle_deg: 35.0,
            d_g: 0.0,
            d_c: 0.0,
            d_mr: 0.0,
            d_nm: 0.0,
            smoothing_half_width: 10,
            fit_weight_stages: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentSpectrum {
    pub index: usize,
    pub entry: PlanEntry,
    pub spectrum: Spectrum,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservedSqueezing {
    pub index: usize,
    pub angle_deg: f64,
    pub duration_seconds: f64,
    pub s_obs: Spectrum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosureSummary {
    pub band_hz: (f64, f64),
    pub bins: usize,
    /// Fraction of bins with `|Q - M_s|` inside the 2σ budget band.
    pub coverage: f64,
    pub dip_hz: f64,
    /// Statistical `δQ` at the dip from the model spectra.
    pub dq_statistical_at_dip: f64,
    pub v_at_dip: f64,
    /// Spread of `(Q - M_s)/σ_stat` within ±10 Hz of the dip; 1 when the
    /// predicted per-bin error matches the realized scatter.
    pub scatter_ratio_near_dip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Analysis {
    pub efficiency: f64,
    pub segments: Vec<SegmentSpectrum>,
    pub d_r: Spectrum,
    pub d_s: Spectrum,
    pub m_r: Spectrum,
    pub m_s: Spectrum,
    pub sql: Spectrum,
    pub subtraction: SubtractionResult,
    pub budget: UncertaintyBudget,
    pub stationarity: Option<StationarityReport>,
    pub delta_r: f64,
    pub delta_s: f64,
    pub delta_nt: f64,
    pub closure: ClosureSummary,
    pub observed: Vec<ObservedSqueezing>,
    pub classical_smoothed: Spectrum,
}

fn is_main(entry: &PlanEntry, angle: f64) -> bool {
    matches!(entry.mode, Mode::Squeezed { angle_deg } if (angle_deg - angle).abs() < 1e-9)
}

/// Statistical efficiency of `cfg` for records of `seconds`, measured on
/// white noise with a seed derived from `seed`.
pub fn efficiency_for(cfg: &EstimatorConfig, seconds: f64, trials: usize, seed: u64) -> Result<f64> {
    let run = EfficiencyRun {
        trials,
        duration_seconds: seconds,
        sample_rate_hz: 256.0,
        sigma: 1.0,
        seed: rng::child_seed(seed, 0xE44),
    };
    Ok(measure_efficiency(cfg, &run)?.efficiency)
}

pub fn analyze(
    recorded: &[RecordedSegment],
    setup: &ExperimentSetup,
    cfg: &AnalysisConfig,
    seed: u64,
) -> Result<Analysis> {
    let refs: Vec<&RecordedSegment> = recorded.iter().filter(|s| s.entry.mode.is_reference()).collect();
    let mains: Vec<&RecordedSegment> = recorded
        .iter()
        .filter(|s| is_main(&s.entry, cfg.main_angle_deg))
        .collect();
    if refs.is_empty() || mains.is_empty() {
        return Err(Error::Config(format!(
            "analysis needs reference segments and squeezed segments at {}°",
            cfg.main_angle_deg
        )));
    }
    let segment_seconds = mains[0].entry.duration_seconds;
    let efficiency = match cfg.efficiency {
        Some(e) => e,
        None => efficiency_for(&cfg.estimator, segment_seconds, cfg.efficiency_trials, seed)?,
    };
    let segments = recorded
        .par_iter()
        .map(|s| {
            let mut spectrum = estimate_psd(&s.series, &cfg.estimator)?.spectrum;
            spectrum.label = s.series.label.clone();
            Ok(SegmentSpectrum {
                index: s.index,
                entry: s.entry,
                spectrum,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pool = |set: &[&RecordedSegment], label: &str| -> Result<(Spectrum, f64)> {
        let series: Vec<TimeSeries> = set.iter().map(|s| s.series.clone()).collect();
        let est = estimate_psd_pooled(&series, &cfg.estimator)?;
        let mut spectrum = est.spectrum;
        spectrum.label = label.to_string();
        Ok((spectrum, est.total_seconds))
    };
    let (d_r, t_ref) = pool(&refs, "D_r")?;
    let (d_s, t_sqz) = pool(&mains, "D_s")?;
    let grid = d_r.grid.clone();
    let df = d_r.bin_width_hz;
    let m_r = setup.quantum_model(&Mode::Reference, &grid)?.with_bin_width(df);
    let main_mode = Mode::Squeezed {
        angle_deg: cfg.main_angle_deg,
    };
    let m_s = setup.quantum_model(&main_mode, &grid)?.with_bin_width(df);
    let sql = Spectrum::from_fn(&grid, "sql", |f| sql_psd(&setup.params, f))?.with_bin_width(df);
    let subtraction = infer_quantum(&d_s, &d_r, &m_r)?;

    let delta_r = statistical_uncertainty(t_ref, df, efficiency)?;
    let delta_s = statistical_uncertainty(t_sqz, df, efficiency)?;
    let stationarity = if refs.len() >= 3 && mains.len() >= 3 {
        let spec_of = |s: &RecordedSegment| segments[s.index].spectrum.clone();
        let r3 = [spec_of(refs[0]), spec_of(refs[1]), spec_of(refs[2])];
        let s3 = [spec_of(mains[0]), spec_of(mains[1]), spec_of(mains[2])];
        let sc = StationarityConfig {
            efficiency,
            reference_seconds: refs[0].entry.duration_seconds,
            squeezed_seconds: mains[0].entry.duration_seconds,
        };
        Some(stationarity_combined(&r3, &s3, &sc)?)
    } else {
        None
    };
    let (lo, hi) = cfg.closure_band_hz;
    let delta_nt = match &stationarity {
        Some(rep) => rep.delta_nt_band(lo, hi)?,
        // no sextet: fall back to the statistical floor
        None => 2f64.sqrt() * delta_r,
    };
    let components = BudgetComponents {
        d_g: Relative::Scalar(cfg.d_g),
        d_c: Relative::Scalar(cfg.d_c),
        d_mr: Relative::Scalar(cfg.d_mr),
        d_dr: Relative::Scalar(delta_r),
        d_ds: Relative::Scalar(delta_s),
        d_nt: Relative::Scalar(delta_nt),
        d_nm: Relative::Scalar(cfg.d_nm),
    };
    let budget = uncertainty_budget(&d_r, &d_s, &m_r, &subtraction.q, &components)?;

    let idx = grid.band_indices(lo, hi);
    if idx.is_empty() {
        return Err(Error::Config(format!("closure band {lo}-{hi} Hz has no bins")));
    }
    let inside = idx
        .clone()
        .filter(|k| (subtraction.q.values[*k] - m_s.values[*k]).abs() <= 2.0 * budget.absolute(*k))
        .count();
    let main_sqz = main_mode.squeezer(&setup.squeezer);
    let dip_hz = dip_frequency(&setup.params, &main_sqz, DEFAULT_DIP_SPAN_HZ)?;
    let classical_model = |f: f64| setup.classical.density(f.max(setup.hold_below_hz));
    let stat_sigma = |f: f64| -> Result<f64> {
        let mr = lossy_displacement_psd(&setup.params, &Mode::Reference.squeezer(&setup.squeezer), f)?;
        let ms = lossy_displacement_psd(&setup.params, &main_sqz, f)?;
        let c = classical_model(f);
        Ok((((c + mr) * delta_r).powi(2) + ((c + ms) * delta_s).powi(2)).sqrt())
    };
    let m_s_dip = lossy_displacement_psd(&setup.params, &main_sqz, dip_hz)?;
    let dq_statistical_at_dip = stat_sigma(dip_hz)? / m_s_dip;
    let v_at_dip = classical_model(dip_hz) / m_s_dip;
    let near = grid.band_indices(dip_hz - 10.0, dip_hz + 10.0);
    let z: Vec<f64> = near
        .clone()
        .map(|k| Ok((subtraction.q.values[k] - m_s.values[k]) / stat_sigma(grid.as_slice()[k])?))
        .collect::<Result<_>>()?;
    let zm = z.iter().sum::<f64>() / z.len() as f64;
    let scatter = (z.iter().map(|v| (v - zm).powi(2)).sum::<f64>() / (z.len() - 1) as f64).sqrt();
    let closure = ClosureSummary {
        band_hz: cfg.closure_band_hz,
        bins: idx.len(),
        coverage: inside as f64 / idx.len() as f64,
        dip_hz,
        dq_statistical_at_dip,
        v_at_dip,
        scatter_ratio_near_dip: scatter,
    };

    let observed = segments
        .iter()
        .filter(|s| !s.entry.mode.is_reference())
        .map(|s| {
            let angle_deg = match s.entry.mode {
                Mode::Squeezed { angle_deg } => angle_deg,
                Mode::Reference => unreachable!("filtered"),
            };
            let q = infer_quantum(&s.spectrum, &d_r, &m_r)?;
            let mut s_obs = observed_squeezing(&q.q, &m_r)?;
            s_obs.label = s.spectrum.label.clone();
            Ok(ObservedSqueezing {
                index: s.index,
                angle_deg,
                duration_seconds: s.entry.duration_seconds,
                s_obs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let smoothed = d_r.smoothed(cfg.smoothing_half_width)?;
    let classical_smoothed = smoothed.zip_with(&m_r, "classical_smoothed", |d, m| d - m)?;

    Ok(Analysis {
        efficiency,
        segments,
        d_r,
        d_s,
        m_r,
        m_s,
        sql,
        subtraction,
        budget,
        stationarity,
        delta_r,
        delta_s,
        delta_nt,
        closure,
        observed,
        classical_smoothed,
    })
}

impl Analysis {
    /// One fit dataset per squeezed segment, weighted by the statistical
    /// noise predicted from the smoothed reference.
    pub fn fit_problem(
        &self,
        base: &InterferometerParams,
        init: FitParams,
        cfg: &AnalysisConfig,
    ) -> Result<FitProblem> {
        let datasets = self
            .observed
            .iter()
            .map(|o| {
                let delta = statistical_uncertainty(o.duration_seconds, o.s_obs.bin_width_hz, self.efficiency)?;
                Ok(FitDataset {
                    label: o.s_obs.label.clone(),
                    phi_nominal_rad: o.angle_deg.to_radians(),
                    s_obs: o.s_obs.clone(),
                    noise: NoiseModel::Predicted(PredictedNoise {
                        classical: self.classical_smoothed.values.clone(),
                        reference_model: self.m_r.values.clone(),
                        delta_squeezed: delta,
                        delta_reference: self.delta_r,
                        delta_nt: 0.0,
                    }),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FitProblem {
            datasets,
            base: *base,
            bounds: Bounds::default(),
            init,
            band_hz: cfg.fit_band_hz,
            weight_stages: cfg.fit_weight_stages,
        })
    }
}

/// Squeezer and interferometer implied by a fit, for model predictions.
pub fn fitted_model(
    base: &InterferometerParams,
    p: &FitParams,
    angle_deg: f64,
) -> Result<(InterferometerParams, crate::physics::SqueezerParams)> {
    let mut ifo = base.with_psi(p.psi_rad);
    ifo.input_efficiency = p.input_efficiency;
    ifo.validate()?;
    let sqz = crate::physics::SqueezerParams::new(p.squeeze_factor, angle_deg.to_radians() + p.angle_offset_rad)?;
    Ok((ifo, sqz))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            lo,
            hi,
            pass: value >= lo && value <= hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoSummary {
    pub seed: u64,
    pub model_dip_hz: f64,
    pub model_min_ratio_hz: f64,
    pub model_min_ratio: f64,
    pub fitted_min_ratio_hz: f64,
    pub fitted_min_ratio: f64,
    /// `sqrt(Q/SQL)` of the smoothed inferred spectrum near the dip;
    /// informational, it carries the full per-bin scatter of a desk run.
    pub measured_min_ratio: f64,
    pub closure: ClosureSummary,
    pub efficiency: f64,
    pub delta_nt: f64,
    pub fit: FitResult,
    pub truth: FitParams,
    pub checks: Vec<Check>,
}

impl DemoSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoRun {
    pub plan: SegmentPlan,
    pub setup: ExperimentSetup,
    pub recorded: Vec<RecordedSegment>,
    pub analysis: Analysis,
    pub problem: FitProblem,
    pub summary: DemoSummary,
}

/// Synthesizes the desk plan, analyzes it end to end and evaluates the
/// acceptance thresholds.
pub fn run_demo(
    plan: &SegmentPlan,
    setup: &ExperimentSetup,
    cfg: &AnalysisConfig,
    fit_cfg: &FitConfig,
    seed: u64,
) -> Result<DemoRun> {
    let recorded = run_experiment(plan, setup, seed)?;
    let analysis = analyze(&recorded, setup, cfg, seed)?;
    let truth = FitParams::from_model(&setup.params, setup.squeezer.squeeze_factor);
    let init = FitParams {
        squeeze_factor: 1.0,
        psi_rad: 0.0,
        input_efficiency: 0.9,
        angle_offset_rad: 0.0,
    };
    let problem = analysis.fit_problem(&setup.params, init, cfg)?;
    let fit = fitting::fit(&problem, fit_cfg)?;
    let main_sqz = setup.squeezer.with_angle(cfg.main_angle_deg.to_radians());
    let model_dip_hz = dip_frequency(&setup.params, &main_sqz, DEFAULT_DIP_SPAN_HZ)?;
    let (model_min_ratio_hz, model_min_ratio) = sql_ratio_minimum(&setup.params, &main_sqz, 10.0, 200.0)?;
    let (fi, fs) = fitted_model(&setup.params, &fit.params, cfg.main_angle_deg)?;
    let (fitted_min_ratio_hz, fitted_min_ratio) = sql_ratio_minimum(&fi, &fs, 10.0, 200.0)?;
    let q_smooth = analysis.subtraction.q.smoothed(cfg.smoothing_half_width)?;
    let measured_min_ratio = q_smooth
        .frequencies()
        .iter()
        .zip(&q_smooth.values)
        .filter(|(f, _)| (25.0..=60.0).contains(*f))
        .map(|(f, q)| (q.max(0.0) / sql_psd(&setup.params, *f).unwrap_or(f64::INFINITY)).sqrt())
        .fold(f64::INFINITY, f64::min);
    let deg = 1f64.to_radians();
    let checks = vec![
        Check::new("model_dip_frequency_hz", model_dip_hz, 35.0, 45.0),
        Check::new("fitted_min_amplitude_ratio", fitted_min_ratio, 0.60, 0.75),
        Check::new("subtraction_closure_coverage", analysis.closure.coverage, 0.95, 1.0),
        Check::new(
            "fit_squeeze_factor_error",
            fit.params.squeeze_factor - truth.squeeze_factor,
            -0.05,
            0.05,
        ),
        Check::new(
            "fit_angle_offset_error_deg",
            (fit.params.angle_offset_rad - truth.angle_offset_rad) / deg,
            -1.0,
            1.0,
        ),
        Check::new(
            "fit_psi_error_deg",
            (fit.params.psi_rad - truth.psi_rad) / deg,
            -1.0,
            1.0,
        ),
        Check::new(
            "fit_input_efficiency_error",
            fit.params.input_efficiency - truth.input_efficiency,
            -0.02,
            0.02,
        ),
        Check::new("fit_chi2_per_dof", fit.chi2_per_dof, 0.8, 1.2),
    ];
    let summary = DemoSummary {
        seed,
        model_dip_hz,
        model_min_ratio_hz,
        model_min_ratio,
        fitted_min_ratio_hz,
        fitted_min_ratio,
        measured_min_ratio,
        closure: analysis.closure,
        efficiency: analysis.efficiency,
        delta_nt: analysis.delta_nt,
        fit,
        truth,
        checks,
    };
    Ok(DemoRun {
        plan: plan.clone(),
        setup: setup.clone(),
        recorded,
        analysis,
        problem,
        summary,
    })
}

/// Observed-squeezing contour: one row per squeezed angle (sorted), on the
/// bins of `band`.
pub fn observed_contour(analysis: &Analysis, band: (f64, f64)) -> Result<(Vec<f64>, FrequencyGrid, Vec<Vec<f64>>)> {
    let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut grid = None;
    for o in &analysis.observed {
        let b = o.s_obs.band(band.0, band.1)?;
        grid.get_or_insert_with(|| b.grid.clone());
        rows.push((o.angle_deg, b.values));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let grid = grid.ok_or_else(|| Error::Domain("no squeezed segments".into()))?;
    Ok((
        rows.iter().map(|r| r.0).collect(),
        grid,
        rows.into_iter().map(|r| r.1).collect(),
    ))
}
