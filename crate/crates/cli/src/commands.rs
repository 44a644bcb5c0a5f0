use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use subsql_core::fitting::{self, Bounds, FitConfig, FitDataset, FitParams, FitProblem, NoiseModel, PredictedNoise};
use subsql_core::io::{
    read_series, read_spectrum_csv, write_budget_csv, write_json, write_series_bin, write_spectrum_csv,
    write_stationarity_csv, write_table, RunManifest,
};
use subsql_core::model::{
    dip_frequency, ideal_displacement_psd, lossy_displacement_psd, lossy_squeezing_factor, qrpn_psd, shot_psd, sql_psd,
    sql_ratio_minimum, squeezing_contour, DEFAULT_DIP_SPAN_HZ,
};
use subsql_core::pipeline::{
    calibrate_gain, infer_quantum, stationarity_combined, uncertainty_budget, BudgetComponents, CalibrationConfig,
    StationarityConfig,
};
use subsql_core::spectral::{estimate_psd_pooled, statistical_uncertainty, EstimatorConfig, Statistic};
use subsql_core::synth::{
    run_experiment, simulate_dual_readout, DualReadoutConfig, ExperimentSetup, PlanEntry, SegmentPlan,
};
use subsql_core::workflow::{efficiency_for, observed_contour, run_demo, AnalysisConfig};
use subsql_core::{FrequencyGrid, InterferometerParams, ParamFile, Spectrum, SqueezerParams};

use crate::args::*;

const PSD_UNITS: &str = "m^2/Hz";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(subsql_core::Error),
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Check(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(e) => write!(f, "{e}"),
            CliError::Check(m) => write!(f, "acceptance check failed: {m}"),
        }
    }
}

impl From<subsql_core::Error> for CliError {
    fn from(e: subsql_core::Error) -> Self {
        CliError::Data(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn require_file(path: &Path) -> Result<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Usage(format!("file not found: {}", path.display())))
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(require_file(path)?)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(subsql_core::Error::Parse(format!("{}: {e}", path.display()))))
}

fn load_params(common: &Common) -> Result<(InterferometerParams, SqueezerParams)> {
    let file = match &common.config {
        Some(p) => ParamFile::load(require_file(p)?)?,
        None => ParamFile::table1(),
    };
    Ok(file.to_params()?)
}

fn load_plan(path: &Option<PathBuf>) -> Result<SegmentPlan> {
    match path {
        Some(p) => {
            let plan: SegmentPlan = read_json(p)?;
            plan.validate()?;
            Ok(plan)
        }
        None => Ok(SegmentPlan::desk_default()),
    }
}

fn band(common: &Common, lo: f64, hi: f64) -> (f64, f64) {
    (common.fmin.unwrap_or(lo), common.fmax.unwrap_or(hi))
}

/// Collects the outputs of one command and writes its manifest.
struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn start(command: &str, common: &Common) -> Result<Self> {
        std::fs::create_dir_all(&common.out)?;
        let mut manifest = RunManifest::new(command);
        manifest.config = common.config.clone();
        manifest.seed = Some(common.seed);
        Ok(Self {
            dir: common.out.clone(),
            manifest,
        })
    }

    fn input(&mut self, p: &Path) {
        self.manifest.inputs.push(p.to_path_buf());
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(PathBuf::from(name));
        self.dir.join(name)
    }

    fn finish(mut self) -> Result<()> {
        let p = self.dir.join("manifest.json");
        self.manifest.outputs.sort();
        write_json(&p, &self.manifest)?;
        Ok(())
    }
}

pub fn model(a: &ModelArgs) -> Result<()> {
    let (ifo, sqz) = load_params(&a.common)?;
    let (lo, hi) = band(&a.common, 10.0, 1000.0);
    let grid = FrequencyGrid::arange(lo, hi, a.df)?;
    let mut run = Run::start("model", &a.common)?;
    let rows = grid
        .iter()
        .map(|f| {
            Ok(vec![
                f,
                sql_psd(&ifo, f)?.sqrt(),
                ideal_displacement_psd(&ifo, &sqz, f)?.sqrt(),
                lossy_displacement_psd(&ifo, &sqz, f)?.sqrt(),
                shot_psd(&ifo, f)?.sqrt(),
                qrpn_psd(&ifo, f)?.sqrt(),
                lossy_squeezing_factor(&ifo, &sqz, f)?,
            ])
        })
        .collect::<subsql_core::Result<Vec<_>>>()?;
    write_table(
        &run.path("model.csv"),
        "f_hz=Hz *_amp=m/sqrt(Hz) S_star=dimensionless",
        &[
            "f_hz",
            "sql_amp",
            "ideal_amp",
            "lossy_amp",
            "shot_amp",
            "qrpn_amp",
            "S_star",
        ],
        &rows,
    )?;
    #[derive(Serialize)]
    struct Summary {
        dip_frequency_hz: Option<f64>,
        min_amplitude_ratio: f64,
        min_amplitude_ratio_hz: f64,
    }
    let (min_f, min_ratio) = sql_ratio_minimum(&ifo, &sqz, lo, hi)?;
    let summary = Summary {
        dip_frequency_hz: dip_frequency(&ifo, &sqz, DEFAULT_DIP_SPAN_HZ).ok(),
        min_amplitude_ratio: min_ratio,
        min_amplitude_ratio_hz: min_f,
    };
    write_json(&run.path("model_summary.json"), &summary)?;
    println!("min amplitude ratio to SQL {min_ratio:.4} at {min_f:.2} Hz");
    run.finish()
}

pub fn contour(a: &ContourArgs) -> Result<()> {
    let (ifo, sqz) = load_params(&a.common)?;
    let (lo, hi) = band(&a.common, 10.0, 1000.0);
    let grid = FrequencyGrid::arange(lo, hi, a.df)?;
    if a.phi_step.is_nan() || a.phi_step <= 0.0 || a.phi_max < a.phi_min {
        return Err(CliError::Usage(
            "angle range must be increasing with a positive step".into(),
        ));
    }
    let n = ((a.phi_max - a.phi_min) / a.phi_step + 1e-9).floor() as usize + 1;
    let phis: Vec<f64> = (0..n)
        .map(|i| (a.phi_min + i as f64 * a.phi_step).to_radians())
        .collect();
    let c = squeezing_contour(&ifo, &sqz, &phis, &grid)?;
    let mut run = Run::start("contour", &a.common)?;
    let mut rows = Vec::with_capacity(n * grid.len());
    for (phi, row) in c.phis_rad.iter().zip(&c.rows) {
        for (f, s) in grid.iter().zip(row) {
            rows.push(vec![phi.to_degrees(), f, *s]);
        }
    }
    write_table(
        &run.path("contour.csv"),
        "phi_deg=deg f_hz=Hz S_star=dimensionless",
        &["phi_deg", "f_hz", "S_star"],
        &rows,
    )?;
    run.finish()
}

#[derive(Serialize)]
struct SegmentRecord {
    index: usize,
    #[serde(flatten)]
    entry: PlanEntry,
    seed: u64,
    sample_rate_hz: f64,
    file: String,
}

#[derive(Serialize)]
struct SynthManifest {
    seed: u64,
    v_ratio: f64,
    segments: Vec<SegmentRecord>,
}

fn setup_from(common: &Common, v_ratio: f64, sample_rate: Option<f64>) -> Result<ExperimentSetup> {
    let (ifo, sqz) = load_params(common)?;
    let mut setup = ExperimentSetup::with_params(ifo, sqz, v_ratio)?;
    if let Some(fs) = sample_rate {
        setup.sample_rate_hz = fs;
    }
    Ok(setup)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let setup = setup_from(&a.common, a.v_ratio, a.sample_rate)?;
    let mut run = Run::start("synth", &a.common)?;
    if a.dual_readout {
        let cfg = DualReadoutConfig {
            gain_g: a.gain,
            dark_noise_fraction: a.dark_fraction,
            ..DualReadoutConfig::default()
        };
        let (pa, pb) = simulate_dual_readout(
            &setup.params,
            None,
            &setup.classical,
            &cfg,
            setup.hold_below_hz,
            a.duration,
            setup.sample_rate_hz,
            a.common.seed,
        )?;
        write_series_bin(&run.path("pd_a.f64"), &pa)?;
        run.path("pd_a.f64.json");
        write_series_bin(&run.path("pd_b.f64"), &pb)?;
        run.path("pd_b.f64.json");
        let est = EstimatorConfig::default();
        let df = est.bin_width_hz();
        let grid = FrequencyGrid::arange(df, setup.sample_rate_hz / 2.0, df)?;
        let dark = cfg.combined_dark_psd(&setup.params, &grid)?;
        write_spectrum_csv(&run.path("dark.csv"), &dark, "counts^2/Hz")?;
        return run.finish();
    }
    let plan = load_plan(&a.plan)?;
    if let Some(p) = &a.plan {
        run.input(p);
    }
    let recorded = run_experiment(&plan, &setup, a.common.seed)?;
    let mut segments = Vec::with_capacity(recorded.len());
    for seg in &recorded {
        let file = format!("{}.f64", seg.series.label);
        write_series_bin(&run.path(&file), &seg.series)?;
        run.path(&format!("{file}.json"));
        segments.push(SegmentRecord {
            index: seg.index,
            entry: seg.entry,
            seed: seg.seed,
            sample_rate_hz: seg.series.sample_rate_hz,
            file,
        });
    }
    let m = SynthManifest {
        seed: a.common.seed,
        v_ratio: a.v_ratio,
        segments,
    };
    write_json(&run.path("synth_manifest.json"), &m)?;
    run.finish()
}

pub fn estimate_psd(a: &EstimateArgs) -> Result<()> {
    let mut run = Run::start("estimate-psd", &a.common)?;
    let mut series = Vec::with_capacity(a.inputs.len());
    for p in &a.inputs {
        series.push(read_series(require_file(p)?)?);
        run.input(p);
    }
    let cfg = EstimatorConfig {
        segment_seconds: a.segment_seconds,
        overlap_fraction: a.overlap,
        statistic: match a.statistic {
            StatArg::Median => Statistic::Median,
            StatArg::Mean => Statistic::Mean,
        },
    };
    let mut s = estimate_psd_pooled(&series, &cfg)?.spectrum;
    if a.common.fmin.is_some() || a.common.fmax.is_some() {
        let (lo, hi) = band(&a.common, 0.0, f64::INFINITY);
        s = s.band(lo, hi)?;
    }
    write_spectrum_csv(&run.path(&format!("{}.csv", a.name)), &s, &a.units)?;
    run.finish()
}

pub fn subtract(a: &SubtractArgs) -> Result<()> {
    let mut run = Run::start("subtract", &a.common)?;
    let d_r = read_spectrum_csv(require_file(&a.d_r)?)?;
    let d_s = read_spectrum_csv(require_file(&a.d_s)?)?;
    run.input(&a.d_r);
    run.input(&a.d_s);
    let m_r = match &a.m_r {
        Some(p) => {
            run.input(p);
            read_spectrum_csv(require_file(p)?)?
        }
        None => {
            let (ifo, _) = load_params(&a.common)?;
            let vac = SqueezerParams::vacuum();
            Spectrum::from_fn(&d_r.grid, "M_r", |f| lossy_displacement_psd(&ifo, &vac, f))?
        }
    };
    let comps: BudgetComponents = match &a.components {
        Some(p) => {
            run.input(p);
            read_json(p)?
        }
        None => BudgetComponents::default(),
    };
    let sub = infer_quantum(&d_s, &d_r, &m_r)?;
    let budget = uncertainty_budget(&d_r, &d_s, &m_r, &sub.q, &comps)?;
    write_spectrum_csv(&run.path("q.csv"), &sub.q, PSD_UNITS)?;
    write_spectrum_csv(&run.path("classical.csv"), &sub.classical, PSD_UNITS)?;
    write_budget_csv(&run.path("budget.csv"), &budget)?;
    if !sub.negative_bins.is_empty() {
        eprintln!(
            "warning: {} bins with negative inferred quantum noise",
            sub.negative_bins.len()
        );
    }
    run.finish()
}

#[derive(Serialize)]
struct StationaritySummary {
    efficiency: f64,
    band_hz: (f64, f64),
    floor: f64,
    combined_coverage: f64,
    combined_excess_z: f64,
    delta_nt: f64,
    pairs: Vec<PairSummary>,
    non_stationary: bool,
}

#[derive(Serialize)]
struct PairSummary {
    name: String,
    coverage: f64,
    excess_z: f64,
}

pub fn stationarity(a: &StationarityArgs) -> Result<()> {
    let mut run = Run::start("stationarity", &a.common)?;
    let mut load = |paths: &[PathBuf]| -> Result<[Spectrum; 3]> {
        let mut v = Vec::with_capacity(3);
        for p in paths {
            v.push(read_spectrum_csv(require_file(p)?)?);
            run.input(p);
        }
        v.try_into()
            .map_err(|_| CliError::Usage("exactly three spectra per mode are required".into()))
    };
    let refs = load(&a.refs)?;
    let sqzs = load(&a.sqzs)?;
    let efficiency = match a.efficiency {
        Some(e) => e,
        None => {
            let est = EstimatorConfig {
                segment_seconds: 1.0 / refs[0].bin_width_hz,
                ..EstimatorConfig::default()
            };
            efficiency_for(&est, a.ref_seconds, 200, a.common.seed)?
        }
    };
    let cfg = StationarityConfig {
        efficiency,
        reference_seconds: a.ref_seconds,
        squeezed_seconds: a.sqz_seconds,
    };
    let rep = stationarity_combined(&refs, &sqzs, &cfg)?;
    write_stationarity_csv(&run.path("stationarity.csv"), &rep)?;
    let (lo, hi) = (a.band_lo, a.band_hi);
    let pairs = rep
        .pairs
        .iter()
        .map(|p| {
            Ok(PairSummary {
                name: p.name.clone(),
                coverage: rep.pair_coverage(&p.name, lo, hi)?,
                excess_z: rep.pair_excess_z(&p.name, lo, hi)?,
            })
        })
        .collect::<subsql_core::Result<Vec<_>>>()?;
    let z = rep.combined_excess_z(lo, hi)?;
    let summary = StationaritySummary {
        efficiency,
        band_hz: (lo, hi),
        floor: rep.floor,
        combined_coverage: rep.combined_coverage(lo, hi)?,
        combined_excess_z: z,
        delta_nt: rep.delta_nt_band(lo, hi)?,
        non_stationary: z > 2.0 || pairs.iter().any(|p| p.excess_z.abs() > 2.0),
        pairs,
    };
    write_json(&run.path("stationarity_summary.json"), &summary)?;
    println!(
        "N_sigma^2 coverage {:.3}, excess z {:+.2}, non-stationary {}",
        summary.combined_coverage, summary.combined_excess_z, summary.non_stationary
    );
    run.finish()
}

pub fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let (ifo, _) = load_params(&a.common)?;
    let mut run = Run::start("calibrate", &a.common)?;
    let pa = read_series(require_file(&a.pd_a)?)?;
    let pb = read_series(require_file(&a.pd_b)?)?;
    let dark = read_spectrum_csv(require_file(&a.dark)?)?;
    for p in [&a.pd_a, &a.pd_b, &a.dark] {
        run.input(p);
    }
    let cfg = CalibrationConfig {
        band_hz: (a.band_lo, a.band_hi),
        split_fraction: a.split,
        ..CalibrationConfig::default()
    };
    let shot = |f: f64| shot_psd(&ifo, f).unwrap_or(f64::NAN);
    let est = calibrate_gain(&pa, &pb, &dark, &shot, &cfg)?;
    #[derive(Serialize)]
    struct Summary {
        g: f64,
        g_squared: f64,
        relative_error_g_squared: f64,
        relative_error_g: f64,
        bins: usize,
        band_hz: (f64, f64),
    }
    write_json(
        &run.path("gain.json"),
        &Summary {
            g: est.g,
            g_squared: est.g_squared,
            relative_error_g_squared: est.relative_error_g_squared,
            relative_error_g: est.relative_error_g,
            bins: est.bins,
            band_hz: cfg.band_hz,
        },
    )?;
    write_spectrum_csv(&run.path("shot_observed.csv"), &est.shot_observed, "counts^2/Hz")?;
    println!("g = {:.6e} ± {:.2}%", est.g, 100.0 * est.relative_error_g);
    run.finish()
}

/// Statistical weights predicted from smoothed classical noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitNoiseSpec {
    pub classical: PathBuf,
    pub reference_model: PathBuf,
    pub efficiency: f64,
    pub reference_seconds: f64,
    #[serde(default)]
    pub delta_nt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitEntry {
    pub path: PathBuf,
    pub angle_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_seconds: Option<f64>,
    /// Per-bin 1σ of S* (CSV, `psd` column) overriding predicted weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitManifest {
    pub band_hz: (f64, f64),
    #[serde(default)]
    pub bounds: Option<Bounds>,
    #[serde(default)]
    pub init: Option<FitParams>,
    #[serde(default = "default_stages")]
    pub weight_stages: usize,
    #[serde(default)]
    pub fit: Option<FitConfig>,
    #[serde(default)]
    pub noise: Option<FitNoiseSpec>,
    pub datasets: Vec<FitEntry>,
}

fn default_stages() -> usize {
    2
}

const DEFAULT_INIT: FitParams = FitParams {
    squeeze_factor: 1.0,
    psi_rad: 0.0,
    input_efficiency: 0.9,
    angle_offset_rad: 0.0,
};

pub fn fit(a: &FitArgs) -> Result<()> {
    let m: FitManifest = read_json(&a.manifest)?;
    let (ifo, _) = load_params(&a.common)?;
    let mut run = Run::start("fit", &a.common)?;
    run.input(&a.manifest);
    let root = a.manifest.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { root.join(p) };
    let predicted = match &m.noise {
        Some(n) => {
            let c = read_spectrum_csv(require_file(&resolve(&n.classical))?)?;
            let mr = read_spectrum_csv(require_file(&resolve(&n.reference_model))?)?;
            c.check_same_grid(&mr)?;
            Some((n, c, mr))
        }
        None => None,
    };
    let mut datasets = Vec::with_capacity(m.datasets.len());
    for d in &m.datasets {
        let path = resolve(&d.path);
        let s_obs = read_spectrum_csv(require_file(&path)?)?;
        run.input(&path);
        let noise = match (&d.sigma, &predicted) {
            (Some(p), _) => NoiseModel::Fixed {
                sigma: read_spectrum_csv(require_file(&resolve(p))?)?.values,
            },
            (None, Some((n, c, mr))) => {
                s_obs.check_same_grid(c)?;
                let secs = d.duration_seconds.ok_or_else(|| {
                    CliError::Usage(format!(
                        "dataset {} needs duration_seconds for predicted weights",
                        d.path.display()
                    ))
                })?;
                let df = s_obs.bin_width_hz;
                NoiseModel::Predicted(PredictedNoise {
                    classical: c.values.clone(),
                    reference_model: mr.values.clone(),
                    delta_squeezed: statistical_uncertainty(secs, df, n.efficiency)?,
                    delta_reference: statistical_uncertainty(n.reference_seconds, df, n.efficiency)?,
                    delta_nt: n.delta_nt,
                })
            }
            (None, None) => {
                return Err(CliError::Usage(format!(
                    "dataset {} has no sigma file and the manifest has no noise section",
                    d.path.display()
                )))
            }
        };
        datasets.push(FitDataset {
            label: s_obs.label.clone(),
            phi_nominal_rad: d.angle_deg.to_radians(),
            s_obs,
            noise,
        });
    }
    let problem = FitProblem {
        datasets,
        base: ifo,
        bounds: m.bounds.unwrap_or_default(),
        init: m.init.unwrap_or(DEFAULT_INIT),
        band_hz: m.band_hz,
        weight_stages: m.weight_stages,
    };
    let result = fitting::fit(&problem, &m.fit.unwrap_or_default())?;
    write_json(&run.path("fit_result.json"), &result)?;
    print_fit(&result.params, result.chi2_per_dof);
    run.finish()
}

fn print_fit(p: &FitParams, chi2: f64) {
    println!(
        "r = {:.4}, psi = {:.3} deg, eta_i = {:.4}, dphi = {:.3} deg, chi2/dof = {:.3}",
        p.squeeze_factor,
        p.psi_rad.to_degrees(),
        p.input_efficiency,
        p.angle_offset_rad.to_degrees(),
        chi2
    );
}

pub fn demo(a: &DemoArgs) -> Result<()> {
    let setup = setup_from(&a.common, a.v_ratio, None)?;
    let plan = load_plan(&a.plan)?;
    let cfg: AnalysisConfig = match &a.analysis {
        Some(p) => read_json(p)?,
        None => AnalysisConfig::default(),
    };
    let mut run = Run::start("demo", &a.common)?;
    for p in [&a.plan, &a.analysis].into_iter().flatten() {
        run.input(p);
    }
    let demo = run_demo(&plan, &setup, &cfg, &FitConfig::default(), a.common.seed)?;
    let an = &demo.analysis;
    let (lo, hi) = band(&a.common, 0.0, f64::INFINITY);
    let idx = an.d_r.grid.band_indices(lo, hi);
    if idx.is_empty() {
        return Err(CliError::Usage(format!("no bins between {lo} and {hi} Hz")));
    }

    let f = an.d_r.frequencies();
    let rows: Vec<Vec<f64>> = idx
        .clone()
        .map(|k| {
            let q = an.subtraction.q.values[k];
            let band = 2.0 * an.budget.absolute(k);
            vec![
                f[k],
                an.d_r.values[k],
                an.d_s.values[k],
                an.m_r.values[k],
                an.m_s.values[k],
                an.sql.values[k],
                an.subtraction.classical.values[k],
                q,
                q - band,
                q + band,
            ]
        })
        .collect();
    write_table(
        &run.path("spectra.csv"),
        "f_hz=Hz others=m^2/Hz",
        &[
            "f_hz",
            "D_r",
            "D_s",
            "M_r",
            "M_s",
            "SQL",
            "classical",
            "Q",
            "Q_lo_2sigma",
            "Q_hi_2sigma",
        ],
        &rows,
    )?;
    write_budget_csv(&run.path("budget.csv"), &an.budget)?;
    if let Some(rep) = &an.stationarity {
        write_stationarity_csv(&run.path("stationarity.csv"), rep)?;
    }

    // fit inputs, so `fit --manifest` reproduces the demo fit
    std::fs::create_dir_all(a.common.out.join("fit"))?;
    write_spectrum_csv(
        &run.path("fit/classical_smoothed.csv"),
        &an.classical_smoothed,
        PSD_UNITS,
    )?;
    write_spectrum_csv(&run.path("fit/m_r.csv"), &an.m_r, PSD_UNITS)?;
    let mut entries = Vec::with_capacity(an.observed.len());
    for o in &an.observed {
        let name = format!("s_obs_{}.csv", o.s_obs.label);
        write_spectrum_csv(&run.path(&format!("fit/{name}")), &o.s_obs, "dimensionless")?;
        entries.push(FitEntry {
            path: PathBuf::from(name),
            angle_deg: o.angle_deg,
            duration_seconds: Some(o.duration_seconds),
            sigma: None,
        });
    }
    let ref_seconds: f64 = plan
        .entries
        .iter()
        .filter(|e| e.mode.is_reference())
        .map(|e| e.duration_seconds)
        .sum();
    let fm = FitManifest {
        band_hz: demo.problem.band_hz,
        bounds: Some(demo.problem.bounds),
        init: Some(demo.problem.init),
        weight_stages: demo.problem.weight_stages,
        fit: Some(FitConfig::default()),
        noise: Some(FitNoiseSpec {
            classical: PathBuf::from("classical_smoothed.csv"),
            reference_model: PathBuf::from("m_r.csv"),
            efficiency: an.efficiency,
            reference_seconds: ref_seconds,
            delta_nt: 0.0,
        }),
        datasets: entries,
    };
    write_json(&run.path("fit/fit_manifest.json"), &fm)?;

    let (angles, cgrid, crows) = observed_contour(an, cfg.fit_band_hz)?;
    let mut crow_out = Vec::new();
    for (phi, row) in angles.iter().zip(&crows) {
        for (fr, s) in cgrid.iter().zip(row) {
            crow_out.push(vec![*phi, fr, *s]);
        }
    }
    write_table(
        &run.path("observed_contour.csv"),
        "phi_deg=deg f_hz=Hz S_obs=dimensionless",
        &["phi_deg", "f_hz", "S_obs"],
        &crow_out,
    )?;
    write_json(&run.path("fit_result.json"), &demo.summary.fit)?;
    write_json(&run.path("summary.json"), &demo.summary)?;
    if a.write_series {
        std::fs::create_dir_all(a.common.out.join("series"))?;
        for seg in &demo.recorded {
            let file = format!("series/{}.f64", seg.series.label);
            write_series_bin(&run.path(&file), &seg.series)?;
            run.path(&format!("{file}.json"));
        }
    }
    run.finish()?;

    let s = &demo.summary;
    println!("dip frequency {:.2} Hz", s.model_dip_hz);
    println!(
        "min amplitude ratio to SQL: model {:.4} at {:.2} Hz, fitted {:.4} at {:.2} Hz",
        s.model_min_ratio, s.model_min_ratio_hz, s.fitted_min_ratio, s.fitted_min_ratio_hz
    );
    print_fit(&s.fit.params, s.fit.chi2_per_dof);
    for c in &s.checks {
        println!(
            "{} {:<32} {:+.5} in [{}, {}]",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.lo,
            c.hi
        );
    }
    if a.check && !s.passed() {
        let failed: Vec<&str> = s.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        return Err(CliError::Check(failed.join(", ")));
    }
    Ok(())
}
