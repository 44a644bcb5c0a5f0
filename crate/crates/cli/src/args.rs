use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "subsql",
    version,
    about = "Quantum-noise model and sub-SQL measurement pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Interferometer and squeezer parameter file (JSON); built-in table values when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub fmin: Option<f64>,
    #[arg(long, global = true)]
    pub fmax: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantum-noise model curves as amplitude spectra.
    Model(ModelArgs),
    /// Long-format S*(phi, f) contour.
    Contour(ContourArgs),
    /// Synthetic segment time series.
    Synth(SynthArgs),
    /// Median- or mean-Welch PSD of one or more series.
    EstimatePsd(EstimateArgs),
    /// Classical subtraction and the uncertainty budget.
    Subtract(SubtractArgs),
    /// Non-stationarity metrics for three reference and three squeezed spectra.
    Stationarity(StationarityArgs),
    /// Sensing gain from a detector pair.
    Calibrate(CalibrateArgs),
    /// Squeezing-parameter fit from a manifest of observed S* spectra.
    Fit(FitArgs),
    /// End-to-end synthetic desk experiment.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 0.5)]
    pub df: f64,
}

#[derive(Debug, Args)]
pub struct ContourArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 0.5)]
    pub df: f64,
    #[arg(long, default_value_t = -89.0, allow_hyphen_values = true)]
    pub phi_min: f64,
    #[arg(long, default_value_t = 90.0, allow_hyphen_values = true)]
    pub phi_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub phi_step: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Segment plan (JSON); the desk schedule when absent.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Classical-to-quantum PSD ratio at the squeezed dip.
    #[arg(long, default_value_t = 7.2)]
    pub v_ratio: f64,
    #[arg(long)]
    pub sample_rate: Option<f64>,
    /// Write a reference-mode detector pair and its dark PSD instead.
    #[arg(long)]
    pub dual_readout: bool,
    #[arg(long, default_value_t = 300.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 1e18)]
    pub gain: f64,
    #[arg(long, default_value_t = 0.01)]
    pub dark_fraction: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StatArg {
    Median,
    Mean,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Series files; several are pooled into one estimate.
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = StatArg::Median)]
    pub statistic: StatArg,
    #[arg(long, default_value_t = 2.0)]
    pub segment_seconds: f64,
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
    /// Output file stem.
    #[arg(long, default_value = "psd")]
    pub name: String,
    #[arg(long, default_value = "m^2/Hz")]
    pub units: String,
}

#[derive(Debug, Args)]
pub struct SubtractArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub d_r: PathBuf,
    #[arg(long)]
    pub d_s: PathBuf,
    /// Reference quantum model; computed from the parameter file when absent.
    #[arg(long)]
    pub m_r: Option<PathBuf>,
    /// Budget components (JSON with keys dG, dC, dMr, dDr, dDs, dNt, dNm).
    #[arg(long)]
    pub components: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StationarityArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, num_args = 3, required = true)]
    pub refs: Vec<PathBuf>,
    #[arg(long, num_args = 3, required = true)]
    pub sqzs: Vec<PathBuf>,
    #[arg(long)]
    pub ref_seconds: f64,
    #[arg(long)]
    pub sqz_seconds: f64,
    /// Estimator efficiency; measured on white noise when absent.
    #[arg(long)]
    pub efficiency: Option<f64>,
    /// Band for the coverage and excess summaries.
    #[arg(long, default_value_t = 20.0)]
    pub band_lo: f64,
    #[arg(long, default_value_t = 100.0)]
    pub band_hi: f64,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub pd_a: PathBuf,
    #[arg(long)]
    pub pd_b: PathBuf,
    /// Combined dark PSD of the recombined readout (CSV, data units).
    #[arg(long)]
    pub dark: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub split: f64,
    #[arg(long, default_value_t = 100.0)]
    pub band_lo: f64,
    #[arg(long, default_value_t = 200.0)]
    pub band_hi: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Fit manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 7.2)]
    pub v_ratio: f64,
    /// Segment plan (JSON); the desk schedule when absent.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Analysis settings (JSON).
    #[arg(long)]
    pub analysis: Option<PathBuf>,
    /// Exit 4 unless every acceptance threshold passes.
    #[arg(long)]
    pub check: bool,
    /// Also write the synthesized series.
    #[arg(long)]
    pub write_series: bool,
}
