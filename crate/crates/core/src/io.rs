//! CSV, binary and manifest formats shared by the command-line tools.
//!
//! Every CSV starts with a `# units:` comment row followed by the column
//! header. Readers skip `#` rows.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::FrequencyGrid;
use crate::pipeline::{StationarityReport, UncertaintyBudget};
use crate::spectral::TimeSeries;
use crate::spectrum::Spectrum;

fn parse_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

/// Writes a CSV table with a units comment row.
pub fn write_table(path: &Path, units: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# units: {units}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(|e| parse_err(path, e))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::LengthMismatch {
                left: row.len(),
                right: header.len(),
            });
        }
        w.write_record(row.iter().map(|v| format!("{v:e}")))
            .map_err(|e| parse_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// A CSV read back as named numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column {name}")))?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path)?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| parse_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse_err(path, e))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| parse_err(path, format!("{s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

pub fn write_spectrum_csv(path: &Path, s: &Spectrum, psd_units: &str) -> Result<()> {
    let n = s.segment_count.unwrap_or(0) as f64;
    let rows: Vec<Vec<f64>> = s
        .frequencies()
        .iter()
        .zip(&s.values)
        .map(|(f, v)| vec![*f, *v, n])
        .collect();
    write_table(
        path,
        &format!("f_hz=Hz psd={psd_units} n_segments=count"),
        &["f_hz", "psd", "n_segments"],
        &rows,
    )
}

pub fn read_spectrum_csv(path: &Path) -> Result<Spectrum> {
    let t = read_table(path)?;
    let f = t.column("f_hz")?;
    let v = t.column("psd")?;
    let n = t.column("n_segments").ok().and_then(|c| c.first().copied());
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut s = Spectrum::new(FrequencyGrid::new(f)?, v, label)?;
    if let Some(n) = n.filter(|n| *n > 0.0) {
        s = s.with_segments(n as usize);
    }
    Ok(s)
}

pub fn write_budget_csv(path: &Path, b: &UncertaintyBudget) -> Result<()> {
    let rows: Vec<Vec<f64>> = (0..b.len())
        .map(|k| {
            vec![
                b.grid.as_slice()[k],
                b.dq[k],
                b.dg[k],
                b.dc[k],
                b.dmr[k],
                b.ddr[k],
                b.dds[k],
                b.dnt[k],
                b.dnm[k],
                b.v[k],
            ]
        })
        .collect();
    write_table(
        path,
        "f_hz=Hz others=relative to Q",
        &["f_hz", "dQ_rel", "dG", "dC", "dMr", "dDr", "dDs", "dNt", "dNm", "V"],
        &rows,
    )
}

pub fn write_stationarity_csv(path: &Path, rep: &StationarityReport) -> Result<()> {
    let mut header = vec!["f_hz".to_string()];
    for p in &rep.pairs {
        header.push(p.name.clone());
        header.push(format!("{}_band_2sigma", p.name));
    }
    header.extend(["N_sigma_sq", "N_sigma_sq_bound_2sigma", "delta_nt"].map(String::from));
    let rows: Vec<Vec<f64>> = (0..rep.combined.len())
        .map(|k| {
            let mut row = vec![rep.combined.grid.as_slice()[k]];
            for p in &rep.pairs {
                row.push(p.spectrum.values[k]);
                row.push(p.band_2sigma);
            }
            row.extend([
                rep.combined.values[k],
                rep.combined_bound_2sigma,
                rep.delta_nt.values[k],
            ]);
            row
        })
        .collect();
    let names: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(path, "f_hz=Hz others=dimensionless", &names, &rows)
}

/// Sidecar describing a raw little-endian f64 series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSidecar {
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub label: Option<String>,
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    let mut s = bin.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `<path>` as raw f64 LE and `<path>.json` with the sample rate.
pub fn write_series_bin(path: &Path, ts: &TimeSeries) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    for v in &ts.samples {
        file.write_all(&v.to_le_bytes())?;
    }
    file.flush()?;
    let side = SeriesSidecar {
        sample_rate_hz: ts.sample_rate_hz,
        samples: Some(ts.len()),
        label: Some(ts.label.clone()),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)? + "\n")?;
    Ok(())
}

/// Reads a series from `t,value` CSV or from raw f64 LE with a sidecar.
pub fn read_series(path: &Path) -> Result<TimeSeries> {
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let t = read_table(path)?;
        let time = t.column("t")?;
        let value = t.column("value")?;
        if time.len() < 2 {
            return Err(parse_err(path, "need at least two samples"));
        }
        let dt = (time[time.len() - 1] - time[0]) / (time.len() - 1) as f64;
        if !(dt > 0.0) {
            return Err(parse_err(path, "time column is not increasing"));
        }
        return TimeSeries::new(value, 1.0 / dt, label);
    }
    let side_path = sidecar_path(path);
    let side: SeriesSidecar = serde_json::from_str(
        &std::fs::read_to_string(&side_path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", side_path.display()))))?,
    )?;
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(parse_err(
            path,
            format!("{} bytes is not a whole number of f64", bytes.len()),
        ));
    }
    let samples: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if let Some(n) = side.samples {
        if n != samples.len() {
            return Err(Error::LengthMismatch {
                left: samples.len(),
                right: n,
            });
        }
    }
    TimeSeries::new(samples, side.sample_rate_hz, side.label.unwrap_or(label))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Provenance record written alongside every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    /// Seconds since the epoch, from `SOURCE_DATE_EPOCH` when set.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(command: impl Into<String>) -> Self {
        let timestamp = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or_else(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            });
        Self {
            command: command.into(),
            config: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let grid = FrequencyGrid::arange(0.5, 10.0, 0.5).unwrap();
        let s = Spectrum::from_fn(&grid, "d", |f| Ok(1e-40 / f))
            .unwrap()
            .with_segments(7);
        write_spectrum_csv(&p, &s, "m^2/Hz").unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# units: f_hz=Hz"));
        let back = read_spectrum_csv(&p).unwrap();
        assert_eq!(back.values, s.values);
        assert_eq!(back.segment_count, Some(7));
        assert!(back.grid.same_as(&s.grid));
    }

    #[test]
    fn series_round_trip_binary_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let ts = TimeSeries::new(vec![0.1, -2.5, 3.25, 1e-21], 4.0, "x").unwrap();
        let p = dir.path().join("x.f64");
        write_series_bin(&p, &ts).unwrap();
        assert_eq!(read_series(&p).unwrap(), ts);
        let c = dir.path().join("x.csv");
        std::fs::write(&c, "t,value\n0,1\n0.25,2\n0.5,3\n").unwrap();
        let back = read_series(&c).unwrap();
        assert_eq!(back.sample_rate_hz, 4.0);
        assert_eq!(back.samples, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f64");
        std::fs::write(&p, [0u8; 12]).unwrap();
        std::fs::write(sidecar_path(&p), r#"{"sample_rate_hz": 1.0}"#).unwrap();
        assert!(matches!(read_series(&p), Err(Error::Parse(_))));
    }
}
