//! On-disk formats: configurations, curves, histograms, summaries and checkpoints.
//!
//! Every JSON document is written through a temporary file and renamed into place,
//! so an interrupted run never leaves a truncated file behind.

use std::fs;
use std::path::{Path, PathBuf};

use nv_gcce_core::ensemble::Histogram;
use nv_gcce_core::{CoherenceCurve, Complex64, SpinBathConfiguration};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_owned(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_owned(),
        source,
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Write `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })
}

/// A bath configuration as written by `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationFile {
    pub schema_version: u32,
    pub version: String,
    pub configuration: SpinBathConfiguration,
}

pub fn write_configuration(path: &Path, configuration: &SpinBathConfiguration) -> Result<()> {
    write_json(
        path,
        &ConfigurationFile {
            schema_version: SCHEMA_VERSION,
            version: crate::VERSION.to_owned(),
            configuration: configuration.clone(),
        },
    )
}

pub fn read_configuration(path: &Path) -> Result<SpinBathConfiguration> {
    let file: ConfigurationFile = read_json(path)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::Format {
            path: path.to_owned(),
            reason: format!("unsupported schema version {}", file.schema_version),
        });
    }
    file.configuration.validate()?;
    Ok(file.configuration)
}

/// Metadata written next to a curve CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSidecar {
    pub schema_version: u32,
    pub version: String,
    pub metadata: nv_gcce_core::CurveMetadata,
    /// The run that produced the curve, when there was one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Write `t_ms, L_real, L_imag` to `path` and the metadata to the `.json` sidecar.
pub fn write_curve(path: &Path, curve: &CoherenceCurve, provenance: Option<&serde_json::Value>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t_ms", "L_real", "L_imag"]).map_err(csv_err(path))?;
    for (t, v) in curve.times.iter().zip(&curve.values) {
        w.write_record([t.to_string(), v.re.to_string(), v.im.to_string()])
            .map_err(csv_err(path))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format {
        path: path.to_owned(),
        reason: e.to_string(),
    })?;
    write_atomic(path, &bytes)?;
    write_json(
        &sidecar_path(path),
        &CurveSidecar {
            schema_version: SCHEMA_VERSION,
            version: crate::VERSION.to_owned(),
            metadata: curve.metadata.clone(),
            provenance: provenance.cloned(),
        },
    )
}

/// Read a curve CSV; the sidecar is optional and supplies the metadata when present.
pub fn read_curve(path: &Path) -> Result<CoherenceCurve> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(it), Some(ire)) = (col("t_ms"), col("L_real")) else {
        return Err(Error::Format {
            path: path.to_owned(),
            reason: "expected columns t_ms and L_real".into(),
        });
    };
    let iim = col("L_imag");
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let num = |i: usize| -> Result<f64> {
            let field = record.get(i).unwrap_or("").trim();
            field.parse().map_err(|_| Error::Format {
                path: path.to_owned(),
                reason: format!("row {}: {field:?} is not a number", line + 2),
            })
        };
        times.push(num(it)?);
        let im = match iim {
            Some(i) => num(i)?,
            None => 0.0,
        };
        values.push(Complex64::new(num(ire)?, im));
    }
    let mut curve = CoherenceCurve::from_real(times, Vec::new());
    curve.values = values;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        let side: CurveSidecar = read_json(&sidecar)?;
        curve.metadata = side.metadata;
    }
    Ok(curve)
}

/// Every `*.csv` in `dir`, sorted by file name.
pub fn list_curves(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn read_curves(dir: &Path) -> Result<Vec<CoherenceCurve>> {
    let files = list_curves(dir)?;
    if files.is_empty() {
        return Err(Error::Format {
            path: dir.to_owned(),
            reason: "no curve CSV files found".into(),
        });
    }
    files.iter().map(|f| read_curve(f)).collect()
}

pub fn write_histogram(path: &Path, histogram: &Histogram) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bin_center", "density"]).map_err(csv_err(path))?;
    for (c, d) in histogram.centers.iter().zip(&histogram.density) {
        w.write_record([c.to_string(), d.to_string()]).map_err(csv_err(path))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format {
        path: path.to_owned(),
        reason: e.to_string(),
    })?;
    write_atomic(path, &bytes)
}

/// Identifies the computation behind a checkpoint; a stored curve is reused only
/// when its key matches exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointKey {
    pub version: String,
    pub concentration_ppm: f64,
    pub order: usize,
    pub r_bath: f64,
    pub r_dipole: f64,
    /// Radius the configuration was drawn in before restriction to `r_bath`.
    pub generation_r_bath: f64,
    pub field_gauss: f64,
    pub n_mc_samples: usize,
    pub times_ms: Vec<f64>,
    pub seed: u64,
    pub index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub key: CheckpointKey,
    pub n_spins: usize,
    pub n_clusters: usize,
    pub curve: CoherenceCurve,
}

pub fn checkpoint_path(dir: &Path, index: u64) -> PathBuf {
    dir.join(format!("config_{index:06}.json"))
}

/// The stored checkpoint for `key`, or `None` when absent, unreadable or stale.
pub fn load_checkpoint(dir: &Path, key: &CheckpointKey) -> Option<Checkpoint> {
    let path = checkpoint_path(dir, key.index);
    if !path.exists() {
        return None;
    }
    match read_json::<Checkpoint>(&path) {
        Ok(c) if &c.key == key => Some(c),
        Ok(_) => {
            log::warn!("{}: checkpoint belongs to different parameters, recomputing", path.display());
            None
        }
        Err(e) => {
            log::warn!("{e}; recomputing");
            None
        }
    }
}

pub fn store_checkpoint(dir: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_json(&checkpoint_path(dir, checkpoint.key.index), checkpoint)
}

/// Directory-safe label such as `rho_100ppm_order2`.
pub fn ensemble_label(concentration_ppm: f64, order: usize) -> String {
    format!("rho_{concentration_ppm}ppm_order{order}")
}
