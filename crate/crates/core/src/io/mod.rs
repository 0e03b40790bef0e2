//! Files on disk: datasets (CSV + JSON sidecar), manifests, checkpoints,
//! plans and reports. Every write goes through a temp file and a rename.

pub mod svg;

use crate::hybrid::HybridModel;
use crate::plant::{Channels, DatasetMeta, GridSpec, NoiseSpec, SyntheticPlant, TrajectoryDataset};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {msg}")]
    Schema { path: PathBuf, msg: String },
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs { path: path.to_path_buf(), source }
}

/// Writes `bytes` to a sibling temp file, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(fs_err(dir))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        use std::io::Write;
        let mut f = fs::File::create(&tmp).map_err(fs_err(&tmp))?;
        f.write_all(bytes).map_err(fs_err(&tmp))?;
        f.sync_all().map_err(fs_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(fs_err(path))
}

pub fn read_string(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(fs_err(path))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    serde_json::from_str(&read_string(path)?).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

/// Serializes rows with a header taken from the row type.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::Schema { path: path.to_path_buf(), msg: e.to_string() })?;
    write_atomic(path, &bytes)
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let csv_err = |source| IoError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct SampleRow {
    t_s: f64,
    x_mm: f64,
    xdot_mm_s: f64,
    #[serde(rename = "Pf_kPa")]
    pf_kpa: f64,
    #[serde(rename = "Pe_kPa")]
    pe_kpa: f64,
    #[serde(rename = "Fe_N")]
    fe_n: f64,
}

fn channel_rows(c: &Channels) -> Vec<SampleRow> {
    (0..c.len())
        .map(|k| SampleRow { t_s: c.t_s[k], x_mm: c.x_mm[k], xdot_mm_s: c.xdot_mm_s[k], pf_kpa: c.pf_kpa[k], pe_kpa: c.pe_kpa[k], fe_n: c.fe_n[k] })
        .collect()
}

fn rows_channels(rows: &[SampleRow]) -> Channels {
    let mut c = Channels::default();
    for r in rows {
        c.t_s.push(r.t_s);
        c.x_mm.push(r.x_mm);
        c.xdot_mm_s.push(r.xdot_mm_s);
        c.pf_kpa.push(r.pf_kpa);
        c.pe_kpa.push(r.pe_kpa);
        c.fe_n.push(r.fe_n);
    }
    c
}

/// JSON sidecar of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSidecar {
    pub version: u32,
    pub sample_rate_hz: f64,
    pub n_samples: usize,
    pub meta: DatasetMeta,
    /// Noise-free channels, present for noisy trials.
    pub clean_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    pub name: String,
    pub csv: String,
    pub json: String,
}

/// Writes `<name>.csv`, `<name>.json` and, for noisy trials, `<name>.clean.csv`.
pub fn write_dataset(dir: &Path, d: &TrajectoryDataset) -> Result<TrialEntry, IoError> {
    let name = d.name();
    let entry = TrialEntry { name: name.clone(), csv: format!("{name}.csv"), json: format!("{name}.json") };
    write_csv(&dir.join(&entry.csv), &channel_rows(&d.channels))?;
    let clean_csv = match &d.clean {
        Some(c) => {
            let f = format!("{name}.clean.csv");
            write_csv(&dir.join(&f), &channel_rows(c))?;
            Some(f)
        }
        None => None,
    };
    let side = DatasetSidecar { version: SCHEMA_VERSION, sample_rate_hz: d.sample_rate_hz, n_samples: d.channels.len(), meta: d.meta.clone(), clean_csv };
    write_json(&dir.join(&entry.json), &side)?;
    Ok(entry)
}

pub fn read_dataset(dir: &Path, entry: &TrialEntry) -> Result<TrajectoryDataset, IoError> {
    let json_path = dir.join(&entry.json);
    let side: DatasetSidecar = read_json(&json_path)?;
    check_version(&json_path, side.version)?;
    let channels = rows_channels(&read_csv(&dir.join(&entry.csv))?);
    if channels.len() != side.n_samples {
        return Err(IoError::Schema { path: dir.join(&entry.csv), msg: format!("{} rows, sidecar says {}", channels.len(), side.n_samples) });
    }
    if !channels.all_finite() {
        return Err(IoError::Schema { path: dir.join(&entry.csv), msg: "non-finite value".into() });
    }
    let clean = match &side.clean_csv {
        Some(f) => Some(rows_channels(&read_csv(&dir.join(f))?)),
        None => None,
    };
    Ok(TrajectoryDataset { sample_rate_hz: side.sample_rate_hz, meta: side.meta, channels, clean })
}

/// Index of a generated dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub plant: SyntheticPlant,
    pub plant_hash: String,
    pub grid: GridSpec,
    pub duration_s: f64,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub trials: Vec<TrialEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn check_version(path: &Path, version: u32) -> Result<(), IoError> {
    if version != SCHEMA_VERSION {
        return Err(IoError::Schema { path: path.to_path_buf(), msg: format!("schema version {version}, expected {SCHEMA_VERSION}") });
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, IoError> {
    let path = dir.join(MANIFEST_FILE);
    let m: Manifest = read_json(&path)?;
    check_version(&path, m.version)?;
    Ok(m)
}

/// Manifest plus every trial it lists, in manifest order.
pub fn load_datasets(dir: &Path) -> Result<(Manifest, Vec<TrajectoryDataset>), IoError> {
    let m = read_manifest(dir)?;
    let ds = m.trials.iter().map(|e| read_dataset(dir, e)).collect::<Result<Vec<_>, _>>()?;
    Ok((m, ds))
}

pub fn write_checkpoint(path: &Path, model: &HybridModel) -> Result<(), IoError> {
    let mut s = model.to_json().map_err(|e| IoError::Schema { path: path.to_path_buf(), msg: e.to_string() })?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_checkpoint(path: &Path) -> Result<HybridModel, IoError> {
    HybridModel::from_json(&read_string(path)?).map_err(|e| IoError::Schema { path: path.to_path_buf(), msg: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{generate_dataset, Excitation};

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ex = Excitation::Sinusoid { frequency_hz: 2.0, torque_nm: 0.918, duration_s: 0.3 };
        for noise in [NoiseSpec::NONE, NoiseSpec::STANDARD] {
            let d = generate_dataset(&SyntheticPlant::default(), 45.0, 27.5, &ex, 3, noise).unwrap();
            let e = write_dataset(dir.path(), &d).unwrap();
            assert_eq!(read_dataset(dir.path(), &e).unwrap(), d);
        }
    }

    #[test]
    fn sidecar_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let ex = Excitation::Sinusoid { frequency_hz: 2.0, torque_nm: 0.918, duration_s: 0.1 };
        let d = generate_dataset(&SyntheticPlant::default(), 10.0, 10.0, &ex, 3, NoiseSpec::NONE).unwrap();
        let e = write_dataset(dir.path(), &d).unwrap();
        let p = dir.path().join(&e.json);
        let s = read_string(&p).unwrap().replacen('{', "{\n  \"bogus\": 1,", 1);
        fs::write(&p, s).unwrap();
        assert!(matches!(read_dataset(dir.path(), &e), Err(IoError::Json { .. })));
    }
}
