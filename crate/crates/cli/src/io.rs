//! CSV readers and writers for the feature and runtime tables.
//!
//! Features: header `instance,<f1>,...,<fm>`; an empty cell or `NaN` marks a
//! missing value. Runtimes: header `instance,seed,runtime`, one row per run,
//! runtimes in seconds. Row numbers in errors are file lines (header = 1).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use distnet_core::data::join_dataset;
use distnet_core::{Dataset, FeatureVector, InstanceId, JoinReport, RuntimeObservations};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {cause}")]
    Open { path: PathBuf, cause: io::Error },
    #[error("{path}: {cause}")]
    Csv { path: PathBuf, cause: csv::Error },
    #[error("{path}: header must be `{expected}`, found `{found}`")]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: row {row}: expected {expected} fields, found {found}")]
    Ragged {
        path: PathBuf,
        row: u64,
        expected: usize,
        found: usize,
    },
    #[error("{path}: row {row}: empty instance id")]
    EmptyId { path: PathBuf, row: u64 },
    #[error("{path}: row {row}: duplicate instance id `{id}` (first seen on row {first})")]
    DuplicateId {
        path: PathBuf,
        row: u64,
        id: String,
        first: u64,
    },
    #[error("{path}: row {row}, column `{column}`: `{value}` is not a number")]
    NotNumeric {
        path: PathBuf,
        row: u64,
        column: String,
        value: String,
    },
    #[error("{path}: row {row}: runtime {value} must be a positive finite number of seconds")]
    BadRuntime { path: PathBuf, row: u64, value: String },
    #[error(transparent)]
    Data(#[from] distnet_core::Error),
}

pub type FeatureTable = (Vec<String>, BTreeMap<InstanceId, FeatureVector>);

fn reader(path: &Path) -> Result<csv::Reader<File>, IoError> {
    let file = File::open(path).map_err(|cause| IoError::Open {
        path: path.to_path_buf(),
        cause,
    })?;
    Ok(csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |cause| IoError::Csv {
        path: path.to_path_buf(),
        cause,
    }
}

fn row_number(record: &csv::StringRecord, fallback: u64) -> u64 {
    record.position().map_or(fallback, |p| p.line())
}

fn parse_cell(cell: &str) -> Option<Option<f64>> {
    if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
        return Some(None);
    }
    cell.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some)
}

pub fn load_features(path: &Path) -> Result<FeatureTable, IoError> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    if header.get(0) != Some("instance") {
        return Err(IoError::Header {
            path: path.to_path_buf(),
            expected: "instance,<feature>,...".into(),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = BTreeMap::new();
    let mut first_seen: BTreeMap<String, u64> = BTreeMap::new();
    for (n, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let row = row_number(&record, n as u64 + 2);
        if record.len() != header.len() {
            return Err(IoError::Ragged {
                path: path.to_path_buf(),
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        let id = &record[0];
        if id.is_empty() {
            return Err(IoError::EmptyId {
                path: path.to_path_buf(),
                row,
            });
        }
        if let Some(&first) = first_seen.get(id) {
            return Err(IoError::DuplicateId {
                path: path.to_path_buf(),
                row,
                id: id.to_string(),
                first,
            });
        }
        first_seen.insert(id.to_string(), row);
        let values = record
            .iter()
            .skip(1)
            .zip(&names)
            .map(|(cell, column)| {
                parse_cell(cell).ok_or_else(|| IoError::NotNumeric {
                    path: path.to_path_buf(),
                    row,
                    column: column.clone(),
                    value: cell.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.insert(InstanceId::new(id)?, FeatureVector(values));
    }
    Ok((names, rows))
}

/// Runtimes grouped per instance, file order kept within each instance.
pub fn load_runtimes(path: &Path) -> Result<BTreeMap<InstanceId, RuntimeObservations>, IoError> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    if header.iter().collect::<Vec<_>>() != ["instance", "seed", "runtime"] {
        return Err(IoError::Header {
            path: path.to_path_buf(),
            expected: "instance,seed,runtime".into(),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (n, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let row = row_number(&record, n as u64 + 2);
        if record.len() != 3 {
            return Err(IoError::Ragged {
                path: path.to_path_buf(),
                row,
                expected: 3,
                found: record.len(),
            });
        }
        if record[0].is_empty() {
            return Err(IoError::EmptyId {
                path: path.to_path_buf(),
                row,
            });
        }
        let raw = &record[2];
        let value: f64 = raw.parse().map_err(|_| IoError::NotNumeric {
            path: path.to_path_buf(),
            row,
            column: "runtime".into(),
            value: raw.to_string(),
        })?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(IoError::BadRuntime {
                path: path.to_path_buf(),
                row,
                value: raw.to_string(),
            });
        }
        groups.entry(record[0].to_string()).or_default().push(value);
    }
    groups
        .into_iter()
        .map(|(id, times)| Ok((InstanceId::new(id)?, RuntimeObservations::new(times)?)))
        .collect()
}

/// Load both tables and inner-join them. Instances found in only one table
/// are dropped and listed in the report.
pub fn load_dataset(features: &Path, runtimes: &Path) -> Result<(Dataset, JoinReport), IoError> {
    let (names, rows) = load_features(features)?;
    let times = load_runtimes(runtimes)?;
    Ok(join_dataset(names, rows, times)?)
}

/// One JSON line per dropped instance, on stderr.
pub fn log_dropped(report: &JoinReport) {
    let lines = report
        .missing_runtimes
        .iter()
        .map(|id| (id, "no runtime observations"))
        .chain(report.missing_features.iter().map(|id| (id, "no feature row")));
    for (id, reason) in lines {
        eprintln!(
            "{}",
            serde_json::json!({"event": "instance_dropped", "instance": id, "reason": reason})
        );
    }
}

fn format_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

pub fn write_features<W: Write>(out: W, dataset: &Dataset) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(std::iter::once("instance").chain(dataset.feature_names().iter().map(String::as_str)))?;
    for inst in dataset.instances() {
        let mut row = vec![inst.id.to_string()];
        row.extend(inst.features.values().iter().map(|&v| format_cell(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Seeds are the observation's position within its instance.
pub fn write_runtimes<W: Write>(out: W, dataset: &Dataset) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["instance", "seed", "runtime"])?;
    for inst in dataset.instances() {
        for (seed, t) in inst.runtimes.times().iter().enumerate() {
            w.write_record([inst.id.to_string(), seed.to_string(), format!("{t:?}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Create `path` (and its parent directories) for writing.
pub fn create(path: &Path) -> anyhow::Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("{}: {e}", dir.display()))?;
    }
    File::create(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}
