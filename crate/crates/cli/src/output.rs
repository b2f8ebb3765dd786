//! Result files: JSON matrices, the CSV schema and the run manifest.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use relaythp::linalg::{c64, CMatrix};
use relaythp::sim::PointResult;

use crate::config::Parameters;
use crate::error::CliError;

/// `{"shape": [rows, cols], "data": [[re, im], ...]}` in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonMatrix {
    pub shape: [usize; 2],
    pub data: Vec<[f64; 2]>,
}

impl From<&CMatrix> for JsonMatrix {
    fn from(m: &CMatrix) -> Self {
        let (r, c) = m.shape();
        let data = (0..r)
            .flat_map(|i| (0..c).map(move |j| (i, j)))
            .map(|(i, j)| [m[(i, j)].re, m[(i, j)].im])
            .collect();
        JsonMatrix {
            shape: [r, c],
            data,
        }
    }
}

impl JsonMatrix {
    pub fn to_matrix(&self) -> Result<CMatrix, CliError> {
        let [r, c] = self.shape;
        if self.data.len() != r * c {
            return Err(CliError::Config(format!(
                "matrix of shape {r}x{c} has {} entries",
                self.data.len()
            )));
        }
        Ok(CMatrix::from_row_iterator(
            r,
            c,
            self.data.iter().map(|[re, im]| c64(*re, *im)),
        ))
    }
}

pub const CSV_HEADER: [&str; 12] = [
    "scheme",
    "hop_snr_db",
    "sigma_e_sq",
    "rho_t",
    "rho_r",
    "trials",
    "symbols_per_trial",
    "bit_errors",
    "bits",
    "ber",
    "ber_stderr",
    "ser",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub scheme: String,
    pub hop_snr_db: f64,
    pub sigma_e_sq: f64,
    pub rho_t: f64,
    pub rho_r: f64,
    pub trials: usize,
    pub symbols_per_trial: usize,
    pub bit_errors: u64,
    pub bits: u64,
    pub ber: f64,
    pub ber_stderr: f64,
    pub ser: f64,
}

impl CsvRow {
    pub fn new(point: &PointResult, p: Parameters, symbols_per_trial: usize) -> CsvRow {
        CsvRow {
            scheme: point.scheme.name().to_string(),
            hop_snr_db: point.snr_db,
            sigma_e_sq: p.sigma_e_sq,
            rho_t: p.rho_t,
            rho_r: p.rho_r,
            trials: point.trials,
            symbols_per_trial,
            bit_errors: point.bit_errors,
            bits: point.bits,
            ber: point.ber,
            ber_stderr: point.ber_stderr,
            ser: point.ser,
        }
    }

    fn sort_key(&self) -> (&str, [f64; 4]) {
        (
            &self.scheme,
            [self.sigma_e_sq, self.rho_t, self.rho_r, self.hop_snr_db],
        )
    }
}

/// Sorts by scheme, parameters and SNR.
pub fn sort_rows(rows: &mut [CsvRow]) {
    rows.sort_by(|a, b| {
        let (sa, ka) = a.sort_key();
        let (sb, kb) = b.sort_key();
        sa.cmp(sb).then_with(|| {
            ka.iter()
                .zip(&kb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<(), CliError> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| CliError::Csv(e.to_string()))?;
    writer
        .write_record(CSV_HEADER)
        .map_err(|e| CliError::Csv(e.to_string()))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| CliError::Csv(e.to_string()))?;
    }
    writer
        .flush()
        .map_err(CliError::io(format!("writing {}", path.display())))
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Csv(e.to_string()))?;
    let header = reader.headers().map_err(|e| CliError::Csv(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(CliError::Csv(format!(
            "unexpected header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<CsvRow>, _>>()
        .map_err(|e| CliError::Csv(e.to_string()))?;
    if rows.is_empty() {
        return Err(CliError::Csv("no data rows".into()));
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("output types serialize");
    std::fs::write(path, text + "\n").map_err(CliError::io(format!("writing {}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: Option<String>,
    pub tool_version: String,
    pub master_seed: u64,
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
    pub outputs: Vec<PathBuf>,
    /// Free-form notes about how the run was made.
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: Option<String>, master_seed: u64) -> RunManifest {
        let now = Utc::now();
        RunManifest {
            command: command.into(),
            config_hash,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            master_seed,
            started: now,
            finished: now,
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Writes `value` as JSON into `dir` and records it.
    pub fn write_json<T: Serialize>(
        &mut self,
        dir: &Path,
        name: &str,
        value: &T,
    ) -> Result<(), CliError> {
        write_json(&dir.join(name), value)?;
        self.outputs.push(name.into());
        Ok(())
    }

    pub fn record(&mut self, name: &str) {
        self.outputs.push(name.into());
    }

    pub fn finish(mut self, dir: &Path) -> Result<(), CliError> {
        self.finished = Utc::now();
        write_json(&dir.join("manifest.json"), &self)
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))
}
