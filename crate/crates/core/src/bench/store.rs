//! Run records: `records.jsonl` (full detail, source of truth) and a flat
//! `records.csv` regenerated on every write.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::SeqClass;
use crate::energy::{ConvergedStat, EnergyMeasurement};

/// Column order of `records.csv`.
pub const RECORD_CSV_COLUMNS: [&str; 28] = [
    "codec",
    "codec_version",
    "class",
    "sequence",
    "rung",
    "qp",
    "status",
    "error",
    "bitrate_kbps",
    "bitstream_bytes",
    "psnr_y",
    "psnr_u",
    "psnr_v",
    "psnr_yuv",
    "vmaf",
    "enc_energy_j",
    "enc_ci_j",
    "enc_runs",
    "enc_converged",
    "dec_energy_j",
    "dec_ci_j",
    "dec_runs",
    "dec_converged",
    "enc_wall_s",
    "dec_wall_s",
    "host_fingerprint",
    "started_at",
    "finished_at",
];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("duplicate completed record for {0}")]
    DuplicateKey(RecordKey),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub codec: String,
    pub class: SeqClass,
    pub sequence: String,
    pub qp: u32,
}

impl std::fmt::Display for RecordKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}/qp{}", self.codec, self.class, self.sequence, self.qp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    pub mean_j: f64,
    pub ci_half_width_j: f64,
    pub n_runs: usize,
    pub converged: bool,
    pub mean_duration_s: f64,
    pub runs: Vec<EnergyMeasurement>,
}

impl From<&ConvergedStat> for EnergySummary {
    fn from(s: &ConvergedStat) -> Self {
        EnergySummary {
            mean_j: s.mean,
            ci_half_width_j: s.ci_half_width,
            n_runs: s.n_runs,
            converged: s.converged,
            mean_duration_s: s.mean_duration_s(),
            runs: s.per_run.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub codec: String,
    pub codec_version: String,
    pub class: SeqClass,
    pub sequence: String,
    /// Index into the QP list (paired across QP scales).
    pub rung: usize,
    /// QP on the codec's native scale.
    pub qp: u32,
    pub status: RunStatus,
    pub error: Option<String>,
    pub bitrate_kbps: Option<f64>,
    pub bitstream_bytes: Option<u64>,
    /// SHA-256 of the bitstream whose size gave `bitrate_kbps`.
    #[serde(default)]
    pub bitstream_sha256: Option<String>,
    pub psnr_y: Option<f64>,
    pub psnr_u: Option<f64>,
    pub psnr_v: Option<f64>,
    pub psnr_yuv: Option<f64>,
    pub vmaf: Option<f64>,
    pub enc_energy: Option<EnergySummary>,
    pub dec_energy: Option<EnergySummary>,
    pub enc_wall_s: Option<f64>,
    pub dec_wall_s: Option<f64>,
    pub host_fingerprint: String,
    pub started_at: u64,
    pub finished_at: u64,
}

impl RunRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            codec: self.codec.clone(),
            class: self.class,
            sequence: self.sequence.clone(),
            qp: self.qp,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    /// A failed record for `key`.
    pub fn failed(key: &RecordKey, rung: usize, error: String, host_fingerprint: &str, started_at: u64) -> Self {
        RunRecord {
            codec: key.codec.clone(),
            codec_version: String::new(),
            class: key.class,
            sequence: key.sequence.clone(),
            rung,
            qp: key.qp,
            status: RunStatus::Failed,
            error: Some(error),
            bitrate_kbps: None,
            bitstream_bytes: None,
            bitstream_sha256: None,
            psnr_y: None,
            psnr_u: None,
            psnr_v: None,
            psnr_yuv: None,
            vmaf: None,
            enc_energy: None,
            dec_energy: None,
            enc_wall_s: None,
            dec_wall_s: None,
            host_fingerprint: host_fingerprint.to_string(),
            started_at,
            finished_at: crate::energy::unix_now(),
        }
    }

    fn csv_row(&self) -> Vec<String> {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(T::to_string).unwrap_or_default()
        }
        let energy = |e: &Option<EnergySummary>| -> [String; 4] {
            match e {
                Some(e) => [
                    e.mean_j.to_string(),
                    e.ci_half_width_j.to_string(),
                    e.n_runs.to_string(),
                    e.converged.to_string(),
                ],
                None => Default::default(),
            }
        };
        let mut row = vec![
            self.codec.clone(),
            self.codec_version.clone(),
            self.class.to_string(),
            self.sequence.clone(),
            self.rung.to_string(),
            self.qp.to_string(),
            match self.status {
                RunStatus::Ok => "ok".into(),
                RunStatus::Failed => "failed".into(),
            },
            opt(&self.error),
            opt(&self.bitrate_kbps),
            opt(&self.bitstream_bytes),
            opt(&self.psnr_y),
            opt(&self.psnr_u),
            opt(&self.psnr_v),
            opt(&self.psnr_yuv),
            opt(&self.vmaf),
        ];
        row.extend(energy(&self.enc_energy));
        row.extend(energy(&self.dec_energy));
        row.extend([
            opt(&self.enc_wall_s),
            opt(&self.dec_wall_s),
            self.host_fingerprint.clone(),
            self.started_at.to_string(),
            self.finished_at.to_string(),
        ]);
        row
    }
}

/// Records under one work directory, in insertion order.
#[derive(Debug)]
pub struct RecordStore {
    dir: PathBuf,
    records: Vec<RunRecord>,
}

impl RecordStore {
    pub fn jsonl_path(dir: &Path) -> PathBuf {
        dir.join("records.jsonl")
    }

    pub fn csv_path(dir: &Path) -> PathBuf {
        dir.join("records.csv")
    }

    /// Opens the store in `dir`, loading any existing records.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let path = Self::jsonl_path(dir);
        let records = if path.exists() { read_records(&path)? } else { Vec::new() };
        Ok(RecordStore {
            dir: dir.to_path_buf(),
            records,
        })
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &RecordKey) -> Option<&RunRecord> {
        self.records.iter().find(|r| &r.key() == key)
    }

    pub fn is_complete(&self, key: &RecordKey) -> bool {
        self.get(key).is_some_and(RunRecord::is_ok)
    }

    /// Inserts `rec`, replacing a failed record with the same key, and
    /// persists both files.
    pub fn upsert(&mut self, rec: RunRecord) -> Result<(), StoreError> {
        let key = rec.key();
        match self.records.iter().position(|r| r.key() == key) {
            Some(i) if self.records[i].is_ok() => return Err(StoreError::DuplicateKey(key)),
            Some(i) => self.records[i] = rec,
            None => self.records.push(rec),
        }
        self.flush()
    }

    pub fn flush(&self) -> Result<(), StoreError> {
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let jsonl = Self::jsonl_path(&self.dir);
        write_atomic(&jsonl, |f| {
            for r in &self.records {
                serde_json::to_writer(&mut *f, r)?;
                f.write_all(b"\n")?;
            }
            Ok(())
        })?;
        write_records_csv(&Self::csv_path(&self.dir), &self.records)
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_atomic(path: &Path, body: impl FnOnce(&mut File) -> io::Result<()>) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    body(&mut f).and_then(|_| f.sync_all()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Reads a JSON-lines record file. Failed records may be superseded by later
/// lines with the same key; two completed records for one key are an error.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, StoreError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out: Vec<RunRecord> = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RunRecord = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let key = rec.key();
        match out.iter().position(|r| r.key() == key) {
            Some(j) if out[j].is_ok() && rec.is_ok() => return Err(StoreError::DuplicateKey(key)),
            Some(j) if rec.is_ok() || !out[j].is_ok() => out[j] = rec,
            Some(_) => {}
            None => out.push(rec),
        }
    }
    Ok(out)
}

pub fn write_records_csv(path: &Path, records: &[RunRecord]) -> Result<(), StoreError> {
    let to_io = |e: csv::Error| io::Error::other(e.to_string());
    write_atomic(path, |f| {
        let mut w = csv::Writer::from_writer(f);
        w.write_record(RECORD_CSV_COLUMNS).map_err(to_io)?;
        for r in records {
            w.write_record(r.csv_row()).map_err(to_io)?;
        }
        w.flush()
    })
}
