//! Measurement campaign: every (codec, sequence, QP) cell is encoded,
//! decoded, scored and energy-measured, and persisted as it completes.

use std::env;
use std::fs::{self, File, TryLockError};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, PowerSource};
use super::store::{EnergySummary, RecordKey, RecordStore, RunRecord, RunStatus};
use super::BenchError;
use crate::codec::{probe_version, resolve_binary, run_decode, run_encode, CodecSpec, RunLayout, SequenceMeta};
use crate::energy::{measure_idle, unix_now, EnergyError, IdleBaseline, Phase, SessionMeter};
use crate::power::{PowerProvider, PowercapProvider, ReplayProvider, SyntheticProvider};
use crate::quality::{sequence_psnr, vmaf_score, DEFAULT_PSNR_CAP_DB};

pub const ENV_LOCK: &str = "CODEC_ENERGY_LOCK";

/// Default measurement lock path (overridable with `CODEC_ENERGY_LOCK`).
pub fn default_lock_path() -> PathBuf {
    env::var_os(ENV_LOCK)
        .map(PathBuf::from)
        .unwrap_or_else(|| env::temp_dir().join("codec-energy-measure.lock"))
}

/// Exclusive per-machine measurement lock, released on drop.
#[derive(Debug)]
pub struct MeasurementLock {
    _file: File,
}

impl MeasurementLock {
    pub fn acquire(path: &Path) -> Result<Self, BenchError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(BenchError::io(dir))?;
        }
        let file = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path)
            .map_err(BenchError::io(path))?;
        match file.try_lock() {
            Ok(()) => Ok(MeasurementLock { _file: file }),
            Err(TryLockError::WouldBlock) => Err(BenchError::LockHeld(path.to_path_buf())),
            Err(TryLockError::Error(e)) => Err(BenchError::io(path)(e)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HostInfo {
    pub cpu_model: String,
    pub cores: usize,
    pub domains: Vec<String>,
}

impl HostInfo {
    pub fn detect(provider: &dyn PowerProvider) -> Self {
        let cpu_model = fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split_once(':'))
                    .map(|(_, v)| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        let cores = thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let domains = provider
            .domains()
            .iter()
            .map(|d| format!("{}:{}", d.kind, d.name))
            .collect();
        HostInfo {
            cpu_model,
            cores,
            domains,
        }
    }

    pub fn fingerprint(&self) -> String {
        format!("{} | {} cores | {}", self.cpu_model, self.cores, self.domains.join(","))
    }

    /// Short stable hash used for baseline file names.
    pub fn fingerprint_id(&self) -> String {
        hex::encode(&Sha256::digest(self.fingerprint().as_bytes())[..8])
    }
}

/// Opens the power source for one measurement session. `cell` selects a
/// per-cell replay trace; `None` opens the idle source.
pub fn open_provider(
    cfg: &ExperimentConfig,
    cell: Option<(&CodecSpec, &SequenceMeta, u32, Phase)>,
) -> Result<Box<dyn PowerProvider>, BenchError> {
    Ok(match &cfg.power.source {
        PowerSource::Powercap { root } => Box::new(PowercapProvider::open(root)?),
        PowerSource::Replay { dir } => {
            let path = match cell {
                None => dir.join("idle.csv"),
                Some((spec, seq, qp, phase)) => replay_trace_path(dir, &spec.id, seq, qp, phase)
                    .ok_or_else(|| BenchError::ReplayTraceMissing {
                        dir: dir.clone(),
                        cell: format!("{}/{}/{}/qp{qp}/{phase}", spec.id, seq.class_label, seq.name),
                    })?,
            };
            Box::new(ReplayProvider::from_csv(&path)?)
        }
        PowerSource::Synthetic {
            active_w,
            idle_w,
            window_ms,
        } => match cell {
            None => Box::new(SyntheticProvider::constant(*idle_w)),
            Some(_) => Box::new(SyntheticProvider::constant(*active_w).with_limit_ms(*window_ms)),
        },
    })
}

/// Most specific existing replay file for a cell:
/// `<codec>__<class>__<seq>__<qp>__<phase>.csv`, `<codec>__<seq>__<qp>__<phase>.csv`,
/// `<codec>__<phase>.csv`, then `<phase>.csv`.
pub fn replay_trace_path(dir: &Path, codec: &str, seq: &SequenceMeta, qp: u32, phase: Phase) -> Option<PathBuf> {
    [
        format!("{codec}__{}__{}__{qp}__{phase}.csv", seq.class_label, seq.name),
        format!("{codec}__{}__{qp}__{phase}.csv", seq.name),
        format!("{codec}__{phase}.csv"),
        format!("{phase}.csv"),
    ]
    .into_iter()
    .map(|n| dir.join(n))
    .find(|p| p.is_file())
}

fn is_virtual(cfg: &ExperimentConfig) -> bool {
    !matches!(cfg.power.source, PowerSource::Powercap { .. })
}

pub fn baseline_path(cfg: &ExperimentConfig, host: &HostInfo) -> PathBuf {
    cfg.baseline_store.join(format!("{}.json", host.fingerprint_id()))
}

/// Measures idle power and stores it under the host's fingerprint. The idle
/// trace is saved next to it.
pub fn measure_and_store_idle(cfg: &ExperimentConfig, host: &HostInfo) -> Result<IdleBaseline, BenchError> {
    let mut provider = open_provider(cfg, None)?;
    let (mut baseline, trace) = measure_idle(
        provider.as_mut(),
        cfg.power.idle_s,
        cfg.power.idle_min_s,
        cfg.power.interval_ms,
    )?;
    baseline.host_fingerprint = host.fingerprint();
    let path = baseline_path(cfg, host);
    fs::create_dir_all(&cfg.baseline_store).map_err(BenchError::io(&cfg.baseline_store))?;
    let trace_path = cfg.baseline_store.join(format!("{}.csv", baseline.trace_ref));
    trace.write_csv(&trace_path).map_err(BenchError::io(&trace_path))?;
    baseline.save(&path).map_err(BenchError::io(&path))?;
    Ok(baseline)
}

/// Returns a fresh stored baseline, measuring one when allowed. Virtual power
/// sources are always re-measured since that costs nothing.
pub fn ensure_baseline(cfg: &ExperimentConfig, host: &HostInfo, measure: bool) -> Result<IdleBaseline, BenchError> {
    if measure || is_virtual(cfg) {
        return measure_and_store_idle(cfg, host);
    }
    let path = baseline_path(cfg, host);
    let baseline = IdleBaseline::load(&path).map_err(|_| BenchError::BaselineMissing(path.clone()))?;
    baseline.check_fresh(&host.fingerprint(), cfg.power.baseline_max_age_s, unix_now())?;
    Ok(baseline)
}

#[derive(Debug, Clone)]
pub struct CampaignOptions {
    pub resume: bool,
    pub force_merge: bool,
    /// Measure a new idle baseline before starting.
    pub measure_idle: bool,
    /// Stop after this many new cells (for staged runs).
    pub limit: Option<usize>,
    pub lock_path: PathBuf,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        CampaignOptions {
            resume: false,
            force_merge: false,
            measure_idle: false,
            limit: None,
            lock_path: default_lock_path(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CampaignSummary {
    pub planned: usize,
    pub skipped: usize,
    pub attempted: usize,
    pub succeeded: usize,
    pub failed: usize,
}

/// Cell keys in execution order (per-codec batches), with their rung index.
pub fn planned_cells(cfg: &ExperimentConfig) -> Vec<(RecordKey, usize)> {
    let mut out = Vec::new();
    for spec in &cfg.codecs {
        for seq in &cfg.sequences {
            for (rung, &qp) in cfg.qps_for(spec).iter().enumerate() {
                out.push((
                    RecordKey {
                        codec: spec.id.clone(),
                        class: seq.class_label,
                        sequence: seq.name.clone(),
                        qp,
                    },
                    rung,
                ));
            }
        }
    }
    out
}

pub fn campaign(cfg: &ExperimentConfig, opts: &CampaignOptions) -> Result<CampaignSummary, BenchError> {
    let _lock = MeasurementLock::acquire(&opts.lock_path)?;
    let host = {
        let probe = open_provider(cfg, None)?;
        HostInfo::detect(probe.as_ref())
    };
    let fingerprint = host.fingerprint();

    let mut store = RecordStore::open(&cfg.workdir)?;
    if !store.is_empty() && !opts.resume {
        return Err(BenchError::ExistingRecords(RecordStore::jsonl_path(&cfg.workdir)));
    }
    if !opts.force_merge {
        if let Some(r) = store.records().iter().find(|r| r.host_fingerprint != fingerprint) {
            return Err(BenchError::FingerprintMismatch {
                expected: fingerprint,
                found: r.host_fingerprint.clone(),
            });
        }
    }
    let baseline = ensure_baseline(cfg, &host, opts.measure_idle)?;

    let cells = planned_cells(cfg);
    let mut summary = CampaignSummary {
        planned: cells.len(),
        ..Default::default()
    };
    let mut batch_started = false;
    'codecs: for spec in &cfg.codecs {
        let version = resolve_binary(&spec.encoder_binary().unwrap_or_default())
            .map(|b| probe_version(&b.to_string_lossy(), &spec.version_args))
            .unwrap_or_default();
        let mut pending = Vec::new();
        for seq in &cfg.sequences {
            for (rung, &qp) in cfg.qps_for(spec).iter().enumerate() {
                let key = RecordKey {
                    codec: spec.id.clone(),
                    class: seq.class_label,
                    sequence: seq.name.clone(),
                    qp,
                };
                if store.is_complete(&key) {
                    summary.skipped += 1;
                } else {
                    pending.push((seq, rung, qp, key));
                }
            }
        }
        if pending.is_empty() {
            continue;
        }
        if batch_started && cfg.cooldown_s > 0.0 {
            log::info!("cooling down for {} s", cfg.cooldown_s);
            thread::sleep(Duration::from_secs_f64(cfg.cooldown_s));
        }
        batch_started = true;
        for (seq, rung, qp, key) in pending {
            if opts.limit.is_some_and(|l| summary.attempted >= l) {
                break 'codecs;
            }
            summary.attempted += 1;
            log::info!("measuring {key}");
            let started = unix_now();
            let rec = match run_cell(cfg, spec, seq, qp, &baseline) {
                Ok(mut rec) => {
                    rec.rung = rung;
                    rec.codec_version = version.clone();
                    rec.host_fingerprint = fingerprint.clone();
                    rec.started_at = started;
                    summary.succeeded += 1;
                    rec
                }
                Err(e) => {
                    log::warn!("{key} failed: {e}");
                    summary.failed += 1;
                    let mut rec = RunRecord::failed(&key, rung, e, &fingerprint, started);
                    rec.codec_version = version.clone();
                    rec
                }
            };
            store.upsert(rec)?;
        }
    }
    Ok(summary)
}

fn meter<'a>(
    provider: &'a mut dyn PowerProvider,
    baseline: &'a IdleBaseline,
    interval_ms: u64,
    window_ms: Option<f64>,
) -> SessionMeter<'a> {
    let m = SessionMeter::new(provider, baseline, interval_ms);
    match window_ms {
        Some(ms) => m.with_virtual_window(ms),
        None => m,
    }
}

/// Measures one cell. Errors are returned as messages so the campaign can
/// record them and continue.
fn run_cell(
    cfg: &ExperimentConfig,
    spec: &CodecSpec,
    seq: &SequenceMeta,
    qp: u32,
    baseline: &IdleBaseline,
) -> Result<RunRecord, String> {
    let layout = RunLayout::new(&cfg.workdir, spec, seq, qp);
    let window = match cfg.power.source {
        PowerSource::Synthetic { window_ms, .. } => Some(window_ms),
        _ => None,
    };

    let mut enc_provider = open_provider(cfg, Some((spec, seq, qp, Phase::Encode))).map_err(|e| e.to_string())?;
    let (enc, enc_stat) = {
        let mut meter = meter(enc_provider.as_mut(), baseline, cfg.power.interval_ms, window);
        run_encode(spec, seq, qp, &layout, &mut meter, &cfg.encode_policy).map_err(|e| e.to_string())?
    };
    let mut dec_provider = open_provider(cfg, Some((spec, seq, qp, Phase::Decode))).map_err(|e| e.to_string())?;
    let (dec, dec_stat) = {
        let mut meter = meter(dec_provider.as_mut(), baseline, cfg.power.interval_ms, window);
        run_decode(
            spec,
            seq,
            &enc.bitstream_path,
            &layout,
            &mut meter,
            &cfg.decode_policy,
            cfg.decode_inner_loops,
        )
        .map_err(|e| e.to_string())?
    };

    let scored = (|| {
        let q = sequence_psnr(&seq.path, &dec.decoded_path, seq, cfg.psnr_mode, DEFAULT_PSNR_CAP_DB)?;
        let vmaf = match &cfg.vmaf {
            Some(tool) => Some(vmaf_score(tool, &seq.path, &dec.decoded_path, seq, &layout.log_dir.join("vmaf.json"))?.pooled_mean),
            None => None,
        };
        Ok::<_, crate::quality::QualityError>((q, vmaf))
    })();
    let _ = fs::remove_file(&dec.decoded_path);
    let (q, vmaf) = scored.map_err(|e| e.to_string())?;

    Ok(RunRecord {
        codec: spec.id.clone(),
        codec_version: String::new(),
        class: seq.class_label,
        sequence: seq.name.clone(),
        rung: 0,
        qp,
        status: RunStatus::Ok,
        error: None,
        bitrate_kbps: Some(enc.bitrate_kbps),
        bitstream_bytes: Some(enc.bitstream_bytes),
        bitstream_sha256: Some(enc.bitstream_sha256.clone()),
        psnr_y: Some(q.psnr_y),
        psnr_u: Some(q.psnr_u),
        psnr_v: Some(q.psnr_v),
        psnr_yuv: Some(q.psnr_yuv),
        vmaf,
        enc_energy: Some(EnergySummary::from(&enc_stat)),
        dec_energy: Some(EnergySummary::from(&dec_stat)),
        enc_wall_s: Some(enc.encode_wall_s),
        dec_wall_s: Some(dec.decode_wall_s),
        host_fingerprint: String::new(),
        started_at: 0,
        finished_at: unix_now(),
    })
}

impl From<EnergyError> for BenchError {
    fn from(e: EnergyError) -> Self {
        BenchError::Energy(e)
    }
}
