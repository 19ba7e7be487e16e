//! Power acquisition from CPU energy counters.
//!
//! A [`PowerProvider`] exposes cumulative microjoule counters per domain. The
//! sampler ([`sample_session`]) turns consecutive counter readings into a
//! [`PowerTrace`] of interval-average wattages. Three providers exist: the
//! powercap filesystem ([`PowercapProvider`]), a synthetic generator
//! ([`SyntheticProvider`]) and a CSV trace replayer ([`ReplayProvider`]).

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default powercap root on Linux hosts.
pub const DEFAULT_POWERCAP_ROOT: &str = "/sys/class/powercap/intel-rapl";

/// Nominal sampling period.
pub const DEFAULT_INTERVAL_MS: u64 = 100;

/// Smallest accepted sampling period.
pub const MIN_INTERVAL_MS: u64 = 10;

/// Gaps longer than this multiple of the nominal interval are flagged.
pub const GAP_FACTOR: f64 = 5.0;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("permission denied reading {path}: rerun with privileges to access energy counters")]
    PermissionDenied { path: PathBuf },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed counter value in {path}: {value:?}")]
    Malformed { path: PathBuf, value: String },
    #[error("counter domains differ: {prev} vs {next}")]
    DomainMismatch { prev: DomainKind, next: DomainKind },
    #[error("sampling interval {0} ms is below the {MIN_INTERVAL_MS} ms minimum")]
    IntervalTooShort(u64),
    #[error("trace needs at least 2 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("provider has no package energy domain")]
    NoPackageDomain,
    #[error("provider failed after {} samples: {message}", partial.samples.len())]
    ProviderFailure {
        message: String,
        partial: Box<PowerTrace>,
    },
    #[error("replay file {path}: {message}")]
    Replay { path: PathBuf, message: String },
}

/// Energy domain exposed by the platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Package,
    Dram,
    /// Whole-platform domain. Exposed, never added to `total_w`.
    Psys,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainKind::Package => "package",
            DomainKind::Dram => "dram",
            DomainKind::Psys => "psys",
        })
    }
}

/// A discovered counter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainInfo {
    pub kind: DomainKind,
    /// Name as reported by the platform, e.g. `package-0`.
    pub name: String,
    pub max_range_uj: u64,
}

/// One raw counter value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterReading {
    pub energy_uj: u64,
    pub max_range_uj: u64,
    pub domain: DomainKind,
    /// Provider clock, microseconds.
    pub t_us: u64,
}

impl CounterReading {
    pub fn t_ms(&self) -> f64 {
        self.t_us as f64 / 1000.0
    }
}

/// Energy consumed between two readings of the same counter, correcting for
/// at most one wraparound.
pub fn counter_delta(prev: &CounterReading, next: &CounterReading) -> Result<u64, ProbeError> {
    if prev.domain != next.domain {
        return Err(ProbeError::DomainMismatch {
            prev: prev.domain,
            next: next.domain,
        });
    }
    if next.energy_uj >= prev.energy_uj {
        Ok(next.energy_uj - prev.energy_uj)
    } else {
        Ok(prev.max_range_uj.saturating_sub(prev.energy_uj) + next.energy_uj)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    /// Milliseconds since sampler start (interval midpoint for sampled traces).
    pub t_ms: f64,
    pub pkg_w: f64,
    pub dram_w: f64,
    pub total_w: f64,
}

impl PowerSample {
    pub fn new(t_ms: f64, pkg_w: f64, dram_w: f64) -> Self {
        PowerSample {
            t_ms,
            pkg_w,
            dram_w,
            total_w: pkg_w + dram_w,
        }
    }
}

/// Immutable, validated sequence of power samples.
///
/// The trace covers the window `[start_ms, end_ms]`. Hand-built traces use the
/// first and last sample timestamps as the window; sampled traces place each
/// sample at the midpoint of its measurement interval and carry the full
/// counter window so integration covers every interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTrace {
    pub samples: Vec<PowerSample>,
    pub interval_ms: f64,
    /// Wall-clock start, seconds since the Unix epoch.
    pub origin: f64,
    pub start_ms: f64,
    pub end_ms: f64,
    /// `(from_ms, to_ms)` pairs where consecutive samples are more than
    /// [`GAP_FACTOR`] intervals apart.
    pub gaps: Vec<(f64, f64)>,
    /// True when the provider had no DRAM domain.
    pub package_only: bool,
}

impl PowerTrace {
    /// Builds a trace spanning its first to last sample.
    pub fn new(samples: Vec<PowerSample>, interval_ms: f64) -> Result<Self, ProbeError> {
        let (start, end) = match (samples.first(), samples.last()) {
            (Some(a), Some(b)) => (a.t_ms, b.t_ms),
            _ => (0.0, 0.0),
        };
        Self::with_window(samples, interval_ms, start, end)
    }

    pub fn with_window(
        samples: Vec<PowerSample>,
        interval_ms: f64,
        start_ms: f64,
        end_ms: f64,
    ) -> Result<Self, ProbeError> {
        if !(interval_ms > 0.0) || !interval_ms.is_finite() {
            return Err(ProbeError::InvalidTrace(format!(
                "interval_ms must be positive, got {interval_ms}"
            )));
        }
        for s in &samples {
            for (label, v) in [("pkg_w", s.pkg_w), ("dram_w", s.dram_w), ("t_ms", s.t_ms)] {
                if !v.is_finite() {
                    return Err(ProbeError::InvalidTrace(format!("{label} not finite at t={}", s.t_ms)));
                }
            }
            if s.pkg_w < 0.0 || s.dram_w < 0.0 {
                return Err(ProbeError::InvalidTrace(format!(
                    "negative power at t={} ms",
                    s.t_ms
                )));
            }
        }
        let mut gaps = Vec::new();
        for w in samples.windows(2) {
            let dt = w[1].t_ms - w[0].t_ms;
            if dt <= 0.0 {
                return Err(ProbeError::InvalidTrace(format!(
                    "timestamps not strictly increasing at t={} ms",
                    w[1].t_ms
                )));
            }
            if dt > GAP_FACTOR * interval_ms {
                gaps.push((w[0].t_ms, w[1].t_ms));
            }
        }
        if let (Some(first), Some(last)) = (samples.first(), samples.last()) {
            if start_ms > first.t_ms || end_ms < last.t_ms {
                return Err(ProbeError::InvalidTrace(format!(
                    "window [{start_ms}, {end_ms}] does not contain all samples"
                )));
            }
        }
        Ok(PowerTrace {
            samples,
            interval_ms,
            origin: 0.0,
            start_ms,
            end_ms,
            gaps,
            package_only: false,
        })
    }

    pub fn duration_s(&self) -> f64 {
        (self.end_ms - self.start_ms) / 1000.0
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Reads a `t_ms,pkg_w,dram_w` CSV trace.
    pub fn from_csv_path(path: &Path, interval_ms: f64) -> Result<Self, ProbeError> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| ProbeError::Replay {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let headers = rdr
            .headers()
            .map_err(|e| ProbeError::Replay {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["t_ms", "pkg_w", "dram_w"] {
            return Err(ProbeError::Replay {
                path: path.to_path_buf(),
                message: format!("expected header t_ms,pkg_w,dram_w, got {:?}", headers),
            });
        }
        let mut samples = Vec::new();
        for row in rdr.deserialize::<(f64, f64, f64)>() {
            let (t, p, d) = row.map_err(|e| ProbeError::Replay {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            samples.push(PowerSample::new(t, p, d));
        }
        Self::new(samples, interval_ms)
    }

    pub fn write_csv(&self, path: &Path) -> io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t_ms", "pkg_w", "dram_w"])?;
        for s in &self.samples {
            w.serialize((s.t_ms, s.pkg_w, s.dram_w))?;
        }
        w.flush()
    }
}

/// Clock a provider runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockKind {
    /// Real time; sampling runs concurrently with the workload.
    Wall,
    /// Simulated time advanced by `wait`; independent of workload duration.
    Virtual,
}

/// Counter snapshot across all domains at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t_us: u64,
    pub readings: Vec<CounterReading>,
}

/// Source of cumulative energy counters.
pub trait PowerProvider: Send {
    fn domains(&self) -> Vec<DomainInfo>;

    fn clock(&self) -> ClockKind;

    /// Reads every counter. `Ok(None)` means the provider is exhausted.
    fn read(&mut self) -> Result<Option<Snapshot>, ProbeError>;

    /// Waits up to `ms` milliseconds, returning early if `stop` fires.
    fn wait(&mut self, ms: u64, stop: &StopSignal);

    /// Restarts the provider's clock at zero (used between sessions).
    fn rewind(&mut self) {}
}

/// Stop condition for a sampling session.
#[derive(Debug, Clone, Default)]
pub struct StopSignal {
    flag: Arc<AtomicBool>,
    deadline_ms: Option<f64>,
}

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fires once the session has covered `ms` milliseconds of provider time.
    pub fn after_ms(ms: f64) -> Self {
        StopSignal {
            flag: Arc::default(),
            deadline_ms: Some(ms),
        }
    }

    pub fn stop(&self) {
        self.flag.store(true, Ordering::SeqCst);
    }

    pub fn is_stopped(&self) -> bool {
        self.flag.load(Ordering::SeqCst)
    }

    pub fn deadline_ms(&self) -> Option<f64> {
        self.deadline_ms
    }

    fn reached(&self, elapsed_ms: f64) -> bool {
        self.is_stopped() || self.deadline_ms.is_some_and(|d| elapsed_ms >= d - 1e-9)
    }
}

fn sum_delta(
    prev: &Snapshot,
    next: &Snapshot,
    kind: DomainKind,
) -> Result<u64, ProbeError> {
    let mut total = 0u64;
    for (i, p) in prev.readings.iter().enumerate() {
        if p.domain != kind {
            continue;
        }
        let n = next.readings.get(i).ok_or_else(|| ProbeError::InvalidTrace(
            "provider changed its domain set mid-session".into(),
        ))?;
        total += counter_delta(p, n)?;
    }
    Ok(total)
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Samples `provider` every `interval_ms` until `stop` fires or the provider is
/// exhausted.
///
/// Each sample's wattage is the integer microjoule delta divided by the
/// measured elapsed time of its interval. Psys is never included in
/// `total_w`.
pub fn sample_session(
    provider: &mut dyn PowerProvider,
    interval_ms: u64,
    stop: &StopSignal,
) -> Result<PowerTrace, ProbeError> {
    if interval_ms < MIN_INTERVAL_MS {
        return Err(ProbeError::IntervalTooShort(interval_ms));
    }
    let domains = provider.domains();
    if !domains.iter().any(|d| d.kind == DomainKind::Package) {
        return Err(ProbeError::NoPackageDomain);
    }
    let package_only = !domains.iter().any(|d| d.kind == DomainKind::Dram);
    let origin = unix_now();

    let partial = |samples: &[PowerSample], start: f64, end: f64| {
        let mut t = PowerTrace {
            samples: samples.to_vec(),
            interval_ms: interval_ms as f64,
            origin,
            start_ms: start,
            end_ms: end,
            gaps: Vec::new(),
            package_only,
        };
        if let Ok(v) = PowerTrace::with_window(t.samples.clone(), t.interval_ms, start, end) {
            t.gaps = v.gaps;
        }
        Box::new(t)
    };

    let first = match provider.read()? {
        Some(s) => s,
        None => return Err(ProbeError::InsufficientSamples(0)),
    };
    let t0 = first.t_us;
    let mut prev = first;
    let mut samples: Vec<PowerSample> = Vec::new();
    let mut end_us = t0;

    loop {
        let elapsed_ms = (prev.t_us - t0) as f64 / 1000.0;
        if stop.reached(elapsed_ms) {
            break;
        }
        let mut wait_ms = interval_ms;
        if let Some(deadline) = stop.deadline_ms() {
            let remaining = (deadline - elapsed_ms).ceil().max(1.0) as u64;
            wait_ms = wait_ms.min(remaining);
        }
        provider.wait(wait_ms, stop);
        let next = match provider.read() {
            Ok(Some(s)) => s,
            Ok(None) => break,
            Err(e) => {
                let end = (prev.t_us - t0) as f64 / 1000.0;
                return Err(ProbeError::ProviderFailure {
                    message: e.to_string(),
                    partial: partial(&samples, 0.0, end),
                });
            }
        };
        if next.t_us <= prev.t_us {
            continue;
        }
        let (pkg_uj, dram_uj) = match (
            sum_delta(&prev, &next, DomainKind::Package),
            sum_delta(&prev, &next, DomainKind::Dram),
        ) {
            (Ok(p), Ok(d)) => (p, d),
            (Err(e), _) | (_, Err(e)) => {
                let end = (prev.t_us - t0) as f64 / 1000.0;
                return Err(ProbeError::ProviderFailure {
                    message: e.to_string(),
                    partial: partial(&samples, 0.0, end),
                });
            }
        };
        let dt_us = next.t_us - prev.t_us;
        // µJ / µs = W
        let pkg_w = pkg_uj as f64 / dt_us as f64;
        let dram_w = dram_uj as f64 / dt_us as f64;
        let mid_ms = ((prev.t_us - t0) as f64 + dt_us as f64 / 2.0) / 1000.0;
        samples.push(PowerSample::new(mid_ms, pkg_w, dram_w));
        end_us = next.t_us;
        prev = next;
    }

    if samples.len() < 2 {
        return Err(ProbeError::InsufficientSamples(samples.len()));
    }
    let end_ms = (end_us - t0) as f64 / 1000.0;
    let mut trace = PowerTrace::with_window(samples, interval_ms as f64, 0.0, end_ms)?;
    trace.origin = origin;
    trace.package_only = package_only;
    Ok(trace)
}

// ---------------------------------------------------------------------------
// powercap filesystem
// ---------------------------------------------------------------------------

fn read_trimmed(path: &Path) -> Result<String, ProbeError> {
    fs::read_to_string(path)
        .map(|s| s.trim().to_string())
        .map_err(|e| map_io(path, e))
}

pub(crate) fn map_io(path: &Path, e: io::Error) -> ProbeError {
    if e.kind() == io::ErrorKind::PermissionDenied {
        ProbeError::PermissionDenied {
            path: path.to_path_buf(),
        }
    } else {
        ProbeError::Io {
            path: path.to_path_buf(),
            source: e,
        }
    }
}

fn read_u64(path: &Path) -> Result<u64, ProbeError> {
    let s = read_trimmed(path)?;
    s.parse().map_err(|_| ProbeError::Malformed {
        path: path.to_path_buf(),
        value: s,
    })
}

fn classify(name: &str) -> Option<DomainKind> {
    if name.starts_with("package") {
        Some(DomainKind::Package)
    } else if name == "dram" {
        Some(DomainKind::Dram)
    } else if name == "psys" {
        Some(DomainKind::Psys)
    } else {
        // core, uncore: subsets of the package domain
        None
    }
}

#[derive(Debug, Clone)]
struct PowercapZone {
    info: DomainInfo,
    energy_path: PathBuf,
}

fn discover_zones(root: &Path) -> Result<Vec<PowercapZone>, ProbeError> {
    let mut zones = Vec::new();
    let mut stack = vec![(root.to_path_buf(), 0usize)];
    while let Some((dir, depth)) = stack.pop() {
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
            Err(e) => return Err(map_io(&dir, e)),
        };
        let mut children: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("intel-rapl:") || n.starts_with("amd-rapl:"))
            })
            .collect();
        children.sort();
        for child in children.into_iter().rev() {
            stack.push((child, depth + 1));
        }
        if depth == 0 {
            continue;
        }
        let name_path = dir.join("name");
        if !name_path.exists() {
            continue;
        }
        let name = read_trimmed(&name_path)?;
        let Some(kind) = classify(&name) else { continue };
        let energy_path = dir.join("energy_uj");
        // probe readability up front so permission problems surface at discovery
        read_u64(&energy_path)?;
        let max_range_uj = read_u64(&dir.join("max_energy_range_uj"))?;
        zones.push(PowercapZone {
            info: DomainInfo {
                kind,
                name,
                max_range_uj,
            },
            energy_path,
        });
    }
    zones.sort_by(|a, b| (a.info.kind, &a.info.name).cmp(&(b.info.kind, &b.info.name)));
    Ok(zones)
}

/// Enumerates package, DRAM and psys counters under a powercap root. Returns
/// an empty list when the root does not exist.
pub fn list_domains(root: &Path) -> Result<Vec<DomainInfo>, ProbeError> {
    Ok(discover_zones(root)?.into_iter().map(|z| z.info).collect())
}

/// Reads live counters from the powercap filesystem.
#[derive(Debug)]
pub struct PowercapProvider {
    zones: Vec<PowercapZone>,
    start: Instant,
}

impl PowercapProvider {
    pub fn open(root: &Path) -> Result<Self, ProbeError> {
        let zones = discover_zones(root)?;
        if !zones.iter().any(|z| z.info.kind == DomainKind::Package) {
            return Err(ProbeError::NoPackageDomain);
        }
        Ok(PowercapProvider {
            zones,
            start: Instant::now(),
        })
    }
}

impl PowerProvider for PowercapProvider {
    fn domains(&self) -> Vec<DomainInfo> {
        self.zones.iter().map(|z| z.info.clone()).collect()
    }

    fn clock(&self) -> ClockKind {
        ClockKind::Wall
    }

    fn read(&mut self) -> Result<Option<Snapshot>, ProbeError> {
        let t_us = self.start.elapsed().as_micros() as u64;
        let readings = self
            .zones
            .iter()
            .map(|z| {
                Ok(CounterReading {
                    energy_uj: read_u64(&z.energy_path)?,
                    max_range_uj: z.info.max_range_uj,
                    domain: z.info.kind,
                    t_us,
                })
            })
            .collect::<Result<Vec<_>, ProbeError>>()?;
        Ok(Some(Snapshot { t_us, readings }))
    }

    fn wait(&mut self, ms: u64, stop: &StopSignal) {
        let until = Instant::now() + Duration::from_millis(ms);
        while !stop.is_stopped() {
            let now = Instant::now();
            if now >= until {
                break;
            }
            std::thread::sleep((until - now).min(Duration::from_millis(1)));
        }
    }
}

// ---------------------------------------------------------------------------
// synthetic and replay providers
// ---------------------------------------------------------------------------

/// Analytic power program for the synthetic provider. Values are total
/// package watts as a function of time in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SyntheticProgram {
    Constant { watts: f64 },
    /// Linear from `from_w` at t=0 to `to_w` at `duration_ms`, then held.
    Ramp { from_w: f64, to_w: f64, duration_ms: f64 },
    /// `before_w` until `at_ms`, `after_w` afterwards.
    Step { before_w: f64, after_w: f64, at_ms: f64 },
    /// Square wave: `a_w` for `half_period_ms`, then `b_w`, repeating.
    Alternating { a_w: f64, b_w: f64, half_period_ms: f64 },
}

impl SyntheticProgram {
    pub fn power_at(&self, t_ms: f64) -> f64 {
        match *self {
            SyntheticProgram::Constant { watts } => watts,
            SyntheticProgram::Ramp { from_w, to_w, duration_ms } => {
                let t = t_ms.clamp(0.0, duration_ms);
                from_w + (to_w - from_w) * t / duration_ms
            }
            SyntheticProgram::Step { before_w, after_w, at_ms } => {
                if t_ms < at_ms {
                    before_w
                } else {
                    after_w
                }
            }
            SyntheticProgram::Alternating { a_w, b_w, half_period_ms } => {
                let k = (t_ms / half_period_ms).floor() as i64;
                if k % 2 == 0 {
                    a_w
                } else {
                    b_w
                }
            }
        }
    }

    /// Energy in joules over `[0, t_ms]`.
    pub fn energy_j(&self, t_ms: f64) -> f64 {
        let t_ms = t_ms.max(0.0);
        let mj = match *self {
            SyntheticProgram::Constant { watts } => watts * t_ms,
            SyntheticProgram::Ramp { from_w, to_w, duration_ms } => {
                let t = t_ms.min(duration_ms);
                let ramp = from_w * t + (to_w - from_w) * t * t / (2.0 * duration_ms);
                ramp + (t_ms - t) * to_w
            }
            SyntheticProgram::Step { before_w, after_w, at_ms } => {
                if t_ms <= at_ms {
                    before_w * t_ms
                } else {
                    before_w * at_ms + after_w * (t_ms - at_ms)
                }
            }
            SyntheticProgram::Alternating { a_w, b_w, half_period_ms } => {
                let full = (t_ms / (2.0 * half_period_ms)).floor();
                let rem = t_ms - full * 2.0 * half_period_ms;
                let mut e = full * (a_w + b_w) * half_period_ms;
                e += a_w * rem.min(half_period_ms);
                e += b_w * (rem - half_period_ms).max(0.0);
                e
            }
        };
        mj / 1000.0
    }
}

/// Counter state shared by the virtual-clock providers.
#[derive(Debug, Clone)]
struct VirtualCounters {
    t_us: u64,
    max_range_uj: u64,
    dram: bool,
}

impl VirtualCounters {
    /// Moves the clock forward, stopping once at `end_us` so the final
    /// partial interval is still observed.
    fn advance(&mut self, ms: u64, end_us: Option<u64>) {
        let next = self.t_us + ms * 1000;
        self.t_us = match end_us {
            Some(end) if self.t_us < end && next > end => end,
            _ => next,
        };
    }

    fn wrap(&self, cumulative_uj: u64) -> u64 {
        if self.max_range_uj == 0 {
            cumulative_uj
        } else {
            cumulative_uj % self.max_range_uj
        }
    }

    fn domains(&self) -> Vec<DomainInfo> {
        let mut d = vec![DomainInfo {
            kind: DomainKind::Package,
            name: "package-0".into(),
            max_range_uj: self.max_range_uj,
        }];
        if self.dram {
            d.push(DomainInfo {
                kind: DomainKind::Dram,
                name: "dram".into(),
                max_range_uj: self.max_range_uj,
            });
        }
        d
    }

    fn snapshot(&self, pkg_uj: u64, dram_uj: u64) -> Snapshot {
        let mut readings = vec![CounterReading {
            energy_uj: self.wrap(pkg_uj),
            max_range_uj: self.max_range_uj,
            domain: DomainKind::Package,
            t_us: self.t_us,
        }];
        if self.dram {
            readings.push(CounterReading {
                energy_uj: self.wrap(dram_uj),
                max_range_uj: self.max_range_uj,
                domain: DomainKind::Dram,
                t_us: self.t_us,
            });
        }
        Snapshot {
            t_us: self.t_us,
            readings,
        }
    }
}

/// Typical RAPL package counter range (2^32 µJ).
pub const DEFAULT_SYNTHETIC_RANGE_UJ: u64 = 1 << 32;

/// Deterministic provider driven by an analytic program on a virtual clock.
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    pkg: SyntheticProgram,
    dram: Option<SyntheticProgram>,
    counters: VirtualCounters,
    /// Optional hard end of the program, after which reads report exhaustion.
    limit_ms: Option<f64>,
}

impl SyntheticProvider {
    pub fn new(pkg: SyntheticProgram) -> Self {
        SyntheticProvider {
            pkg,
            dram: None,
            counters: VirtualCounters {
                t_us: 0,
                max_range_uj: DEFAULT_SYNTHETIC_RANGE_UJ,
                dram: false,
            },
            limit_ms: None,
        }
    }

    pub fn constant(watts: f64) -> Self {
        Self::new(SyntheticProgram::Constant { watts })
    }

    pub fn with_dram(mut self, dram: SyntheticProgram) -> Self {
        self.dram = Some(dram);
        self.counters.dram = true;
        self
    }

    pub fn with_max_range(mut self, max_range_uj: u64) -> Self {
        self.counters.max_range_uj = max_range_uj;
        self
    }

    pub fn with_limit_ms(mut self, limit_ms: f64) -> Self {
        self.limit_ms = Some(limit_ms);
        self
    }

    /// Starts the virtual clock at `t_ms` (counters start partway through the
    /// program, useful for wraparound tests).
    pub fn starting_at(mut self, t_ms: f64) -> Self {
        self.counters.t_us = (t_ms * 1000.0).round() as u64;
        self
    }
}

impl PowerProvider for SyntheticProvider {
    fn domains(&self) -> Vec<DomainInfo> {
        self.counters.domains()
    }

    fn clock(&self) -> ClockKind {
        ClockKind::Virtual
    }

    fn read(&mut self) -> Result<Option<Snapshot>, ProbeError> {
        let t_ms = self.counters.t_us as f64 / 1000.0;
        if self.limit_ms.is_some_and(|l| t_ms > l + 1e-9) {
            return Ok(None);
        }
        let to_uj = |j: f64| (j * 1e6).round().max(0.0) as u64;
        let pkg = to_uj(self.pkg.energy_j(t_ms));
        let dram = self.dram.as_ref().map_or(0, |d| to_uj(d.energy_j(t_ms)));
        Ok(Some(self.counters.snapshot(pkg, dram)))
    }

    fn wait(&mut self, ms: u64, _stop: &StopSignal) {
        let end_us = self.limit_ms.map(|l| (l * 1000.0).round() as u64);
        self.counters.advance(ms, end_us);
    }

    fn rewind(&mut self) {
        self.counters.t_us = 0;
    }
}

/// Replays a recorded trace on a virtual clock. Power between samples is
/// linearly interpolated, so the counters reproduce the trapezoidal energy of
/// the source trace. Reads past the end of the trace report exhaustion.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    source: PowerTrace,
    /// Cumulative µJ (package, dram) at each source sample.
    cumulative: Vec<(f64, f64)>,
    counters: VirtualCounters,
}

impl ReplayProvider {
    pub fn new(source: PowerTrace) -> Result<Self, ProbeError> {
        if source.samples.len() < 2 {
            return Err(ProbeError::InsufficientSamples(source.samples.len()));
        }
        let mut cumulative = Vec::with_capacity(source.samples.len());
        let (mut p, mut d) = (0.0, 0.0);
        cumulative.push((0.0, 0.0));
        for w in source.samples.windows(2) {
            let dt_ms = w[1].t_ms - w[0].t_ms;
            p += (w[0].pkg_w + w[1].pkg_w) / 2.0 * dt_ms * 1000.0;
            d += (w[0].dram_w + w[1].dram_w) / 2.0 * dt_ms * 1000.0;
            cumulative.push((p, d));
        }
        let dram = source.samples.iter().any(|s| s.dram_w > 0.0);
        Ok(ReplayProvider {
            source,
            cumulative,
            counters: VirtualCounters {
                t_us: 0,
                max_range_uj: DEFAULT_SYNTHETIC_RANGE_UJ,
                dram,
            },
        })
    }

    pub fn from_csv(path: &Path) -> Result<Self, ProbeError> {
        Self::new(PowerTrace::from_csv_path(path, DEFAULT_INTERVAL_MS as f64)?)
    }

    pub fn source(&self) -> &PowerTrace {
        &self.source
    }

    fn cumulative_at(&self, t_ms: f64) -> (f64, f64) {
        let s = &self.source.samples;
        let t = s[0].t_ms + t_ms;
        let i = s.partition_point(|x| x.t_ms <= t).saturating_sub(1).min(s.len() - 2);
        let (a, b) = (&s[i], &s[i + 1]);
        let dt = (t - a.t_ms).clamp(0.0, b.t_ms - a.t_ms);
        let frac = dt / (b.t_ms - a.t_ms);
        let pkg_at = a.pkg_w + (b.pkg_w - a.pkg_w) * frac;
        let dram_at = a.dram_w + (b.dram_w - a.dram_w) * frac;
        let (cp, cd) = self.cumulative[i];
        (
            cp + (a.pkg_w + pkg_at) / 2.0 * dt * 1000.0,
            cd + (a.dram_w + dram_at) / 2.0 * dt * 1000.0,
        )
    }
}

impl PowerProvider for ReplayProvider {
    fn domains(&self) -> Vec<DomainInfo> {
        self.counters.domains()
    }

    fn clock(&self) -> ClockKind {
        ClockKind::Virtual
    }

    fn read(&mut self) -> Result<Option<Snapshot>, ProbeError> {
        let span = self.source.samples.last().unwrap().t_ms - self.source.samples[0].t_ms;
        let t_ms = self.counters.t_us as f64 / 1000.0;
        if t_ms > span + 1e-9 {
            return Ok(None);
        }
        let (p, d) = self.cumulative_at(t_ms);
        Ok(Some(
            self.counters
                .snapshot(p.round().max(0.0) as u64, d.round().max(0.0) as u64),
        ))
    }

    fn wait(&mut self, ms: u64, _stop: &StopSignal) {
        let s = &self.source.samples;
        let span_us = ((s[s.len() - 1].t_ms - s[0].t_ms) * 1000.0).round() as u64;
        self.counters.advance(ms, Some(span_us));
    }

    fn rewind(&mut self) {
        self.counters.t_us = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reading(energy_uj: u64, domain: DomainKind, t_us: u64) -> CounterReading {
        CounterReading {
            energy_uj,
            max_range_uj: 10_000,
            domain,
            t_us,
        }
    }

    #[test]
    fn delta_without_wrap() {
        let d = counter_delta(
            &reading(1_000, DomainKind::Package, 0),
            &reading(6_000, DomainKind::Package, 1),
        );
        assert_eq!(d.unwrap(), 5_000);
    }

    #[test]
    fn delta_single_wrap() {
        let d = counter_delta(
            &reading(9_500, DomainKind::Package, 0),
            &reading(500, DomainKind::Package, 1),
        );
        assert_eq!(d.unwrap(), 1_000);
    }

    #[test]
    fn delta_domain_mismatch() {
        let e = counter_delta(
            &reading(1, DomainKind::Package, 0),
            &reading(2, DomainKind::Dram, 1),
        )
        .unwrap_err();
        assert!(matches!(e, ProbeError::DomainMismatch { .. }));
    }

    #[test]
    fn constant_session_yields_ten_samples() {
        let mut p = SyntheticProvider::constant(50.0);
        let trace = sample_session(&mut p, 100, &StopSignal::after_ms(1000.0)).unwrap();
        assert_eq!(trace.samples.len(), 10);
        for s in &trace.samples {
            // one microjoule quantum over 100 ms is 1e-5 W
            assert!((s.total_w - 50.0).abs() <= 1e-5, "{}", s.total_w);
        }
        assert!(trace.package_only);
        assert_eq!(trace.end_ms, 1000.0);
    }

    #[test]
    fn ramp_sample_means_match_interval_midpoints() {
        let prog = SyntheticProgram::Ramp {
            from_w: 0.0,
            to_w: 100.0,
            duration_ms: 1000.0,
        };
        let mut p = SyntheticProvider::new(prog.clone());
        let trace = sample_session(&mut p, 100, &StopSignal::after_ms(1000.0)).unwrap();
        let slope_per_interval = 100.0 / 10.0;
        for s in &trace.samples {
            // analytic mean over [t-50, t+50] of a linear ramp is its midpoint value
            let expect = (prog.energy_j(s.t_ms + 50.0) - prog.energy_j(s.t_ms - 50.0)) / 0.1;
            assert!((s.total_w - expect).abs() < 1e-4);
            assert!((s.total_w - prog.power_at(s.t_ms)).abs() <= slope_per_interval);
        }
    }

    #[test]
    fn stop_before_first_sample_is_insufficient() {
        let mut p = SyntheticProvider::constant(10.0);
        let stop = StopSignal::new();
        stop.stop();
        let e = sample_session(&mut p, 100, &stop).unwrap_err();
        assert!(matches!(e, ProbeError::InsufficientSamples(0)));
    }

    #[test]
    fn interval_below_minimum_rejected() {
        let mut p = SyntheticProvider::constant(10.0);
        let e = sample_session(&mut p, 5, &StopSignal::after_ms(100.0)).unwrap_err();
        assert!(matches!(e, ProbeError::IntervalTooShort(5)));
    }

    #[test]
    fn session_survives_counter_wrap() {
        // 50 W over 100 ms is 5e6 µJ; a 12e6 µJ range wraps every 240 ms
        let mut p = SyntheticProvider::constant(50.0).with_max_range(12_000_000);
        let trace = sample_session(&mut p, 100, &StopSignal::after_ms(1000.0)).unwrap();
        for s in &trace.samples {
            assert!((s.total_w - 50.0).abs() < 1e-5);
        }
    }

    #[test]
    fn dram_domain_adds_to_total() {
        let mut p = SyntheticProvider::constant(20.0)
            .with_dram(SyntheticProgram::Constant { watts: 3.0 });
        let trace = sample_session(&mut p, 100, &StopSignal::after_ms(500.0)).unwrap();
        assert!(!trace.package_only);
        for s in &trace.samples {
            assert!((s.pkg_w - 20.0).abs() < 1e-5);
            assert!((s.dram_w - 3.0).abs() < 1e-5);
            assert!((s.total_w - 23.0).abs() < 1e-5);
        }
    }

    #[test]
    fn gaps_are_flagged() {
        let samples = vec![
            PowerSample::new(0.0, 1.0, 0.0),
            PowerSample::new(100.0, 1.0, 0.0),
            PowerSample::new(800.0, 1.0, 0.0),
        ];
        let t = PowerTrace::new(samples, 100.0).unwrap();
        assert_eq!(t.gaps, vec![(100.0, 800.0)]);
    }

    #[test]
    fn non_increasing_timestamps_rejected() {
        let samples = vec![PowerSample::new(0.0, 1.0, 0.0), PowerSample::new(0.0, 1.0, 0.0)];
        assert!(PowerTrace::new(samples, 100.0).is_err());
    }

    #[test]
    fn negative_or_nan_power_rejected() {
        let neg = vec![PowerSample::new(0.0, -1.0, 0.0), PowerSample::new(1.0, 1.0, 0.0)];
        assert!(PowerTrace::new(neg, 100.0).is_err());
        let nan = vec![PowerSample::new(0.0, f64::NAN, 0.0), PowerSample::new(1.0, 1.0, 0.0)];
        assert!(PowerTrace::new(nan, 100.0).is_err());
    }

    #[test]
    fn permission_errors_map_to_permission_denied() {
        let e = map_io(
            Path::new("/x/energy_uj"),
            io::Error::from(io::ErrorKind::PermissionDenied),
        );
        assert!(matches!(e, ProbeError::PermissionDenied { .. }));
        let e = map_io(Path::new("/x"), io::Error::from(io::ErrorKind::InvalidData));
        assert!(matches!(e, ProbeError::Io { .. }));
    }

    #[test]
    fn alternating_program_energy() {
        let prog = SyntheticProgram::Alternating {
            a_w: 5.5,
            b_w: 4.5,
            half_period_ms: 100.0,
        };
        assert!((prog.energy_j(200.0) - 1.0).abs() < 1e-12);
        assert!((prog.energy_j(250.0) - 1.275).abs() < 1e-12);
        assert_eq!(prog.power_at(150.0), 4.5);
    }
}
