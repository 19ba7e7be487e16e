//! Idle baseline, net energy and repeat-until-converged measurement.

use std::error::Error as StdError;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::power::{sample_session, ClockKind, PowerProvider, PowerTrace, ProbeError, StopSignal};

pub type BoxError = Box<dyn StdError + Send + Sync>;

/// Default minimum idle observation window.
pub const DEFAULT_IDLE_MIN_S: f64 = 60.0;

/// Default maximum baseline age (24 h).
pub const DEFAULT_BASELINE_MAX_AGE_S: u64 = 24 * 3600;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("trace needs at least 2 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("a measured workload is running; idle baseline would be contaminated")]
    WorkloadActive,
    #[error("idle window {requested_s} s is shorter than the {minimum_s} s minimum")]
    IdleTooShort { requested_s: f64, minimum_s: f64 },
    #[error("idle mean power {0} W is not positive")]
    NonPositiveIdle(f64),
    #[error("baseline is stale: {0}")]
    StaleBaseline(String),
    #[error("invalid convergence policy: {0}")]
    InvalidPolicy(String),
    #[error("workload failed: {0}")]
    Workload(BoxError),
    #[error("sampler thread panicked")]
    SamplerPanic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Encode,
    Decode,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Encode => "encode",
            Phase::Decode => "decode",
        })
    }
}

/// Trapezoidal energy of `trace` in joules.
///
/// Power is held constant between the window edges and the outermost samples;
/// for traces built from samples alone the window coincides with them.
pub fn integrate_power(trace: &PowerTrace) -> Result<f64, EnergyError> {
    let s = &trace.samples;
    if s.len() < 2 {
        return Err(EnergyError::InsufficientSamples(s.len()));
    }
    let mut mj = 0.0;
    for w in s.windows(2) {
        mj += (w[0].total_w + w[1].total_w) / 2.0 * (w[1].t_ms - w[0].t_ms);
    }
    let first = &s[0];
    let last = &s[s.len() - 1];
    mj += first.total_w * (first.t_ms - trace.start_ms);
    mj += last.total_w * (trace.end_ms - last.t_ms);
    Ok(mj / 1000.0)
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdleBaseline {
    pub mean_w: f64,
    pub std_w: f64,
    pub duration_s: f64,
    pub trace_ref: String,
    /// Unix seconds.
    pub captured_at: u64,
    #[serde(default)]
    pub host_fingerprint: String,
}

impl IdleBaseline {
    /// Rejects baselines older than `max_age_s` or taken on another host.
    pub fn check_fresh(&self, fingerprint: &str, max_age_s: u64, now: u64) -> Result<(), EnergyError> {
        if self.host_fingerprint != fingerprint {
            return Err(EnergyError::StaleBaseline(format!(
                "captured on host {:?}, current host is {:?}",
                self.host_fingerprint, fingerprint
            )));
        }
        let age = now.saturating_sub(self.captured_at);
        if age > max_age_s {
            return Err(EnergyError::StaleBaseline(format!(
                "captured {age} s ago, limit is {max_age_s} s"
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)
    }
}

static ACTIVE_WORKLOADS: AtomicUsize = AtomicUsize::new(0);

/// Registers a running measured workload for as long as it is alive.
#[derive(Debug)]
pub struct WorkloadGuard(());

impl WorkloadGuard {
    pub fn register() -> Self {
        ACTIVE_WORKLOADS.fetch_add(1, Ordering::SeqCst);
        WorkloadGuard(())
    }
}

impl Drop for WorkloadGuard {
    fn drop(&mut self) {
        ACTIVE_WORKLOADS.fetch_sub(1, Ordering::SeqCst);
    }
}

pub fn workload_active() -> bool {
    ACTIVE_WORKLOADS.load(Ordering::SeqCst) > 0
}

/// Population mean and standard deviation of `total_w`.
fn mean_std(trace: &PowerTrace) -> (f64, f64) {
    let n = trace.samples.len() as f64;
    let mean = trace.samples.iter().map(|s| s.total_w).sum::<f64>() / n;
    let var = trace
        .samples
        .iter()
        .map(|s| (s.total_w - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// Builds a baseline from an already-sampled idle trace.
pub fn baseline_from_trace(
    trace: &PowerTrace,
    min_duration_s: f64,
    trace_ref: impl Into<String>,
) -> Result<IdleBaseline, EnergyError> {
    if trace.samples.len() < 2 {
        return Err(EnergyError::InsufficientSamples(trace.samples.len()));
    }
    let duration_s = trace.duration_s();
    if duration_s + 1e-9 < min_duration_s {
        return Err(EnergyError::IdleTooShort {
            requested_s: duration_s,
            minimum_s: min_duration_s,
        });
    }
    let (mean_w, std_w) = mean_std(trace);
    if !(mean_w > 0.0) {
        return Err(EnergyError::NonPositiveIdle(mean_w));
    }
    Ok(IdleBaseline {
        mean_w,
        std_w,
        duration_s,
        trace_ref: trace_ref.into(),
        captured_at: unix_now(),
        host_fingerprint: String::new(),
    })
}

/// Samples `provider` for `duration_s` with no workload running and returns
/// the idle power statistics. The sampled trace is returned alongside so the
/// caller can persist it under `trace_ref`.
pub fn measure_idle(
    provider: &mut dyn PowerProvider,
    duration_s: f64,
    min_duration_s: f64,
    interval_ms: u64,
) -> Result<(IdleBaseline, PowerTrace), EnergyError> {
    if duration_s + 1e-9 < min_duration_s {
        return Err(EnergyError::IdleTooShort {
            requested_s: duration_s,
            minimum_s: min_duration_s,
        });
    }
    if workload_active() {
        return Err(EnergyError::WorkloadActive);
    }
    provider.rewind();
    let trace = sample_session(provider, interval_ms, &StopSignal::after_ms(duration_s * 1000.0))?;
    if workload_active() {
        return Err(EnergyError::WorkloadActive);
    }
    let trace_ref = format!("idle-{}", unix_now());
    let baseline = baseline_from_trace(&trace, min_duration_s, trace_ref)?;
    Ok((baseline, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyMeasurement {
    pub gross_j: f64,
    pub idle_j: f64,
    pub net_j: f64,
    pub duration_s: f64,
    pub phase: Phase,
    /// Workload repetitions inside this measurement; energies and duration
    /// are per repetition.
    #[serde(default = "one")]
    pub inner_loops: u32,
    /// Set when `net_j < 0`, which indicates baseline drift.
    #[serde(default)]
    pub negative_net: bool,
}

fn one() -> u32 {
    1
}

impl EnergyMeasurement {
    fn per_loop(mut self, loops: u32) -> Self {
        let k = loops.max(1) as f64;
        self.gross_j /= k;
        self.idle_j /= k;
        self.duration_s /= k;
        self.net_j = self.gross_j - self.idle_j;
        self.inner_loops = loops.max(1);
        self
    }
}

/// Gross energy of the trace minus idle power over the trace duration.
pub fn net_energy(
    trace: &PowerTrace,
    baseline: &IdleBaseline,
    phase: Phase,
) -> Result<EnergyMeasurement, EnergyError> {
    let gross_j = integrate_power(trace)?;
    let duration_s = trace.duration_s();
    let idle_j = baseline.mean_w * duration_s;
    let net_j = gross_j - idle_j;
    Ok(EnergyMeasurement {
        gross_j,
        idle_j,
        net_j,
        duration_s,
        phase,
        inner_loops: 1,
        negative_net: net_j < 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePolicy {
    pub min_runs: usize,
    pub max_runs: usize,
    /// Largest accepted CI half-width relative to the mean.
    pub rel_threshold: f64,
    /// Two-sided confidence level of the Student-t interval.
    pub confidence: f64,
}

impl Default for ConvergencePolicy {
    fn default() -> Self {
        ConvergencePolicy {
            min_runs: 3,
            max_runs: 30,
            rel_threshold: 0.05,
            confidence: 0.95,
        }
    }
}

impl ConvergencePolicy {
    pub fn validate(&self) -> Result<(), EnergyError> {
        if self.min_runs < 2 {
            return Err(EnergyError::InvalidPolicy(format!(
                "min_runs must be at least 2, got {}",
                self.min_runs
            )));
        }
        if self.max_runs < self.min_runs {
            return Err(EnergyError::InvalidPolicy(format!(
                "max_runs {} is below min_runs {}",
                self.max_runs, self.min_runs
            )));
        }
        if !(self.rel_threshold >= 0.0) {
            return Err(EnergyError::InvalidPolicy("rel_threshold must be >= 0".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(EnergyError::InvalidPolicy(
                "confidence must lie strictly between 0 and 1".into(),
            ));
        }
        Ok(())
    }
}

/// Half-width of the two-sided Student-t confidence interval of the mean.
/// Zero for fewer than two values.
pub fn ci_half_width(values: &[f64], confidence: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return 0.0;
    }
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.5 + confidence / 2.0);
    t * var.sqrt() / nf.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergedStat {
    pub mean: f64,
    pub ci_half_width: f64,
    pub n_runs: usize,
    pub per_run: Vec<EnergyMeasurement>,
    pub converged: bool,
}

impl ConvergedStat {
    fn from_runs(per_run: Vec<EnergyMeasurement>, confidence: f64, converged: bool) -> Self {
        let values: Vec<f64> = per_run.iter().map(|m| m.net_j).collect();
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        ConvergedStat {
            mean,
            ci_half_width: ci_half_width(&values, confidence),
            n_runs: per_run.len(),
            per_run,
            converged,
        }
    }

    /// Mean wall duration per run in seconds.
    pub fn mean_duration_s(&self) -> f64 {
        self.per_run.iter().map(|m| m.duration_s).sum::<f64>() / self.per_run.len().max(1) as f64
    }
}

#[derive(Debug, Error)]
pub enum ConvergenceError {
    #[error(transparent)]
    Policy(EnergyError),
    #[error("run {run} failed after {} completed runs: {source}", runs_so_far.len())]
    TaskFailed {
        run: usize,
        #[source]
        source: BoxError,
        runs_so_far: Vec<EnergyMeasurement>,
    },
}

fn within_threshold(values: &[f64], policy: &ConvergencePolicy) -> bool {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let half = ci_half_width(values, policy.confidence);
    if half == 0.0 {
        return true;
    }
    half / mean.abs() <= policy.rel_threshold
}

/// Repeats `run_once` until the confidence interval of the net energies is
/// tight enough, or `max_runs` is reached.
pub fn run_converged<F>(policy: &ConvergencePolicy, mut run_once: F) -> Result<ConvergedStat, ConvergenceError>
where
    F: FnMut(usize) -> Result<EnergyMeasurement, BoxError>,
{
    policy.validate().map_err(ConvergenceError::Policy)?;
    let mut runs: Vec<EnergyMeasurement> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for run in 0..policy.max_runs {
        match run_once(run) {
            Ok(m) => {
                values.push(m.net_j);
                runs.push(m);
            }
            Err(source) => {
                return Err(ConvergenceError::TaskFailed {
                    run,
                    source,
                    runs_so_far: runs,
                })
            }
        }
        if runs.len() >= policy.min_runs && within_threshold(&values, policy) {
            return Ok(ConvergedStat::from_runs(runs, policy.confidence, true));
        }
    }
    Ok(ConvergedStat::from_runs(runs, policy.confidence, false))
}

/// Wraps workload executions in a sampling session and idle subtraction.
pub struct SessionMeter<'a> {
    provider: &'a mut dyn PowerProvider,
    baseline: &'a IdleBaseline,
    interval_ms: u64,
    virtual_window_ms: Option<f64>,
}

impl<'a> SessionMeter<'a> {
    pub fn new(provider: &'a mut dyn PowerProvider, baseline: &'a IdleBaseline, interval_ms: u64) -> Self {
        SessionMeter {
            provider,
            baseline,
            interval_ms,
            virtual_window_ms: None,
        }
    }

    /// Caps each session of a virtual-clock provider at `ms` of provider time.
    /// Without a cap, sessions run until the provider is exhausted.
    pub fn with_virtual_window(mut self, ms: f64) -> Self {
        self.virtual_window_ms = Some(ms);
        self
    }

    pub fn baseline(&self) -> &IdleBaseline {
        self.baseline
    }

    /// Runs `work` `inner_loops` times back to back inside one sampling
    /// session and returns the per-repetition net energy.
    pub fn measure<F>(&mut self, phase: Phase, inner_loops: u32, mut work: F) -> Result<EnergyMeasurement, EnergyError>
    where
        F: FnMut() -> Result<(), BoxError>,
    {
        let loops = inner_loops.max(1);
        let trace = match self.provider.clock() {
            ClockKind::Wall => {
                let stop = StopSignal::new();
                let interval = self.interval_ms;
                let provider = &mut *self.provider;
                let (trace, outcome) = std::thread::scope(|scope| {
                    let sampler_stop = stop.clone();
                    let handle = scope.spawn(move || sample_session(provider, interval, &sampler_stop));
                    let outcome = {
                        let _guard = WorkloadGuard::register();
                        (0..loops).try_for_each(|_| work())
                    };
                    stop.stop();
                    (handle.join(), outcome)
                });
                outcome.map_err(EnergyError::Workload)?;
                trace.map_err(|_| EnergyError::SamplerPanic)??
            }
            ClockKind::Virtual => {
                {
                    let _guard = WorkloadGuard::register();
                    (0..loops).try_for_each(|_| work()).map_err(EnergyError::Workload)?;
                }
                self.provider.rewind();
                let stop = match self.virtual_window_ms {
                    Some(ms) => StopSignal::after_ms(ms),
                    None => StopSignal::new(),
                };
                sample_session(self.provider, self.interval_ms, &stop)?
            }
        };
        Ok(net_energy(&trace, self.baseline, phase)?.per_loop(loops))
    }
}

/// Measures `work` repeatedly through `meter` under `policy`.
pub fn run_converged_workload<F>(
    meter: &mut SessionMeter<'_>,
    phase: Phase,
    inner_loops: u32,
    policy: &ConvergencePolicy,
    mut work: F,
) -> Result<ConvergedStat, ConvergenceError>
where
    F: FnMut() -> Result<(), BoxError>,
{
    run_converged(policy, |_| {
        meter
            .measure(phase, inner_loops, &mut work)
            .map_err(|e| Box::new(e) as BoxError)
    })
}

/// Appends per-run measurements to a JSON-lines file.
pub fn append_measurements(path: &Path, runs: &[EnergyMeasurement]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    for m in runs {
        serde_json::to_writer(&mut f, m)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}
