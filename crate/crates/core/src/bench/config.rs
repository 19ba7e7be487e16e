//! Experiment configuration (TOML).
//!
//! ```toml
//! anchor = "x265"
//! workdir = "work"                 # relative paths resolve against this file
//! qp51 = [22, 27, 32, 37]
//! # qp63 = [27, 33, 40, 46]        # derived from qp51 when omitted
//! psnr_mode = "mean"               # or "weighted611"
//! r2_floor = 0.92
//! cooldown_s = 0.0                 # pause between codec batches
//! decode_inner_loops = 1
//! sequence_dir = "/data/ctc"       # with ctc = true: <dir>/<name>_<w>x<h>_<fps>.yuv
//! ctc = true
//!
//! [convergence]
//! min_runs = 3
//! max_runs_encode = 30
//! max_runs_decode = 100
//! rel_threshold = 0.05
//! confidence = 0.95
//!
//! [power]
//! source = "powercap"              # or "replay", "synthetic"
//! root = "/sys/class/powercap/intel-rapl"
//! interval_ms = 100
//! idle_s = 60.0
//!
//! [vmaf]
//! binary = "vmaf"
//!
//! [[codecs]]
//! id = "x265"                      # built-in preset; templates may override
//!
//! [[sequences]]
//! name = "BQSquare"
//! class = "D"
//! frame_count = 300
//! fps = 60
//! bit_depth = 8
//! path = "BQSquare_416x240_60.yuv"
//! ```

use std::env;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{map_qp, CodecSpec, SeqClass, SequenceMeta, DEFAULT_GOP, DEFAULT_KEYINT};
use crate::curve::DEFAULT_R2_FLOOR;
use crate::energy::{ConvergencePolicy, DEFAULT_BASELINE_MAX_AGE_S, DEFAULT_IDLE_MIN_S};
use crate::power::{DEFAULT_INTERVAL_MS, DEFAULT_POWERCAP_ROOT, MIN_INTERVAL_MS};
use crate::quality::{PsnrMode, VmafTool};

pub const ENV_WORKDIR: &str = "CODEC_ENERGY_WORKDIR";
pub const ENV_POWERCAP_ROOT: &str = "CODEC_ENERGY_POWERCAP_ROOT";

pub const DEFAULT_QP51: [u32; 4] = [22, 27, 32, 37];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<FieldError>),
}

/// How thoroughly `load_config` checks the filesystem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigCheck {
    /// Schema and cross-field rules only.
    Schema,
    /// Also sequence files (existence and size) and the replay directory.
    Full,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    anchor: String,
    workdir: Option<PathBuf>,
    baseline_store: Option<PathBuf>,
    qp51: Option<Vec<i64>>,
    qp63: Option<Vec<i64>>,
    #[serde(default)]
    psnr_mode: PsnrMode,
    r2_floor: Option<f64>,
    #[serde(default)]
    cooldown_s: f64,
    decode_inner_loops: Option<u32>,
    sequence_dir: Option<PathBuf>,
    #[serde(default)]
    ctc: bool,
    #[serde(default)]
    convergence: RawConvergence,
    #[serde(default)]
    power: RawPower,
    vmaf: Option<RawVmaf>,
    #[serde(default)]
    codecs: Vec<RawCodec>,
    #[serde(default)]
    sequences: Vec<RawSequence>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConvergence {
    min_runs: Option<usize>,
    max_runs_encode: Option<usize>,
    max_runs_decode: Option<usize>,
    rel_threshold: Option<f64>,
    confidence: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPower {
    source: Option<String>,
    root: Option<PathBuf>,
    replay_dir: Option<PathBuf>,
    synthetic_w: Option<f64>,
    synthetic_idle_w: Option<f64>,
    synthetic_window_ms: Option<f64>,
    interval_ms: Option<u64>,
    idle_s: Option<f64>,
    idle_min_s: Option<f64>,
    baseline_max_age_s: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVmaf {
    #[serde(default = "default_true")]
    enabled: bool,
    binary: Option<String>,
    args: Option<String>,
    model: Option<String>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCodec {
    id: String,
    builtin: Option<String>,
    encode_template: Option<String>,
    decode_template: Option<String>,
    qp_scale: Option<u32>,
    bitstream_ext: Option<String>,
    gop: Option<u32>,
    keyint: Option<u32>,
    version_args: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSequence {
    name: String,
    class: SeqClass,
    width: Option<u32>,
    height: Option<u32>,
    frame_count: u64,
    fps: u32,
    bit_depth: u8,
    path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PowerSource {
    Powercap { root: PathBuf },
    /// Recorded traces: `<dir>/<codec>__<sequence>__<qp>__<phase>.csv`, falling
    /// back to `<dir>/<phase>.csv`; idle from `<dir>/idle.csv`.
    Replay { dir: PathBuf },
    Synthetic { active_w: f64, idle_w: f64, window_ms: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerConfig {
    pub source: PowerSource,
    pub interval_ms: u64,
    pub idle_s: f64,
    pub idle_min_s: f64,
    pub baseline_max_age_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub anchor: String,
    pub codecs: Vec<CodecSpec>,
    pub sequences: Vec<SequenceMeta>,
    pub qp51: Vec<u32>,
    pub qp63: Vec<u32>,
    pub encode_policy: ConvergencePolicy,
    pub decode_policy: ConvergencePolicy,
    pub decode_inner_loops: u32,
    pub cooldown_s: f64,
    pub workdir: PathBuf,
    pub baseline_store: PathBuf,
    pub power: PowerConfig,
    pub vmaf: Option<VmafTool>,
    pub psnr_mode: PsnrMode,
    pub r2_floor: f64,
}

impl ExperimentConfig {
    /// QP rungs on the codec's native scale.
    pub fn qps_for(&self, spec: &CodecSpec) -> &[u32] {
        if spec.qp_scale == 63 {
            &self.qp63
        } else {
            &self.qp51
        }
    }

    pub fn codec(&self, id: &str) -> Option<&CodecSpec> {
        self.codecs.iter().find(|c| c.id == id)
    }

    /// Overrides the work directory (and the baseline store if it was the
    /// default one under it).
    pub fn set_workdir(&mut self, dir: PathBuf) {
        if self.baseline_store == self.workdir.join("baselines") {
            self.baseline_store = dir.join("baselines");
        }
        self.workdir = dir;
    }
}

struct Errors(Vec<FieldError>);

impl Errors {
    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.0.push(FieldError {
            field: field.into(),
            message: message.into(),
        });
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_config(path: &Path, check: ConfigCheck) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
    parse_config(&text, &base, check).map_err(|e| match e {
        ConfigError::Parse { message, .. } => ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Parses config text; relative paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path, check: ConfigCheck) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: PathBuf::new(),
        message: e.to_string(),
    })?;
    let mut errs = Errors(Vec::new());

    let qp51 = convert_qps("qp51", raw.qp51.unwrap_or_else(|| DEFAULT_QP51.map(i64::from).to_vec()), 51, &mut errs);
    let qp63 = match raw.qp63 {
        Some(list) => convert_qps("qp63", list, 63, &mut errs),
        None => qp51
            .iter()
            .filter_map(|&q| map_qp(q as i64).ok())
            .collect(),
    };
    if qp51.len() != qp63.len() {
        errs.push("qp63", format!("has {} rungs but qp51 has {}", qp63.len(), qp51.len()));
    }
    if qp51.is_empty() {
        errs.push("qp51", "must list at least one QP");
    }

    let mut codecs = Vec::new();
    for (i, c) in raw.codecs.into_iter().enumerate() {
        if let Some(spec) = build_codec(i, c, &mut errs) {
            codecs.push(spec);
        }
    }
    if codecs.is_empty() {
        errs.push("codecs", "at least one codec is required");
    }
    for (i, c) in codecs.iter().enumerate() {
        if codecs[..i].iter().any(|o| o.id == c.id) {
            errs.push(format!("codecs[{i}].id"), format!("duplicate codec id `{}`", c.id));
        }
    }
    if !codecs.iter().any(|c| c.id == raw.anchor) {
        errs.push("anchor", format!("`{}` is not among the configured codecs", raw.anchor));
    }

    let mut sequences = Vec::new();
    let seq_dir = raw.sequence_dir.as_deref().map(|d| resolve(base, d));
    if raw.ctc {
        match &seq_dir {
            Some(dir) => {
                for mut s in crate::codec::ctc_sequences() {
                    s.path = dir.join(format!("{}_{}x{}_{}.yuv", s.name, s.width, s.height, s.fps));
                    sequences.push(s);
                }
            }
            None => errs.push("sequence_dir", "required when ctc = true"),
        }
    }
    for (i, s) in raw.sequences.into_iter().enumerate() {
        let field = format!("sequences[{i}]");
        let (cw, ch) = s.class.dims();
        let (width, height) = (s.width.unwrap_or(cw), s.height.unwrap_or(ch));
        let path = match (&s.path, &seq_dir) {
            (Some(p), Some(dir)) if p.is_relative() => dir.join(p),
            (Some(p), _) => resolve(base, p),
            (None, Some(dir)) => dir.join(format!("{}_{}x{}_{}.yuv", s.name, width, height, s.fps)),
            (None, None) => {
                errs.push(format!("{field}.path"), "missing (and no sequence_dir)");
                PathBuf::new()
            }
        };
        sequences.push(SequenceMeta {
            name: s.name,
            class_label: s.class,
            width,
            height,
            frame_count: s.frame_count,
            fps: s.fps,
            bit_depth: s.bit_depth,
            path,
        });
    }
    if sequences.is_empty() {
        errs.push("sequences", "at least one sequence is required");
    }
    for (i, s) in sequences.iter().enumerate() {
        if sequences[..i]
            .iter()
            .any(|o| o.name == s.name && o.class_label == s.class_label)
        {
            errs.push(format!("sequences[{i}]"), format!("duplicate sequence {}/{}", s.class_label, s.name));
        }
        if let Err(e) = s.validate_shape() {
            errs.push(format!("sequences.{}", s.name), e.to_string());
        } else if check == ConfigCheck::Full {
            if let Err(e) = s.validate_file() {
                errs.push(format!("sequences.{}", s.name), e.to_string());
            }
        }
    }

    let c = raw.convergence;
    let defaults = ConvergencePolicy::default();
    let encode_policy = ConvergencePolicy {
        min_runs: c.min_runs.unwrap_or(defaults.min_runs),
        max_runs: c.max_runs_encode.unwrap_or(30),
        rel_threshold: c.rel_threshold.unwrap_or(defaults.rel_threshold),
        confidence: c.confidence.unwrap_or(defaults.confidence),
    };
    let decode_policy = ConvergencePolicy {
        max_runs: c.max_runs_decode.unwrap_or(100),
        ..encode_policy
    };
    if let Err(e) = encode_policy.validate() {
        errs.push("convergence", e.to_string());
    } else if let Err(e) = decode_policy.validate() {
        errs.push("convergence.max_runs_decode", e.to_string());
    }

    let decode_inner_loops = raw.decode_inner_loops.unwrap_or(1);
    if decode_inner_loops == 0 {
        errs.push("decode_inner_loops", "must be at least 1");
    }
    if !(raw.cooldown_s >= 0.0 && raw.cooldown_s.is_finite()) {
        errs.push("cooldown_s", "must be a non-negative number");
    }
    let r2_floor = raw.r2_floor.unwrap_or(DEFAULT_R2_FLOOR);
    if !(0.0..=1.0).contains(&r2_floor) {
        errs.push("r2_floor", "must lie in [0, 1]");
    }

    let power = build_power(raw.power, base, check, &mut errs);

    let vmaf = match raw.vmaf {
        Some(v) if !v.enabled => None,
        Some(v) => {
            let d = VmafTool::default();
            Some(VmafTool {
                binary: v.binary.unwrap_or(d.binary),
                args: v.args.unwrap_or(d.args),
                model: v.model,
            })
        }
        None => Some(VmafTool::default()),
    };

    let workdir = match env::var_os(ENV_WORKDIR) {
        Some(w) => PathBuf::from(w),
        None => resolve(base, raw.workdir.as_deref().unwrap_or(Path::new("work"))),
    };
    let baseline_store = raw
        .baseline_store
        .map(|p| resolve(base, &p))
        .unwrap_or_else(|| workdir.join("baselines"));

    if !errs.0.is_empty() {
        return Err(ConfigError::Validation(errs.0));
    }
    Ok(ExperimentConfig {
        anchor: raw.anchor,
        codecs,
        sequences,
        qp51,
        qp63,
        encode_policy,
        decode_policy,
        decode_inner_loops,
        cooldown_s: raw.cooldown_s,
        workdir,
        baseline_store,
        power,
        vmaf,
        psnr_mode: raw.psnr_mode,
        r2_floor,
    })
}

fn convert_qps(field: &str, list: Vec<i64>, max: u32, errs: &mut Errors) -> Vec<u32> {
    let mut out = Vec::with_capacity(list.len());
    for (i, q) in list.into_iter().enumerate() {
        if (0..=max as i64).contains(&q) {
            out.push(q as u32);
        } else {
            errs.push(format!("{field}[{i}]"), format!("QP {q} outside [0, {max}]"));
        }
    }
    out
}

fn build_codec(i: usize, c: RawCodec, errs: &mut Errors) -> Option<CodecSpec> {
    let field = format!("codecs[{i}]");
    let preset = CodecSpec::builtin(c.builtin.as_deref().unwrap_or(&c.id));
    if let (Some(b), None) = (&c.builtin, &preset) {
        errs.push(format!("{field}.builtin"), format!("unknown preset `{b}`"));
        return None;
    }
    let spec = match preset {
        Some(p) => CodecSpec {
            id: c.id,
            encode_template: c.encode_template.unwrap_or(p.encode_template),
            decode_template: c.decode_template.unwrap_or(p.decode_template),
            qp_scale: c.qp_scale.unwrap_or(p.qp_scale),
            bitstream_ext: c.bitstream_ext.unwrap_or(p.bitstream_ext),
            gop: c.gop.unwrap_or(p.gop),
            keyint: c.keyint.unwrap_or(p.keyint),
            version_args: c.version_args.unwrap_or(p.version_args),
        },
        None => {
            let mut missing = Vec::new();
            if c.encode_template.is_none() {
                missing.push("encode_template");
            }
            if c.decode_template.is_none() {
                missing.push("decode_template");
            }
            if c.qp_scale.is_none() {
                missing.push("qp_scale");
            }
            if !missing.is_empty() {
                errs.push(
                    field,
                    format!("`{}` is not a built-in codec; missing {}", c.id, missing.join(", ")),
                );
                return None;
            }
            CodecSpec {
                id: c.id,
                encode_template: c.encode_template.unwrap_or_default(),
                decode_template: c.decode_template.unwrap_or_default(),
                qp_scale: c.qp_scale.unwrap_or_default(),
                bitstream_ext: c.bitstream_ext.unwrap_or_else(|| "bin".into()),
                gop: c.gop.unwrap_or(DEFAULT_GOP),
                keyint: c.keyint.unwrap_or(DEFAULT_KEYINT),
                version_args: c.version_args.unwrap_or_default(),
            }
        }
    };
    if spec.id.is_empty() || spec.id.contains(['/', '\\']) || spec.id.contains("__") {
        errs.push(format!("{field}.id"), "must be non-empty without path separators or `__`");
    }
    if let Err(e) = spec.validate() {
        errs.push(format!("codecs.{}", spec.id), e.to_string());
    }
    Some(spec)
}

fn build_power(p: RawPower, base: &Path, check: ConfigCheck, errs: &mut Errors) -> PowerConfig {
    let interval_ms = p.interval_ms.unwrap_or(DEFAULT_INTERVAL_MS);
    if interval_ms < MIN_INTERVAL_MS {
        errs.push("power.interval_ms", format!("must be at least {MIN_INTERVAL_MS}"));
    }
    let source = match p.source.as_deref().unwrap_or("powercap") {
        "powercap" => {
            let root = match env::var_os(ENV_POWERCAP_ROOT) {
                Some(r) => PathBuf::from(r),
                None => p.root.map(|r| resolve(base, &r)).unwrap_or_else(|| DEFAULT_POWERCAP_ROOT.into()),
            };
            PowerSource::Powercap { root }
        }
        "replay" => {
            let dir = match p.replay_dir {
                Some(d) => resolve(base, &d),
                None => {
                    errs.push("power.replay_dir", "required for the replay source");
                    PathBuf::new()
                }
            };
            if check == ConfigCheck::Full && !dir.as_os_str().is_empty() && !dir.join("idle.csv").is_file() {
                errs.push("power.replay_dir", format!("{} has no idle.csv", dir.display()));
            }
            PowerSource::Replay { dir }
        }
        "synthetic" => {
            let active_w = p.synthetic_w.unwrap_or(50.0);
            let idle_w = p.synthetic_idle_w.unwrap_or(10.0);
            let window_ms = p.synthetic_window_ms.unwrap_or(1000.0);
            if !(idle_w > 0.0 && active_w >= 0.0 && window_ms > 0.0) {
                errs.push("power", "synthetic_idle_w and synthetic_window_ms must be positive");
            }
            PowerSource::Synthetic {
                active_w,
                idle_w,
                window_ms,
            }
        }
        other => {
            errs.push("power.source", format!("unknown source `{other}` (powercap, replay, synthetic)"));
            PowerSource::Synthetic {
                active_w: 0.0,
                idle_w: 1.0,
                window_ms: 1.0,
            }
        }
    };
    let idle_s = p.idle_s.unwrap_or(DEFAULT_IDLE_MIN_S);
    let idle_min_s = p.idle_min_s.unwrap_or(DEFAULT_IDLE_MIN_S);
    if idle_s < idle_min_s {
        errs.push("power.idle_s", format!("{idle_s} is below idle_min_s {idle_min_s}"));
    }
    PowerConfig {
        source,
        interval_ms,
        idle_s,
        idle_min_s,
        baseline_max_age_s: p.baseline_max_age_s.unwrap_or(DEFAULT_BASELINE_MAX_AGE_S),
    }
}
