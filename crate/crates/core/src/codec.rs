//! Codec command templates, QP mapping and measured encode/decode runs.

use std::collections::BTreeMap;
use std::env;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::energy::{run_converged_workload, BoxError, ConvergedStat, ConvergenceError, ConvergencePolicy, Phase, SessionMeter};

/// Placeholders a template may reference.
pub const PLACEHOLDERS: [&str; 10] = [
    "input", "output", "width", "height", "FPS", "QP", "BD", "YUVfmt", "GoP", "KI",
];

pub const DEFAULT_GOP: u32 = 16;
pub const DEFAULT_KEYINT: u32 = 64;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("QP {qp} outside [0, {max}]")]
    OutOfRange { qp: i64, max: u32 },
    #[error("unresolved placeholder `${name}` in template {template:?}")]
    UnresolvedPlaceholder { name: String, template: String },
    #[error("unterminated quote in template {0:?}")]
    BadTemplate(String),
    #[error("codec binary `{0}` not found")]
    MissingBinary(String),
    #[error("input {0} does not exist")]
    InputMissing(PathBuf),
    #[error("{context} exited with {status}: {stderr}")]
    CodecFailure {
        context: String,
        status: String,
        stderr: String,
    },
    #[error("bitstream duration is zero (frames={frames}, fps={fps})")]
    ZeroDuration { frames: u64, fps: u32 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("energy measurement failed: {0}")]
    Energy(#[from] ConvergenceError),
    #[error("invalid sequence {name}: {message}")]
    InvalidSequence { name: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CodecError + '_ {
    move |source| CodecError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Maps a QP on the 0–51 scale linearly onto 0–63, rounding half away from zero.
pub fn map_qp(qp51: i64) -> Result<u32, CodecError> {
    if !(0..=51).contains(&qp51) {
        return Err(CodecError::OutOfRange { qp: qp51, max: 51 });
    }
    // integer round-half-up of qp51 * 63 / 51; inputs are non-negative
    Ok(((qp51 * 63 * 2 + 51) / (51 * 2)) as u32)
}

/// Kilobits per second of a stream of `bytes` covering `frames` at `fps`.
pub fn compute_bitrate(bytes: u64, frames: u64, fps: u32) -> Result<f64, CodecError> {
    if frames == 0 || fps == 0 {
        return Err(CodecError::ZeroDuration { frames, fps });
    }
    Ok(bytes as f64 * 8.0 * fps as f64 / frames as f64 / 1000.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SeqClass {
    B,
    C,
    D,
}

impl SeqClass {
    pub fn dims(self) -> (u32, u32) {
        match self {
            SeqClass::B => (1920, 1080),
            SeqClass::C => (832, 480),
            SeqClass::D => (416, 240),
        }
    }
}

impl fmt::Display for SeqClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeqClass::B => "B",
            SeqClass::C => "C",
            SeqClass::D => "D",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub name: String,
    #[serde(rename = "class")]
    pub class_label: SeqClass,
    pub width: u32,
    pub height: u32,
    pub frame_count: u64,
    pub fps: u32,
    pub bit_depth: u8,
    #[serde(default)]
    pub path: PathBuf,
}

impl SequenceMeta {
    pub fn bytes_per_sample(&self) -> u64 {
        if self.bit_depth > 8 {
            2
        } else {
            1
        }
    }

    /// Bytes of one 4:2:0 frame.
    pub fn frame_bytes(&self) -> u64 {
        let luma = self.width as u64 * self.height as u64;
        let chroma = (self.width as u64 / 2) * (self.height as u64 / 2);
        (luma + 2 * chroma) * self.bytes_per_sample()
    }

    pub fn pixel_format(&self) -> &'static str {
        if self.bit_depth > 8 {
            "yuv420p10le"
        } else {
            "yuv420p"
        }
    }

    /// Checks dimensions against the class and bit depth.
    pub fn validate_shape(&self) -> Result<(), CodecError> {
        let invalid = |message: String| CodecError::InvalidSequence {
            name: self.name.clone(),
            message,
        };
        let (w, h) = self.class_label.dims();
        if (self.width, self.height) != (w, h) {
            return Err(invalid(format!(
                "class {} requires {w}x{h}, got {}x{}",
                self.class_label, self.width, self.height
            )));
        }
        if self.bit_depth != 8 && self.bit_depth != 10 {
            return Err(invalid(format!("bit depth must be 8 or 10, got {}", self.bit_depth)));
        }
        if self.frame_count == 0 || self.fps == 0 {
            return Err(invalid("frame_count and fps must be positive".into()));
        }
        Ok(())
    }

    /// Checks that the file on disk holds exactly `frame_count` frames.
    pub fn validate_file(&self) -> Result<(), CodecError> {
        let len = fs::metadata(&self.path).map_err(io_err(&self.path))?.len();
        let expect = self.frame_count * self.frame_bytes();
        if len != expect {
            return Err(CodecError::InvalidSequence {
                name: self.name.clone(),
                message: format!(
                    "{} is {len} bytes, expected {expect} ({} frames of {} bytes)",
                    self.path.display(),
                    self.frame_count,
                    self.frame_bytes()
                ),
            });
        }
        Ok(())
    }
}

/// The 4:2:0 SDR test set: `(class, name, frames, fps, bit depth)`.
pub const CTC_SEQUENCES: [(SeqClass, &str, u64, u32, u8); 13] = [
    (SeqClass::B, "MarketPlace", 600, 60, 10),
    (SeqClass::B, "RitualDance", 600, 60, 10),
    (SeqClass::B, "Cactus", 500, 50, 8),
    (SeqClass::B, "BasketballDrive", 500, 50, 8),
    (SeqClass::B, "BQTerrace", 600, 60, 8),
    (SeqClass::C, "RaceHorses", 600, 30, 8),
    (SeqClass::C, "BasketballDrill", 500, 50, 8),
    (SeqClass::C, "PartyScene", 500, 50, 8),
    (SeqClass::C, "BQMall", 300, 60, 8),
    (SeqClass::D, "RaceHorses", 600, 30, 8),
    (SeqClass::D, "BasketballPass", 500, 50, 8),
    (SeqClass::D, "BlowingBubbles", 500, 50, 8),
    (SeqClass::D, "BQSquare", 300, 60, 8),
];

/// Metadata for the standard test set with paths left empty.
pub fn ctc_sequences() -> Vec<SequenceMeta> {
    CTC_SEQUENCES
        .iter()
        .map(|&(class_label, name, frame_count, fps, bit_depth)| {
            let (width, height) = class_label.dims();
            SequenceMeta {
                name: name.to_string(),
                class_label,
                width,
                height,
                frame_count,
                fps,
                bit_depth,
                path: PathBuf::new(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecSpec {
    pub id: String,
    /// Full command line; the first token is the binary.
    pub encode_template: String,
    pub decode_template: String,
    pub qp_scale: u32,
    pub bitstream_ext: String,
    #[serde(default = "default_gop")]
    pub gop: u32,
    #[serde(default = "default_keyint")]
    pub keyint: u32,
    /// Arguments that make the encoder print its version.
    #[serde(default)]
    pub version_args: Vec<String>,
}

fn default_gop() -> u32 {
    DEFAULT_GOP
}

fn default_keyint() -> u32 {
    DEFAULT_KEYINT
}

impl CodecSpec {
    fn preset(
        id: &str,
        encode: &str,
        decode: &str,
        qp_scale: u32,
        ext: &str,
        version_args: &[&str],
    ) -> Self {
        CodecSpec {
            id: id.into(),
            encode_template: encode.into(),
            decode_template: decode.into(),
            qp_scale,
            bitstream_ext: ext.into(),
            gop: DEFAULT_GOP,
            keyint: DEFAULT_KEYINT,
            version_args: version_args.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn x265() -> Self {
        Self::preset(
            "x265",
            "ffmpeg -y -s $widthx$height -r $FPS -pix_fmt $YUVfmt -i $input -c:v libx265 -preset veryfast -crf $QP $output",
            "ffmpeg -y -i $input -f rawvideo -pix_fmt $YUVfmt $output",
            51,
            "mp4",
            &["-version"],
        )
    }

    pub fn vp9() -> Self {
        Self::preset(
            "vp9",
            "vpxenc $input --width=$width --height=$height --verbose --codec=vp9 -o $output --input-bit-depth=$BD --max-q=$QP --min-q=$QP --min-gf-interval=16 --max-gf-interval=16 --kf-min-dist=64 --kf-max-dist=64 --fps=$FPS/1 --cpu-used=1 --ivf --bit-depth=$BD",
            "ffmpeg -y -i $input -f rawvideo -pix_fmt $YUVfmt $output",
            63,
            "ivf",
            &["--help"],
        )
    }

    pub fn svt_av1() -> Self {
        Self::preset(
            "svt-av1",
            "SvtAv1EncApp -i $input -w $width -h $height --passes 2 --preset 1 -b $output --fps $FPS --input-depth $BD --lag-in-frames $GoP --keyint $KI -q $QP",
            "aomdec --rawvideo -o $output $input",
            63,
            "ivf",
            &["--version"],
        )
    }

    pub fn vvenc() -> Self {
        Self::preset(
            "vvenc",
            "vvencapp -s $widthx$height -r $FPS -c yuv420_10 -i $input --preset medium -q $QP -o $output",
            "vvdecapp -b $input -o $output",
            51,
            "266",
            &["--version"],
        )
    }

    /// Built-in definition by id.
    pub fn builtin(id: &str) -> Option<Self> {
        match id {
            "x265" => Some(Self::x265()),
            "vp9" => Some(Self::vp9()),
            "svt-av1" => Some(Self::svt_av1()),
            "vvenc" => Some(Self::vvenc()),
            _ => None,
        }
    }

    pub fn builtins() -> Vec<Self> {
        vec![Self::x265(), Self::vp9(), Self::svt_av1(), Self::vvenc()]
    }

    pub fn encoder_binary(&self) -> Result<String, CodecError> {
        first_token(&self.encode_template)
    }

    pub fn decoder_binary(&self) -> Result<String, CodecError> {
        first_token(&self.decode_template)
    }

    /// Checks templates and QP scale.
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.qp_scale != 51 && self.qp_scale != 63 {
            return Err(CodecError::OutOfRange {
                qp: self.qp_scale as i64,
                max: 63,
            });
        }
        for t in [&self.encode_template, &self.decode_template] {
            for token in tokenize(t)? {
                check_placeholders(&token, t, &PLACEHOLDERS)?;
            }
        }
        Ok(())
    }
}

fn first_token(template: &str) -> Result<String, CodecError> {
    tokenize(template)?
        .into_iter()
        .next()
        .ok_or_else(|| CodecError::BadTemplate(template.to_string()))
}

/// Splits on whitespace, honouring double quotes.
fn tokenize(template: &str) -> Result<Vec<String>, CodecError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_quote = false;
    let mut has_token = false;
    for c in template.chars() {
        match c {
            '"' => {
                in_quote = !in_quote;
                has_token = true;
            }
            c if c.is_whitespace() && !in_quote => {
                if has_token {
                    out.push(std::mem::take(&mut cur));
                    has_token = false;
                }
            }
            c => {
                cur.push(c);
                has_token = true;
            }
        }
    }
    if in_quote {
        return Err(CodecError::BadTemplate(template.to_string()));
    }
    if has_token {
        out.push(cur);
    }
    Ok(out)
}

/// Longest known placeholder name that prefixes `rest`.
fn match_placeholder(rest: &str, names: &[&'static str]) -> Option<&'static str> {
    names
        .iter()
        .filter(|p| rest.starts_with(**p))
        .max_by_key(|p| p.len())
        .copied()
}

fn unresolved(rest: &str, template: &str) -> CodecError {
    let name: String = rest
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
        .collect();
    CodecError::UnresolvedPlaceholder {
        name,
        template: template.to_string(),
    }
}

fn check_placeholders(token: &str, template: &str, names: &[&'static str]) -> Result<(), CodecError> {
    let mut rest = token;
    while let Some(i) = rest.find('$') {
        let after = &rest[i + 1..];
        let name = match_placeholder(after, names).ok_or_else(|| unresolved(after, template))?;
        rest = &after[name.len()..];
    }
    Ok(())
}

fn substitute(
    token: &str,
    names: &[&'static str],
    vars: &BTreeMap<&'static str, String>,
    template: &str,
) -> Result<String, CodecError> {
    let mut out = String::with_capacity(token.len());
    let mut rest = token;
    while let Some(i) = rest.find('$') {
        out.push_str(&rest[..i]);
        let after = &rest[i + 1..];
        let name = match_placeholder(after, names).ok_or_else(|| unresolved(after, template))?;
        let value = vars.get(name).ok_or_else(|| unresolved(after, template))?;
        out.push_str(value);
        rest = &after[name.len()..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Substitutes `vars` into `template` and returns the argument vector.
pub fn render_template(template: &str, vars: &BTreeMap<&'static str, String>) -> Result<Vec<String>, CodecError> {
    render_template_with(template, &PLACEHOLDERS, vars)
}

/// Like [`render_template`] with a custom placeholder set.
pub fn render_template_with(
    template: &str,
    names: &[&'static str],
    vars: &BTreeMap<&'static str, String>,
) -> Result<Vec<String>, CodecError> {
    tokenize(template)?
        .iter()
        .map(|t| substitute(t, names, vars, template))
        .collect()
}

/// Input and output paths of one codec invocation.
#[derive(Debug, Clone)]
pub struct CommandPaths<'a> {
    pub input: &'a Path,
    pub output: &'a Path,
}

pub fn template_vars(spec: &CodecSpec, seq: &SequenceMeta, qp: u32, paths: &CommandPaths<'_>) -> BTreeMap<&'static str, String> {
    let mut v = BTreeMap::new();
    v.insert("input", paths.input.display().to_string());
    v.insert("output", paths.output.display().to_string());
    v.insert("width", seq.width.to_string());
    v.insert("height", seq.height.to_string());
    v.insert("FPS", seq.fps.to_string());
    v.insert("QP", qp.to_string());
    v.insert("BD", seq.bit_depth.to_string());
    v.insert("YUVfmt", seq.pixel_format().to_string());
    v.insert("GoP", spec.gop.to_string());
    v.insert("KI", spec.keyint.to_string());
    v
}

/// Renders the encode (or decode) command line for one run.
pub fn render_command(
    spec: &CodecSpec,
    seq: &SequenceMeta,
    qp: u32,
    paths: &CommandPaths<'_>,
    phase: Phase,
) -> Result<Vec<String>, CodecError> {
    if qp > spec.qp_scale {
        return Err(CodecError::OutOfRange {
            qp: qp as i64,
            max: spec.qp_scale,
        });
    }
    let template = match phase {
        Phase::Encode => &spec.encode_template,
        Phase::Decode => &spec.decode_template,
    };
    render_template(template, &template_vars(spec, seq, qp, paths))
}

/// Locates `binary` on `PATH` (or checks it directly when it contains a
/// path separator).
pub fn resolve_binary(binary: &str) -> Result<PathBuf, CodecError> {
    let candidate = Path::new(binary);
    if candidate.components().count() > 1 || candidate.is_absolute() {
        return if candidate.is_file() {
            Ok(candidate.to_path_buf())
        } else {
            Err(CodecError::MissingBinary(binary.to_string()))
        };
    }
    let path = env::var_os("PATH").unwrap_or_default();
    for dir in env::split_paths(&path) {
        let full = dir.join(binary);
        if full.is_file() {
            return Ok(full);
        }
    }
    Err(CodecError::MissingBinary(binary.to_string()))
}

/// First line of the binary's version output, or `"unknown"`.
pub fn probe_version(binary: &str, args: &[String]) -> String {
    let Ok(out) = Command::new(binary)
        .args(args)
        .stdin(Stdio::null())
        .output()
    else {
        return "unknown".into();
    };
    let text = format!(
        "{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("unknown")
        .to_string()
}

fn tail(path: &Path, max: u64) -> String {
    let Ok(mut f) = File::open(path) else {
        return String::new();
    };
    let len = f.metadata().map(|m| m.len()).unwrap_or(0);
    let _ = f.seek(SeekFrom::Start(len.saturating_sub(max)));
    let mut buf = Vec::new();
    let _ = f.read_to_end(&mut buf);
    String::from_utf8_lossy(&buf).trim().to_string()
}

/// Runs `argv` with stdout and stderr captured to `log`. Returns wall seconds.
pub fn run_logged(argv: &[String], log: &Path, context: &str) -> Result<f64, CodecError> {
    if let Some(dir) = log.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let out = File::create(log).map_err(io_err(log))?;
    let err = out.try_clone().map_err(io_err(log))?;
    let start = Instant::now();
    let status = Command::new(&argv[0])
        .args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(out)
        .stderr(err)
        .status()
        .map_err(|e| CodecError::CodecFailure {
            context: context.to_string(),
            status: "spawn failure".into(),
            stderr: e.to_string(),
        })?;
    let elapsed = start.elapsed().as_secs_f64();
    if !status.success() {
        return Err(CodecError::CodecFailure {
            context: context.to_string(),
            status: status.to_string(),
            stderr: tail(log, 2048),
        });
    }
    Ok(elapsed)
}

pub fn sha256_file(path: &Path) -> Result<String, CodecError> {
    let mut f = File::open(path).map_err(io_err(path))?;
    let mut h = Sha256::new();
    io::copy(&mut f, &mut h).map_err(io_err(path))?;
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResult {
    pub bitstream_path: PathBuf,
    pub bitstream_bytes: u64,
    pub bitstream_sha256: String,
    pub bitrate_kbps: f64,
    pub encode_wall_s: f64,
    pub qp_used: u32,
    pub exit_status: i32,
    /// Energy runs whose output differed from the statistics bitstream.
    pub hash_mismatches: usize,
}

/// Where one (codec, sequence, QP) run keeps its files.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub bitstream: PathBuf,
    pub discard_bitstream: PathBuf,
    pub decoded: PathBuf,
    pub discard_decoded: PathBuf,
    pub log_dir: PathBuf,
}

impl RunLayout {
    pub fn new(workdir: &Path, spec: &CodecSpec, seq: &SequenceMeta, qp: u32) -> Self {
        let stem = format!("{}_{}_qp{}", seq.class_label, seq.name, qp);
        let ext = &spec.bitstream_ext;
        RunLayout {
            bitstream: workdir.join("bitstreams").join(&spec.id).join(format!("{stem}.{ext}")),
            discard_bitstream: workdir.join("scratch").join(format!("discard.{ext}")),
            decoded: workdir.join("decoded").join(&spec.id).join(format!("{stem}.yuv")),
            discard_decoded: workdir.join("scratch").join("discard.yuv"),
            log_dir: workdir.join("logs").join(&spec.id).join(stem),
        }
    }
}

fn ensure_parent(path: &Path) -> Result<(), CodecError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(())
}

/// Encodes once for statistics, then measures encode energy over repeated
/// encodes to a scratch path.
pub fn run_encode(
    spec: &CodecSpec,
    seq: &SequenceMeta,
    qp: u32,
    layout: &RunLayout,
    meter: &mut SessionMeter<'_>,
    policy: &ConvergencePolicy,
) -> Result<(EncodeResult, ConvergedStat), CodecError> {
    if !seq.path.is_file() {
        return Err(CodecError::InputMissing(seq.path.clone()));
    }
    resolve_binary(&spec.encoder_binary()?)?;
    ensure_parent(&layout.bitstream)?;
    ensure_parent(&layout.discard_bitstream)?;

    let argv = render_command(
        spec,
        seq,
        qp,
        &CommandPaths {
            input: &seq.path,
            output: &layout.bitstream,
        },
        Phase::Encode,
    )?;
    let context = format!("{} encode of {} at QP {qp}", spec.id, seq.name);
    let wall = run_logged(&argv, &layout.log_dir.join("encode_stats.log"), &context)?;
    let bytes = fs::metadata(&layout.bitstream)
        .map_err(io_err(&layout.bitstream))?
        .len();
    if bytes == 0 {
        return Err(CodecError::CodecFailure {
            context,
            status: "empty bitstream".into(),
            stderr: tail(&layout.log_dir.join("encode_stats.log"), 2048),
        });
    }
    let digest = sha256_file(&layout.bitstream)?;
    let bitrate_kbps = compute_bitrate(bytes, seq.frame_count, seq.fps)?;

    let discard_argv = render_command(
        spec,
        seq,
        qp,
        &CommandPaths {
            input: &seq.path,
            output: &layout.discard_bitstream,
        },
        Phase::Encode,
    )?;
    let mut run = 0usize;
    let mut mismatches = 0usize;
    let stat = run_converged_workload(meter, Phase::Encode, 1, policy, || {
        let log = layout.log_dir.join(format!("encode_energy_{run}.log"));
        run += 1;
        let _ = fs::remove_file(&layout.discard_bitstream);
        run_logged(&discard_argv, &log, &context).map_err(|e| Box::new(e) as BoxError)?;
        if sha256_file(&layout.discard_bitstream).map_err(|e| Box::new(e) as BoxError)? != digest {
            mismatches += 1;
        }
        Ok(())
    })?;
    let _ = fs::remove_file(&layout.discard_bitstream);

    Ok((
        EncodeResult {
            bitstream_path: layout.bitstream.clone(),
            bitstream_bytes: bytes,
            bitstream_sha256: digest,
            bitrate_kbps,
            encode_wall_s: wall,
            qp_used: qp,
            exit_status: 0,
            hash_mismatches: mismatches,
        },
        stat,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub decoded_path: PathBuf,
    pub decode_wall_s: f64,
}

/// Decodes once to YUV for quality metrics, then measures decode energy over
/// repeated decodes (`inner_loops` back to back per measurement).
pub fn run_decode(
    spec: &CodecSpec,
    seq: &SequenceMeta,
    bitstream: &Path,
    layout: &RunLayout,
    meter: &mut SessionMeter<'_>,
    policy: &ConvergencePolicy,
    inner_loops: u32,
) -> Result<(DecodeResult, ConvergedStat), CodecError> {
    if !bitstream.is_file() {
        return Err(CodecError::InputMissing(bitstream.to_path_buf()));
    }
    resolve_binary(&spec.decoder_binary()?)?;
    ensure_parent(&layout.decoded)?;
    ensure_parent(&layout.discard_decoded)?;

    let argv = render_command(
        spec,
        seq,
        0,
        &CommandPaths {
            input: bitstream,
            output: &layout.decoded,
        },
        Phase::Decode,
    )?;
    let context = format!("{} decode of {}", spec.id, bitstream.display());
    let _ = fs::remove_file(&layout.decoded);
    let wall = run_logged(&argv, &layout.log_dir.join("decode_ref.log"), &context)?;
    let len = fs::metadata(&layout.decoded)
        .map_err(io_err(&layout.decoded))?
        .len();
    let expect = seq.frame_count * seq.frame_bytes();
    if len != expect {
        return Err(CodecError::CodecFailure {
            context,
            status: format!("decoded {len} bytes, expected {expect}"),
            stderr: tail(&layout.log_dir.join("decode_ref.log"), 2048),
        });
    }

    let discard_argv = render_command(
        spec,
        seq,
        0,
        &CommandPaths {
            input: bitstream,
            output: &layout.discard_decoded,
        },
        Phase::Decode,
    )?;
    let mut run = 0usize;
    let stat = run_converged_workload(meter, Phase::Decode, inner_loops, policy, || {
        let log = layout.log_dir.join(format!("decode_energy_{run}.log"));
        run += 1;
        run_logged(&discard_argv, &log, &context).map_err(|e| Box::new(e) as BoxError)?;
        Ok(())
    })?;
    let _ = fs::remove_file(&layout.discard_decoded);

    Ok((
        DecodeResult {
            decoded_path: layout.decoded.clone(),
            decode_wall_s: wall,
        },
        stat,
    ))
}
