//! Full-reference quality (PSNR, VMAF) and SI/TI content descriptors on raw
//! planar 4:2:0 video.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{render_template_with, resolve_binary, CodecError, SequenceMeta};

/// PSNR reported for identical planes.
pub const DEFAULT_PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("{path}: size {len} is not a multiple of the {frame_bytes}-byte frame")]
    SizeMismatch {
        path: PathBuf,
        len: u64,
        frame_bytes: u64,
    },
    #[error("plane dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("frame counts differ: reference {0}, distorted {1}")]
    FrameCountMismatch(usize, usize),
    #[error("sample value {value} exceeds {bit_depth}-bit range")]
    SampleOutOfRange { value: u16, bit_depth: u8 },
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("VMAF tool `{0}` not found")]
    ToolMissing(String),
    #[error("VMAF tool failed ({status}): {stderr}")]
    ToolFailure { status: String, stderr: String },
    #[error("cannot parse VMAF output: {0}")]
    ParseError(String),
    #[error(transparent)]
    Template(#[from] CodecError),
}

/// One 2-D sample array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<u16>) -> Self {
        assert_eq!(data.len(), width * height, "plane data length");
        Plane { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: u16) -> Self {
        Plane::new(width, height, vec![value; width * height])
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }
}

/// A 4:2:0 frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePlanes {
    pub y: Plane,
    pub u: Plane,
    pub v: Plane,
    pub bit_depth: u8,
}

impl FramePlanes {
    pub fn width(&self) -> usize {
        self.y.width
    }

    pub fn height(&self) -> usize {
        self.y.height
    }

    pub fn planes(&self) -> [&Plane; 3] {
        [&self.y, &self.u, &self.v]
    }
}

/// Iterator over the frames of a headerless planar YUV file.
pub struct YuvReader {
    reader: BufReader<File>,
    path: PathBuf,
    width: usize,
    height: usize,
    bit_depth: u8,
    remaining: u64,
    buf: Vec<u8>,
}

impl YuvReader {
    pub fn frame_count(&self) -> u64 {
        self.remaining
    }

    fn read_plane(&mut self, w: usize, h: usize) -> Result<Plane, QualityError> {
        let wide = self.bit_depth > 8;
        let n = w * h * if wide { 2 } else { 1 };
        self.buf.resize(n, 0);
        self.reader.read_exact(&mut self.buf).map_err(|source| QualityError::Io {
            path: self.path.clone(),
            source,
        })?;
        let max = (1u32 << self.bit_depth) - 1;
        let data: Vec<u16> = if wide {
            self.buf
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect()
        } else {
            self.buf.iter().map(|&b| b as u16).collect()
        };
        if let Some(&bad) = data.iter().find(|&&v| v as u32 > max) {
            return Err(QualityError::SampleOutOfRange {
                value: bad,
                bit_depth: self.bit_depth,
            });
        }
        Ok(Plane::new(w, h, data))
    }
}

impl Iterator for YuvReader {
    type Item = Result<FramePlanes, QualityError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let (w, h) = (self.width, self.height);
        let frame = (|| {
            let y = self.read_plane(w, h)?;
            let u = self.read_plane(w / 2, h / 2)?;
            let v = self.read_plane(w / 2, h / 2)?;
            Ok(FramePlanes {
                y,
                u,
                v,
                bit_depth: self.bit_depth,
            })
        })();
        if frame.is_err() {
            self.remaining = 0;
        }
        Some(frame)
    }
}

/// Opens a raw 4:2:0 file described by `meta` (its path is ignored in favour
/// of `path`). 10-bit samples are 16-bit little-endian words.
pub fn read_yuv(path: &Path, meta: &SequenceMeta) -> Result<YuvReader, QualityError> {
    let io_err = |source| QualityError::Io {
        path: path.to_path_buf(),
        source,
    };
    let len = fs::metadata(path).map_err(io_err)?.len();
    let frame_bytes = meta.frame_bytes();
    if frame_bytes == 0 || len % frame_bytes != 0 {
        return Err(QualityError::SizeMismatch {
            path: path.to_path_buf(),
            len,
            frame_bytes,
        });
    }
    let file = File::open(path).map_err(io_err)?;
    Ok(YuvReader {
        reader: BufReader::with_capacity(1 << 20, file),
        path: path.to_path_buf(),
        width: meta.width as usize,
        height: meta.height as usize,
        bit_depth: meta.bit_depth,
        remaining: len / frame_bytes,
        buf: Vec::new(),
    })
}

fn check_dims(a: &Plane, b: &Plane) -> Result<(), QualityError> {
    if a.width != b.width || a.height != b.height {
        return Err(QualityError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

/// Mean squared error between two planes.
pub fn mse_plane(reference: &Plane, distorted: &Plane) -> Result<f64, QualityError> {
    check_dims(reference, distorted)?;
    let sse: u64 = reference
        .data
        .iter()
        .zip(&distorted.data)
        .map(|(&a, &b)| {
            let d = a as i64 - b as i64;
            (d * d) as u64
        })
        .sum();
    Ok(sse as f64 / reference.data.len().max(1) as f64)
}

/// PSNR in dB with peak `2^bit_depth - 1`; zero MSE yields `cap_db`.
pub fn psnr_plane(reference: &Plane, distorted: &Plane, bit_depth: u8, cap_db: f64) -> Result<f64, QualityError> {
    let mse = mse_plane(reference, distorted)?;
    Ok(psnr_from_mse(mse, bit_depth, cap_db))
}

pub fn psnr_from_mse(mse: f64, bit_depth: u8, cap_db: f64) -> f64 {
    if mse == 0.0 {
        return cap_db;
    }
    let peak = ((1u32 << bit_depth) - 1) as f64;
    (10.0 * (peak * peak / mse).log10()).min(cap_db)
}

/// How per-plane PSNRs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsnrMode {
    /// Arithmetic mean of Y, U and V.
    #[default]
    Mean,
    /// (6·Y + U + V) / 8.
    Weighted611,
}

/// Weighted mean of the plane PSNRs, written as an offset from luma so equal
/// inputs come back unchanged.
pub fn psnr_combined(y: f64, u: f64, v: f64, mode: PsnrMode) -> f64 {
    let chroma = (u - y) + (v - y);
    match mode {
        PsnrMode::Mean => y + chroma / 3.0,
        PsnrMode::Weighted611 => y + chroma / 8.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub psnr_y: f64,
    pub psnr_u: f64,
    pub psnr_v: f64,
    pub psnr_yuv: f64,
    pub vmaf: Option<f64>,
}

/// Per-plane PSNR averaged over frames, combined per `mode`.
pub fn sequence_psnr(
    reference: &Path,
    distorted: &Path,
    meta: &SequenceMeta,
    mode: PsnrMode,
    cap_db: f64,
) -> Result<QualityScore, QualityError> {
    let r = read_yuv(reference, meta)?;
    let d = read_yuv(distorted, meta)?;
    if r.frame_count() != d.frame_count() {
        return Err(QualityError::FrameCountMismatch(
            r.frame_count() as usize,
            d.frame_count() as usize,
        ));
    }
    let mut sums = [0.0f64; 3];
    let mut n = 0usize;
    for (fr, fd) in r.zip(d) {
        let (fr, fd) = (fr?, fd?);
        for (k, (a, b)) in fr.planes().into_iter().zip(fd.planes()).enumerate() {
            sums[k] += psnr_plane(a, b, meta.bit_depth, cap_db)?;
        }
        n += 1;
    }
    if n == 0 {
        return Err(QualityError::TooFewFrames(0));
    }
    let [y, u, v] = sums.map(|s| s / n as f64);
    Ok(QualityScore {
        psnr_y: y,
        psnr_u: u,
        psnr_v: v,
        psnr_yuv: psnr_combined(y, u, v, mode),
        vmaf: None,
    })
}

// ---------------------------------------------------------------------------
// VMAF
// ---------------------------------------------------------------------------

pub const VMAF_PLACEHOLDERS: [&str; 6] = ["ref", "dist", "width", "height", "BD", "json"];

/// External VMAF tool invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmafTool {
    pub binary: String,
    /// Arguments with `$ref`, `$dist`, `$width`, `$height`, `$BD`, `$json`.
    pub args: String,
    /// Model identifier recorded in reports; `None` means the tool's bundled default.
    #[serde(default)]
    pub model: Option<String>,
}

impl Default for VmafTool {
    fn default() -> Self {
        VmafTool {
            binary: "vmaf".into(),
            args: "--reference $ref --distorted $dist --width $width --height $height --pixel_format 420 --bitdepth $BD --json --output $json".into(),
            model: None,
        }
    }
}

impl VmafTool {
    pub fn model_id(&self) -> String {
        self.model.clone().unwrap_or_else(|| "bundled-default".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmafResult {
    pub pooled_mean: f64,
    pub frames: Vec<f64>,
    pub tool_version: Option<String>,
    pub model: String,
}

impl VmafResult {
    /// Renders the result in the tool's JSON layout.
    pub fn to_tool_json(&self) -> String {
        let frames: Vec<_> = self
            .frames
            .iter()
            .enumerate()
            .map(|(i, v)| serde_json::json!({ "frameNum": i, "metrics": { "vmaf": v } }))
            .collect();
        let mut doc = serde_json::json!({
            "frames": frames,
            "pooled_metrics": { "vmaf": { "mean": self.pooled_mean } },
        });
        if let Some(v) = &self.tool_version {
            doc["version"] = serde_json::Value::String(v.clone());
        }
        doc.to_string()
    }
}

#[derive(Deserialize)]
struct RawVmaf {
    version: Option<String>,
    #[serde(default)]
    frames: Vec<RawFrame>,
    pooled_metrics: BTreeMap<String, RawPooled>,
}

#[derive(Deserialize)]
struct RawFrame {
    metrics: BTreeMap<String, f64>,
}

#[derive(Deserialize)]
struct RawPooled {
    mean: f64,
}

/// Parses the JSON report of the VMAF tool: a `pooled_metrics.vmaf.mean`
/// value and a `frames[].metrics.vmaf` array.
pub fn parse_vmaf_json(text: &str, model: &str) -> Result<VmafResult, QualityError> {
    let raw: RawVmaf = serde_json::from_str(text).map_err(|e| QualityError::ParseError(e.to_string()))?;
    let pooled = raw
        .pooled_metrics
        .get("vmaf")
        .ok_or_else(|| QualityError::ParseError("missing pooled_metrics.vmaf".into()))?;
    let frames = raw
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            f.metrics
                .get("vmaf")
                .copied()
                .ok_or_else(|| QualityError::ParseError(format!("frame {i} has no vmaf metric")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if !pooled.mean.is_finite() || frames.iter().any(|v| !v.is_finite()) {
        return Err(QualityError::ParseError("non-finite VMAF score".into()));
    }
    Ok(VmafResult {
        pooled_mean: pooled.mean,
        frames,
        tool_version: raw.version,
        model: model.to_string(),
    })
}

/// Runs the external VMAF tool and parses its JSON output.
pub fn vmaf_score(
    tool: &VmafTool,
    reference: &Path,
    distorted: &Path,
    meta: &SequenceMeta,
    json_out: &Path,
) -> Result<VmafResult, QualityError> {
    let binary = resolve_binary(&tool.binary).map_err(|_| QualityError::ToolMissing(tool.binary.clone()))?;
    let mut vars = BTreeMap::new();
    vars.insert("ref", reference.display().to_string());
    vars.insert("dist", distorted.display().to_string());
    vars.insert("width", meta.width.to_string());
    vars.insert("height", meta.height.to_string());
    vars.insert("BD", meta.bit_depth.to_string());
    vars.insert("json", json_out.display().to_string());
    let args = render_template_with(&tool.args, &VMAF_PLACEHOLDERS, &vars)?;
    if let Some(dir) = json_out.parent() {
        fs::create_dir_all(dir).map_err(|source| QualityError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let _ = fs::remove_file(json_out);
    let out = Command::new(binary)
        .args(&args)
        .stdin(Stdio::null())
        .output()
        .map_err(|e| QualityError::ToolFailure {
            status: "spawn failure".into(),
            stderr: e.to_string(),
        })?;
    if !out.status.success() {
        return Err(QualityError::ToolFailure {
            status: out.status.to_string(),
            stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        });
    }
    let text = fs::read_to_string(json_out).map_err(|e| QualityError::ToolFailure {
        status: out.status.to_string(),
        stderr: format!("no JSON output at {}: {e}", json_out.display()),
    })?;
    parse_vmaf_json(&text, &tool.model_id())
}

// ---------------------------------------------------------------------------
// SI / TI
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiTi {
    pub si: f64,
    pub ti: f64,
}

fn luma_8bit(frame: &FramePlanes) -> Vec<f64> {
    let scale = (1u32 << frame.bit_depth.saturating_sub(8)) as f64;
    frame.y.data.iter().map(|&v| v as f64 / scale).collect()
}

fn population_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
}

/// Standard deviation of the Sobel gradient magnitude over the interior
/// (border pixels have no full 3×3 neighbourhood and are skipped).
pub fn spatial_information(luma: &[f64], width: usize, height: usize) -> f64 {
    if width < 3 || height < 3 {
        return 0.0;
    }
    let p = |x: usize, y: usize| luma[y * width + x];
    let mut mags = Vec::with_capacity((width - 2) * (height - 2));
    for y in 1..height - 1 {
        for x in 1..width - 1 {
            let gx = (p(x + 1, y - 1) + 2.0 * p(x + 1, y) + p(x + 1, y + 1))
                - (p(x - 1, y - 1) + 2.0 * p(x - 1, y) + p(x - 1, y + 1));
            let gy = (p(x - 1, y + 1) + 2.0 * p(x, y + 1) + p(x + 1, y + 1))
                - (p(x - 1, y - 1) + 2.0 * p(x, y - 1) + p(x + 1, y - 1));
            mags.push((gx * gx + gy * gy).sqrt());
        }
    }
    population_std(mags.iter().copied())
}

/// Standard deviation of the pixelwise difference of two luma frames.
pub fn temporal_information(prev: &[f64], next: &[f64]) -> f64 {
    population_std(prev.iter().zip(next).map(|(a, b)| b - a))
}

/// SI is the maximum per-frame spatial information, TI the maximum over
/// consecutive frame pairs of the temporal information. Luma is scaled to the
/// 8-bit range first.
pub fn compute_siti<I>(frames: I) -> Result<SiTi, QualityError>
where
    I: IntoIterator<Item = Result<FramePlanes, QualityError>>,
{
    let mut si: f64 = 0.0;
    let mut ti: f64 = 0.0;
    let mut prev: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for frame in frames {
        let frame = frame?;
        let luma = luma_8bit(&frame);
        si = si.max(spatial_information(&luma, frame.width(), frame.height()));
        if let Some(p) = &prev {
            if p.len() != luma.len() {
                return Err(QualityError::DimensionMismatch(0, p.len(), 0, luma.len()));
            }
            ti = ti.max(temporal_information(p, &luma));
        }
        prev = Some(luma);
        count += 1;
    }
    if count < 2 {
        return Err(QualityError::TooFewFrames(count));
    }
    Ok(SiTi { si, ti })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(w: usize, h: usize, f: impl Fn(usize, usize) -> u16) -> Plane {
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(f(x, y));
            }
        }
        Plane::new(w, h, data)
    }

    fn frame_from_luma(y: Plane) -> FramePlanes {
        let (w, h) = (y.width / 2, y.height / 2);
        FramePlanes {
            y,
            u: Plane::filled(w, h, 128),
            v: Plane::filled(w, h, 128),
            bit_depth: 8,
        }
    }

    #[test]
    fn identical_planes_hit_cap() {
        let a = plane(8, 8, |x, y| (x * 7 + y * 3) as u16);
        assert_eq!(psnr_plane(&a, &a, 8, DEFAULT_PSNR_CAP_DB).unwrap(), 100.0);
    }

    #[test]
    fn black_vs_white_is_zero_db() {
        let a = Plane::filled(4, 4, 0);
        let b = Plane::filled(4, 4, 255);
        assert_eq!(psnr_plane(&a, &b, 8, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let a = Plane::filled(4, 4, 0);
        let b = Plane::filled(4, 2, 0);
        assert!(matches!(psnr_plane(&a, &b, 8, 100.0), Err(QualityError::DimensionMismatch(..))));
    }

    #[test]
    fn combined_modes() {
        assert_eq!(psnr_combined(40.0, 42.0, 44.0, PsnrMode::Mean), 42.0);
        assert_eq!(psnr_combined(40.0, 40.0, 40.0, PsnrMode::Mean), 40.0);
        assert_eq!(psnr_combined(40.0, 42.0, 44.0, PsnrMode::Weighted611), 40.75);
    }

    #[test]
    fn constant_video_has_zero_siti() {
        let frames = (0..3).map(|_| Ok(frame_from_luma(Plane::filled(16, 16, 128))));
        let s = compute_siti(frames).unwrap();
        assert_eq!((s.si, s.ti), (0.0, 0.0));
    }

    #[test]
    fn static_complex_video_has_zero_ti() {
        let y = plane(16, 16, |x, y| ((x * 37 + y * 91) % 256) as u16);
        let frames = (0..3).map(|_| Ok(frame_from_luma(y.clone())));
        let s = compute_siti(frames).unwrap();
        assert!(s.si > 0.0);
        assert_eq!(s.ti, 0.0);
    }

    #[test]
    fn single_frame_rejected() {
        let frames = std::iter::once(Ok(frame_from_luma(Plane::filled(16, 16, 1))));
        assert!(matches!(compute_siti(frames), Err(QualityError::TooFewFrames(1))));
    }

    #[test]
    fn ten_bit_luma_scaled_to_eight() {
        let mut f = frame_from_luma(Plane::filled(4, 4, 1020));
        f.bit_depth = 10;
        assert!(luma_8bit(&f).iter().all(|&v| v == 255.0));
    }

    const LIBVMAF_JSON: &str = r#"{
      "version": "3.0.0",
      "fps": 12.5,
      "frames": [
        {"frameNum": 0, "metrics": {"integer_adm2": 0.99, "vmaf": 97.25}},
        {"frameNum": 1, "metrics": {"integer_adm2": 0.98, "vmaf": 95.75}}
      ],
      "pooled_metrics": {
        "vmaf": {"min": 95.75, "max": 97.25, "mean": 96.5, "harmonic_mean": 96.49}
      },
      "aggregate_metrics": {}
    }"#;

    #[test]
    fn parses_libvmaf_json() {
        let r = parse_vmaf_json(LIBVMAF_JSON, "bundled-default").unwrap();
        assert_eq!(r.pooled_mean, 96.5);
        assert_eq!(r.frames, vec![97.25, 95.75]);
        assert_eq!(r.tool_version.as_deref(), Some("3.0.0"));
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(parse_vmaf_json("{not json", "m"), Err(QualityError::ParseError(_))));
        assert!(matches!(
            parse_vmaf_json(r#"{"frames": [], "pooled_metrics": {}}"#, "m"),
            Err(QualityError::ParseError(_))
        ));
    }

    #[test]
    fn missing_tool() {
        let tool = VmafTool {
            binary: "no-such-vmaf-binary".into(),
            ..Default::default()
        };
        let meta = crate::codec::ctc_sequences().pop().unwrap();
        let e = vmaf_score(&tool, Path::new("/a"), Path::new("/b"), &meta, Path::new("/tmp/x.json")).unwrap_err();
        assert!(matches!(e, QualityError::ToolMissing(_)));
    }
}
