//! Deterministic stand-in for a real codec and VMAF tool, used by the
//! end-to-end tests.
//!
//! ```text
//! stub-codec encode <in.yuv> <out> <width> <height> <qp> <bitdepth> [divisor] [pad_unit]
//! stub-codec decode <in> <out.yuv>
//! stub-codec vmaf --reference <ref> --distorted <dist> --width <w> --height <h> --bitdepth <bd> --output <json>
//! stub-codec --version
//! ```
//!
//! Encoding quantizes every sample with step `1 + qp / divisor` and appends
//! `frames * (64 - qp) * pad_unit` padding bytes, so bitrate and quality both
//! fall as QP rises.

use std::env;
use std::fs;
use std::process::ExitCode;

const MAGIC: &[u8; 4] = b"STUB";
const HEADER_LEN: usize = 4 + 4 * 5 + 8;

fn arg<T: std::str::FromStr>(args: &[String], i: usize, what: &str) -> Result<T, String> {
    args.get(i)
        .ok_or_else(|| format!("missing {what}"))?
        .parse()
        .map_err(|_| format!("bad {what}: {}", args[i]))
}

fn samples(bytes: &[u8], bd: u32) -> Vec<u16> {
    if bd > 8 {
        bytes.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect()
    } else {
        bytes.iter().map(|&b| b as u16).collect()
    }
}

fn to_bytes(values: &[u16], bd: u32) -> Vec<u8> {
    if bd > 8 {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    } else {
        values.iter().map(|&v| v as u8).collect()
    }
}

fn frame_bytes(w: u64, h: u64, bd: u32) -> u64 {
    (w * h + 2 * (w / 2) * (h / 2)) * if bd > 8 { 2 } else { 1 }
}

fn encode(args: &[String]) -> Result<(), String> {
    let input = &args[0];
    let output: &String = args.get(1).ok_or("missing output")?;
    let w: u32 = arg(args, 2, "width")?;
    let h: u32 = arg(args, 3, "height")?;
    let qp: u32 = arg(args, 4, "qp")?;
    let bd: u32 = arg(args, 5, "bitdepth")?;
    let divisor: u32 = if args.len() > 6 { arg(args, 6, "divisor")? } else { 3 };
    let pad_unit: u64 = if args.len() > 7 { arg(args, 7, "pad_unit")? } else { 4096 };
    let raw = fs::read(input).map_err(|e| format!("{input}: {e}"))?;
    let fb = frame_bytes(w as u64, h as u64, bd);
    if fb == 0 || !(raw.len() as u64).is_multiple_of(fb) || raw.is_empty() {
        return Err(format!("{input}: size {} is not a whole number of frames", raw.len()));
    }
    let frames = raw.len() as u64 / fb;
    let step = 1 + qp / divisor.max(1);
    let mut out = Vec::with_capacity(HEADER_LEN + raw.len());
    out.extend_from_slice(MAGIC);
    for v in [w, h, bd, qp, step] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&frames.to_le_bytes());
    let quantized: Vec<u16> = samples(&raw, bd).iter().map(|&s| (s as u32 / step) as u16).collect();
    out.extend(to_bytes(&quantized, bd));
    out.resize(out.len() + (frames * 64u64.saturating_sub(qp as u64) * pad_unit) as usize, 0);
    fs::write(output, out).map_err(|e| format!("{output}: {e}"))
}

fn decode(args: &[String]) -> Result<(), String> {
    let input = &args[0];
    let output: &String = args.get(1).ok_or("missing output")?;
    let data = fs::read(input).map_err(|e| format!("{input}: {e}"))?;
    if data.len() < HEADER_LEN || &data[..4] != MAGIC {
        return Err(format!("{input}: not a stub bitstream"));
    }
    let word = |i: usize| u32::from_le_bytes(data[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (w, h, bd, step) = (word(0), word(1), word(2), word(4));
    let frames = u64::from_le_bytes(data[24..32].try_into().unwrap());
    let n = (frame_bytes(w as u64, h as u64, bd) * frames) as usize;
    let body = data.get(HEADER_LEN..HEADER_LEN + n).ok_or("truncated bitstream")?;
    let max = (1u32 << bd) - 1;
    let values: Vec<u16> = samples(body, bd)
        .iter()
        .map(|&q| (q as u32 * step + step / 2).min(max) as u16)
        .collect();
    fs::write(output, to_bytes(&values, bd)).map_err(|e| format!("{output}: {e}"))
}

fn flag<'a>(args: &'a [String], name: &str) -> Result<&'a str, String> {
    args.iter()
        .position(|a| a == name)
        .and_then(|i| args.get(i + 1))
        .map(String::as_str)
        .ok_or_else(|| format!("missing {name}"))
}

fn vmaf(args: &[String]) -> Result<(), String> {
    let reference = flag(args, "--reference")?;
    let distorted = flag(args, "--distorted")?;
    let w: u64 = flag(args, "--width")?.parse().map_err(|_| "bad width")?;
    let h: u64 = flag(args, "--height")?.parse().map_err(|_| "bad height")?;
    let bd: u32 = flag(args, "--bitdepth")?.parse().map_err(|_| "bad bitdepth")?;
    let output = flag(args, "--output")?;
    let a = fs::read(reference).map_err(|e| format!("{reference}: {e}"))?;
    let b = fs::read(distorted).map_err(|e| format!("{distorted}: {e}"))?;
    if a.len() != b.len() {
        return Err("reference and distorted differ in size".into());
    }
    let fb = frame_bytes(w, h, bd) as usize;
    let luma = (w * h) as usize * if bd > 8 { 2 } else { 1 };
    let scale = (1u32 << (bd - 8)) as f64;
    let scores: Vec<f64> = a
        .chunks_exact(fb)
        .zip(b.chunks_exact(fb))
        .map(|(fa, fb)| {
            let (ya, yb) = (samples(&fa[..luma], bd), samples(&fb[..luma], bd));
            let mse = ya
                .iter()
                .zip(&yb)
                .map(|(&x, &y)| ((x as f64 - y as f64) / scale).powi(2))
                .sum::<f64>()
                / ya.len() as f64;
            let s = (100.0 - 4.0 * mse.sqrt()).clamp(0.0, 100.0);
            (s * 1e6).round() / 1e6
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
    let frames: Vec<String> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{{\"frameNum\": {i}, \"metrics\": {{\"vmaf\": {s}}}}}"))
        .collect();
    let json = format!(
        "{{\"version\": \"stub-1.0\", \"frames\": [{}], \"pooled_metrics\": {{\"vmaf\": {{\"mean\": {mean}}}}}}}\n",
        frames.join(", ")
    );
    fs::write(output, json).map_err(|e| format!("{output}: {e}"))
}

fn main() -> ExitCode {
    let args: Vec<String> = env::args().skip(1).collect();
    let result = match args.first().map(String::as_str) {
        Some("--version") => {
            println!("stub-codec 1.0");
            Ok(())
        }
        Some("encode") if args.len() >= 7 => encode(&args[1..]),
        Some("decode") if args.len() >= 3 => decode(&args[1..]),
        Some("vmaf") => vmaf(&args[1..]),
        _ => Err("usage: stub-codec encode|decode|vmaf ...".into()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stub-codec: {e}");
            ExitCode::FAILURE
        }
    }
}
