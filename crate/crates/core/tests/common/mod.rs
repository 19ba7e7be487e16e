//! Builds the synthetic campaign fixture: two stub codecs, two Class D
//! sequences, replayed power traces and a config file.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub const STUB: &str = env!("CARGO_BIN_EXE_stub-codec");
pub const CLI: &str = env!("CARGO_BIN_EXE_codec-energy");

pub const WIDTH: usize = 416;
pub const HEIGHT: usize = 240;
pub const FRAMES: usize = 3;
pub const QP51: [u32; 4] = [22, 27, 32, 37];
pub const SEQUENCES: [(&str, u32); 2] = [("BQSquare", 1), ("BlowingBubbles", 2)];
/// (id, quantizer divisor, padding unit, power scale)
pub const CODECS: [(&str, u32, u32, f64); 2] = [("stub-a", 3, 4096, 0.5), ("stub-b", 4, 3500, 1.25)];
pub const IDLE_W: f64 = 5.0;

pub fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_analysis.json")
}

/// Deterministic 8-bit 4:2:0 content with texture and motion.
pub fn write_sequence(path: &Path, seed: u32) {
    let mut out = Vec::with_capacity(FRAMES * WIDTH * HEIGHT * 3 / 2);
    for f in 0..FRAMES as u32 {
        for y in 0..HEIGHT as u32 {
            for x in 0..WIDTH as u32 {
                let v = (x * 3 + y * 2 + f * 5 * seed) ^ ((x / 8 + y / 8 + seed) * 37);
                out.push((v % 256) as u8);
            }
        }
        for plane in 0..2u32 {
            for y in 0..HEIGHT as u32 / 2 {
                for x in 0..WIDTH as u32 / 2 {
                    out.push((96 + (x + 2 * y + plane * 17 + f * seed) % 64) as u8);
                }
            }
        }
    }
    fs::write(path, out).unwrap();
}

fn write_trace(path: &Path, watts: impl Fn(usize) -> f64, samples: usize) {
    let mut s = String::from("t_ms,pkg_w,dram_w\n");
    for i in 0..samples {
        let _ = writeln!(s, "{},{},0", i * 100, watts(i));
    }
    fs::write(path, s).unwrap();
}

/// Encode and decode traces per cell: active power grows as QP falls, with a
/// small QP-dependent wobble so the fits are not exact.
pub fn write_traces(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    write_trace(&dir.join("idle.csv"), |i| IDLE_W + if i % 2 == 0 { 0.1 } else { -0.1 }, 31);
    for (codec, _, _, scale) in CODECS {
        for (seq, seed) in SEQUENCES {
            for (rung, qp51) in QP51.iter().enumerate() {
                let qp = *qp51;
                let wobble = [0.0, 0.3, -0.2, 0.1][rung];
                let enc = IDLE_W + scale * (64.0 - qp as f64) * (1.0 + 0.1 * seed as f64) + wobble;
                let dec = IDLE_W + 0.1 * scale * (64.0 - qp as f64) - wobble / 10.0;
                write_trace(&dir.join(format!("{codec}__D__{seq}__{qp}__encode.csv")), |_| enc, 21);
                write_trace(&dir.join(format!("{codec}__D__{seq}__{qp}__decode.csv")), |_| dec, 11);
            }
        }
    }
}

pub fn config_text(workdir: &Path, seq_dir: &Path, trace_dir: &Path) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "anchor = \"stub-a\"");
    let _ = writeln!(s, "workdir = {:?}", workdir.display().to_string());
    let _ = writeln!(s, "sequence_dir = {:?}", seq_dir.display().to_string());
    let _ = writeln!(s, "qp51 = {:?}", QP51);
    let _ = writeln!(s, "\n[convergence]\nmin_runs = 3\nmax_runs_encode = 5\nmax_runs_decode = 5");
    let _ = writeln!(
        s,
        "\n[power]\nsource = \"replay\"\nreplay_dir = {:?}\ninterval_ms = 100\nidle_s = 3.0\nidle_min_s = 2.0",
        trace_dir.display().to_string()
    );
    let _ = writeln!(
        s,
        "\n[vmaf]\nbinary = {STUB:?}\nargs = \"vmaf --reference $ref --distorted $dist --width $width --height $height --bitdepth $BD --output $json\""
    );
    for (id, div, pad, _) in CODECS {
        let _ = writeln!(
            s,
            "\n[[codecs]]\nid = \"{id}\"\nencode_template = \"{STUB} encode $input $output $width $height $QP $BD {div} {pad}\"\ndecode_template = \"{STUB} decode $input $output\"\nqp_scale = 51\nbitstream_ext = \"stub\"\nversion_args = [\"--version\"]"
        );
    }
    for (name, _) in SEQUENCES {
        let _ = writeln!(
            s,
            "\n[[sequences]]\nname = \"{name}\"\nclass = \"D\"\nframe_count = {FRAMES}\nfps = 30\nbit_depth = 8\npath = \"{name}.yuv\""
        );
    }
    s
}

pub struct Fixture {
    pub root: tempfile::TempDir,
    pub config: PathBuf,
    pub workdir: PathBuf,
    pub lock: PathBuf,
}

pub fn build_fixture() -> Fixture {
    let root = tempfile::tempdir().unwrap();
    let seq_dir = root.path().join("seq");
    let traces = root.path().join("traces");
    let workdir = root.path().join("work");
    fs::create_dir_all(&seq_dir).unwrap();
    for (name, seed) in SEQUENCES {
        write_sequence(&seq_dir.join(format!("{name}.yuv")), seed);
    }
    write_traces(&traces);
    let config = root.path().join("experiment.toml");
    fs::write(&config, config_text(&workdir, &seq_dir, &traces)).unwrap();
    let lock = root.path().join("measure.lock");
    Fixture {
        root,
        config,
        workdir,
        lock,
    }
}
