use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use codec_energy_ffi::*;

fn last_error() -> String {
    let p = ce_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn qp_and_bitrate() {
    let mut out = 0u32;
    for (qp, expected) in [(22, 27), (27, 33), (32, 40), (37, 46)] {
        assert_eq!(ce_map_qp(qp, &mut out), CeStatus::Ok);
        assert_eq!(out, expected);
    }
    assert_eq!(ce_map_qp(52, &mut out), CeStatus::OutOfRange);
    assert!(last_error().contains("52"), "{}", last_error());
    assert_eq!(ce_map_qp(22, ptr::null_mut()), CeStatus::NullPointer);

    let mut kbps = 0.0;
    assert_eq!(ce_compute_bitrate(125_000, 60, 60, &mut kbps), CeStatus::Ok);
    assert_eq!(kbps, 1000.0);
    assert_eq!(ce_compute_bitrate(1, 0, 60, &mut kbps), CeStatus::InvalidArgument);
}

#[test]
fn counter_wrap() {
    let mut d = 0u64;
    assert_eq!(ce_counter_delta(999_900, 50, 1_000_000, &mut d), CeStatus::Ok);
    assert_eq!(d, 150);
    assert_eq!(ce_counter_delta(5, 2_000_000, 1_000_000, &mut d), CeStatus::OutOfRange);
}

#[test]
fn psnr_through_the_boundary() {
    let black = [0u16; 16];
    let white = [255u16; 16];
    let mut db = -1.0;
    unsafe {
        assert_eq!(ce_psnr_plane(black.as_ptr(), white.as_ptr(), 4, 4, 8, &mut db), CeStatus::Ok);
        assert_eq!(db, 0.0);
        assert_eq!(ce_psnr_plane(black.as_ptr(), black.as_ptr(), 4, 4, 8, &mut db), CeStatus::Ok);
        assert_eq!(db, 100.0);
        assert_eq!(ce_psnr_plane(ptr::null(), black.as_ptr(), 4, 4, 8, &mut db), CeStatus::NullPointer);
        assert_eq!(ce_psnr_plane(black.as_ptr(), black.as_ptr(), 4, 4, 4, &mut db), CeStatus::OutOfRange);
    }
}

#[test]
fn fit_and_bd() {
    let rates = [500.0, 1000.0, 2000.0, 4000.0];
    let energy = rates.map(|r| 0.056 * r + 3.0);
    let mut fit = CeFit::default();
    unsafe {
        assert_eq!(ce_fit_re_line(rates.as_ptr(), energy.as_ptr(), 4, 0.92, &mut fit), CeStatus::Ok);
    }
    assert!((fit.alpha - 0.056).abs() < 1e-12 && (fit.beta - 3.0).abs() < 1e-9, "{fit:?}");
    assert_eq!((fit.r_squared, fit.low_fit), (1.0, 0));
    let flat = [1000.0; 4];
    unsafe {
        assert_eq!(ce_fit_re_line(flat.as_ptr(), energy.as_ptr(), 4, 0.92, &mut fit), CeStatus::Degenerate);
    }

    let q = [34.0, 37.0, 40.0, 43.0];
    let q2 = q.map(|v| v + 2.0);
    let mut bd = 0.0;
    unsafe {
        let s = ce_bd_quality(rates.as_ptr(), q.as_ptr(), 4, rates.as_ptr(), q2.as_ptr(), 4, &mut bd);
        assert_eq!(s, CeStatus::Ok);
        assert!((bd - 2.0).abs() < 1e-9);
        let s = ce_bd_quality(rates.as_ptr(), q.as_ptr(), 1, rates.as_ptr(), q2.as_ptr(), 4, &mut bd);
        assert_eq!(s, CeStatus::InsufficientData);
    }
}

#[test]
fn trace_handles() {
    let t = [0.0, 100.0, 200.0, 300.0];
    let p = [10.0, 20.0, 20.0, 10.0];
    let mut h: *mut CeTrace = ptr::null_mut();
    let mut j = 0.0;
    unsafe {
        assert_eq!(ce_trace_from_samples(t.as_ptr(), p.as_ptr(), ptr::null(), 4, 100.0, &mut h), CeStatus::Ok);
        assert_eq!(ce_trace_len(h), 4);
        assert_eq!(ce_trace_energy(h, &mut j), CeStatus::Ok);
        assert!((j - 5.0).abs() < 1e-12);
        assert_eq!(ce_trace_net_energy(h, 10.0, &mut j), CeStatus::Ok);
        assert!((j - 2.0).abs() < 1e-12);
        ce_trace_free(h);
        ce_trace_free(ptr::null_mut());
        assert_eq!(ce_trace_len(ptr::null()), 0);
        assert_eq!(ce_trace_energy(ptr::null(), &mut j), CeStatus::NullPointer);

        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("trace.csv");
        std::fs::write(&csv, "t_ms,pkg_w,dram_w\n0,40,2\n100,40,2\n200,40,2\n").unwrap();
        let c = CString::new(csv.to_str().unwrap()).unwrap();
        assert_eq!(ce_trace_from_csv(c.as_ptr(), 100.0, &mut h), CeStatus::Ok);
        assert_eq!(ce_trace_energy(h, &mut j), CeStatus::Ok);
        assert!((j - 8.4).abs() < 1e-12, "{j}");
        ce_trace_free(h);

        let missing = CString::new(dir.path().join("nope.csv").to_str().unwrap()).unwrap();
        assert_eq!(ce_trace_from_csv(missing.as_ptr(), 100.0, &mut h), CeStatus::Parse);
        assert!(last_error().contains("nope.csv"), "{}", last_error());
        assert_eq!(ce_trace_from_csv(ptr::null(), 100.0, &mut h), CeStatus::NullPointer);
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/codec_energy.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "ce_last_error",
        "ce_version",
        "ce_map_qp",
        "ce_compute_bitrate",
        "ce_counter_delta",
        "ce_psnr_plane",
        "ce_fit_re_line",
        "ce_bd_quality",
        "ce_trace_from_csv",
        "ce_trace_from_samples",
        "ce_trace_len",
        "ce_trace_energy",
        "ce_trace_net_energy",
        "ce_trace_free",
        "typedef struct CeTrace CeTrace;",
        "CE_STATUS_OK = 0",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let version = unsafe { CStr::from_ptr(ce_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    for (lang, std) in [("c", "-std=c99"), ("c++", "-std=c++11")] {
        let Ok(out) = Command::new("cc")
            .args([std, "-Wall", "-Werror", "-fsyntax-only", "-x", lang])
            .arg(header())
            .output()
        else {
            eprintln!("no C compiler; skipping");
            return;
        };
        assert!(out.status.success(), "{lang}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
