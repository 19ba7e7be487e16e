mod common;

use std::collections::BTreeSet;
use std::fs;

use codec_energy::bench::campaign::planned_cells;
use codec_energy::bench::report::analysis_json;
use codec_energy::bench::store::{read_records, EnergySummary};
use codec_energy::bench::{
    analyze, campaign, load_config, AnalysisSettings, CampaignOptions, ConfigCheck, RecordStore, RunRecord, RunStatus,
};
use codec_energy::codec::{compute_bitrate, sha256_file, RunLayout, SeqClass};
use codec_energy::energy::{EnergyMeasurement, Phase};
use common::*;
use proptest::prelude::*;

fn golden_settings() -> AnalysisSettings {
    AnalysisSettings {
        anchor: "stub-a".into(),
        codecs: CODECS.iter().map(|c| c.0.to_string()).collect(),
        sequences: SEQUENCES.iter().map(|s| (SeqClass::D, s.0.to_string())).collect(),
        r2_floor: 0.92,
    }
}

#[test]
fn campaign_keys_and_bitstreams_follow_the_config() {
    let fx = build_fixture();
    let cfg = load_config(&fx.config, ConfigCheck::Full).unwrap();
    let again = load_config(&fx.config, ConfigCheck::Full).unwrap();
    let planned = planned_cells(&cfg);
    assert_eq!(planned, planned_cells(&again));
    assert_eq!(planned.len(), CODECS.len() * SEQUENCES.len() * QP51.len());

    let opts = CampaignOptions {
        resume: false,
        force_merge: false,
        measure_idle: false,
        limit: None,
        lock_path: fx.lock.clone(),
    };
    let summary = campaign(&cfg, &opts).unwrap();
    assert_eq!(summary.succeeded, planned.len());

    let store = RecordStore::open(&cfg.workdir).unwrap();
    let stored: BTreeSet<_> = store.records().iter().map(|r| (r.key(), r.rung)).collect();
    let expected: BTreeSet<_> = planned.into_iter().collect();
    assert_eq!(stored, expected);

    for rec in store.records() {
        let spec = cfg.codec(&rec.codec).unwrap();
        let seq = cfg.sequences.iter().find(|s| s.name == rec.sequence).unwrap();
        let layout = RunLayout::new(&cfg.workdir, spec, seq, rec.qp);
        let bytes = fs::metadata(&layout.bitstream).unwrap().len();
        assert_eq!(rec.bitstream_sha256.as_deref(), Some(sha256_file(&layout.bitstream).unwrap().as_str()));
        assert_eq!(rec.bitstream_bytes, Some(bytes));
        assert_eq!(rec.bitrate_kbps, Some(compute_bitrate(bytes, seq.frame_count, seq.fps).unwrap()));
    }
}

#[test]
fn analysis_depends_only_on_record_contents() {
    let golden = golden_path();
    let records = read_records(&golden.with_file_name("golden_records.jsonl")).unwrap();
    let report = analyze(&records, &golden_settings(), false).unwrap();
    let bytes = analysis_json(&report).unwrap();
    assert!(bytes == fs::read(&golden).unwrap(), "analysis of stored records differs from golden");

    // same records reloaded from an unrelated directory
    let dir = tempfile::tempdir().unwrap();
    let mut store = RecordStore::open(dir.path()).unwrap();
    for r in records.iter().rev() {
        store.upsert(r.clone()).unwrap();
    }
    let reloaded = RecordStore::open(dir.path()).unwrap();
    let report2 = analyze(reloaded.records(), &golden_settings(), false).unwrap();
    assert_eq!(analysis_json(&report2).unwrap(), bytes);
}

fn energy() -> impl Strategy<Value = Option<EnergySummary>> {
    prop::option::of(
        (0.0..1e4f64, 0.0..10.0f64, 2usize..6, any::<bool>(), 0.01..100.0f64).prop_map(|(mean_j, ci, n, converged, d)| {
            EnergySummary {
                mean_j,
                ci_half_width_j: ci,
                n_runs: n,
                converged,
                mean_duration_s: d,
                runs: (0..n)
                    .map(|i| EnergyMeasurement {
                        gross_j: mean_j + 3.0 + i as f64,
                        idle_j: 3.0 + i as f64 / 7.0,
                        net_j: mean_j + i as f64 - i as f64 / 7.0,
                        duration_s: d,
                        phase: if i % 2 == 0 { Phase::Encode } else { Phase::Decode },
                        inner_loops: 1 + i as u32,
                        negative_net: false,
                    })
                    .collect(),
            }
        }),
    )
}

fn record() -> impl Strategy<Value = RunRecord> {
    (
        ("[a-z][a-z0-9-]{0,8}", "[A-Za-z]{1,10}", 0usize..4, 0u32..64, any::<bool>()),
        (prop::option::of(1.0..1e5f64), prop::option::of(0u64..1 << 40), prop::option::of("[0-9a-f]{64}")),
        prop::collection::vec(prop::option::of(0.0..100.0f64), 5),
        (energy(), energy(), prop::option::of(0.0..1e3f64), prop::option::of(0.0..1e3f64)),
        ("[ -~]{0,30}", any::<u32>(), any::<u32>()),
    )
        .prop_map(|((codec, sequence, rung, qp, ok), (rate, bytes, sha), q, (enc, dec, ew, dw), (fp, t0, t1))| RunRecord {
            codec,
            codec_version: "1.0 \"quoted\", comma".into(),
            class: [SeqClass::B, SeqClass::C, SeqClass::D][rung % 3],
            sequence,
            rung,
            qp,
            status: if ok { RunStatus::Ok } else { RunStatus::Failed },
            error: if ok { None } else { Some("exit status 1\nsecond line".into()) },
            bitrate_kbps: rate,
            bitstream_bytes: bytes,
            bitstream_sha256: sha,
            psnr_y: q[0],
            psnr_u: q[1],
            psnr_v: q[2],
            psnr_yuv: q[3],
            vmaf: q[4],
            enc_energy: enc,
            dec_energy: dec,
            enc_wall_s: ew,
            dec_wall_s: dw,
            host_fingerprint: fp,
            started_at: t0 as u64,
            finished_at: t1 as u64,
        })
}

/// Records for `a` and `b` on every sequence and rung, with positive slopes.
fn analysable() -> impl Strategy<Value = Vec<RunRecord>> {
    prop::collection::vec((500.0..5000.0f64, 30.0..40.0f64, 0.01..0.3f64, 0.001..0.02f64, 0.5..1.5f64), 4).prop_map(|per_cell| {
        let mut out = Vec::new();
        for (c, codec) in ["a", "b"].iter().enumerate() {
            for (s, seq) in ["S1", "S2"].iter().enumerate() {
                let (r0, q0, ke, kd, jitter) = per_cell[c * 2 + s];
                for (rung, &qp) in QP51.iter().enumerate() {
                    let rate = r0 / 2f64.powi(rung as i32);
                    let psnr = q0 - 3.0 * rung as f64 + jitter * (rung % 2) as f64;
                    let mut rec = RunRecord::failed(
                        &codec_energy::bench::RecordKey {
                            codec: codec.to_string(),
                            class: SeqClass::D,
                            sequence: seq.to_string(),
                            qp,
                        },
                        rung,
                        String::new(),
                        "host",
                        0,
                    );
                    rec.status = RunStatus::Ok;
                    rec.error = None;
                    rec.bitrate_kbps = Some(rate);
                    rec.psnr_yuv = Some(psnr);
                    rec.vmaf = Some(2.0 * psnr + jitter);
                    let summary = |j: f64| EnergySummary {
                        mean_j: j,
                        ci_half_width_j: 0.0,
                        n_runs: 3,
                        converged: true,
                        mean_duration_s: 1.0,
                        runs: Vec::new(),
                    };
                    rec.enc_energy = Some(summary(ke * rate + jitter * (rung % 3) as f64));
                    rec.dec_energy = Some(summary(kd * rate + 1.0));
                    out.push(rec);
                }
            }
        }
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn records_round_trip_through_the_store(recs in prop::collection::vec(record(), 1..12)) {
        let dir = tempfile::tempdir().unwrap();
        let mut store = RecordStore::open(dir.path()).unwrap();
        let mut kept: Vec<RunRecord> = Vec::new();
        for r in recs {
            if kept.iter().any(|k| k.key() == r.key()) {
                continue;
            }
            store.upsert(r.clone()).unwrap();
            kept.push(r);
        }
        let reloaded = RecordStore::open(dir.path()).unwrap();
        prop_assert_eq!(reloaded.records(), &kept[..]);
        let csv = fs::read_to_string(RecordStore::csv_path(dir.path())).unwrap();
        let mut rdr = csv::Reader::from_reader(csv.as_bytes());
        prop_assert_eq!(rdr.records().count(), kept.len());
    }

    #[test]
    fn averages_are_means_of_their_columns(recs in analysable()) {
        let settings = AnalysisSettings {
            anchor: "a".into(),
            codecs: vec!["a".into(), "b".into()],
            sequences: vec![(SeqClass::D, "S1".into()), (SeqClass::D, "S2".into())],
            r2_floor: 0.92,
        };
        let report = analyze(&recs, &settings, false).unwrap();
        prop_assert_eq!(report.averages.len(), 2);
        for avg in &report.averages {
            let rows: Vec<_> = report.rows.iter().filter(|r| r.codec == avg.codec).collect();
            for k in 0..6 {
                let vals: Vec<f64> = rows.iter().filter_map(|r| r.cells()[k]).collect();
                match avg.cells()[k] {
                    Some(v) => {
                        let m = vals.iter().sum::<f64>() / vals.len() as f64;
                        prop_assert!((v - m).abs() <= 1e-9 * m.abs().max(1.0), "{v} vs {m}");
                    }
                    None => prop_assert!(vals.is_empty()),
                }
            }
        }
    }
}
