//! Analysis of run records into the comparison table and averaged curves,
//! and serialization of the results.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::store::RunRecord;
use super::BenchError;
use crate::codec::SeqClass;
use crate::curve::{average_curves, bd_quality, ebr, fit_re_line, CurvePoint, QualityMetric};
use crate::quality::{compute_siti, read_yuv};

pub const TABLE_COLUMNS: [&str; 9] = [
    "class", "sequence", "codec", "bd_psnr", "bd_vmaf", "ebr_enc", "ebr_dec", "r2_enc", "r2_dec",
];

/// Plot-data files written by `emit`.
pub const PLOT_FILES: [&str; 8] = [
    "rq_psnr",
    "rq_vmaf",
    "re_enc",
    "re_dec",
    "qe_psnr_enc",
    "qe_psnr_dec",
    "qe_vmaf_enc",
    "qe_vmaf_dec",
];

pub const AVERAGE_LABEL: &str = "Average";

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    pub anchor: String,
    pub codecs: Vec<String>,
    pub sequences: Vec<(SeqClass, String)>,
    pub r2_floor: f64,
}

impl AnalysisSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        AnalysisSettings {
            anchor: cfg.anchor.clone(),
            codecs: cfg.codecs.iter().map(|c| c.id.clone()).collect(),
            sequences: cfg
                .sequences
                .iter()
                .map(|s| (s.class_label, s.name.clone()))
                .collect(),
            r2_floor: cfg.r2_floor,
        }
    }
}

impl PartialEq for ReportRow {
    fn eq(&self, o: &Self) -> bool {
        let bits = |r: &ReportRow| {
            [r.bd_psnr, r.bd_vmaf, r.ebr_enc, r.ebr_dec, r.r2_enc, r.r2_dec].map(|v| v.map(f64::to_bits))
        };
        self.class == o.class
            && self.sequence == o.sequence
            && self.codec == o.codec
            && bits(self) == bits(o)
            && self.notes == o.notes
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub class: String,
    pub sequence: String,
    pub codec: String,
    pub bd_psnr: Option<f64>,
    pub bd_vmaf: Option<f64>,
    pub ebr_enc: Option<f64>,
    pub ebr_dec: Option<f64>,
    pub r2_enc: Option<f64>,
    pub r2_dec: Option<f64>,
    pub notes: Vec<String>,
}

impl ReportRow {
    fn empty(class: String, sequence: String, codec: &str) -> Self {
        ReportRow {
            class,
            sequence,
            codec: codec.to_string(),
            bd_psnr: None,
            bd_vmaf: None,
            ebr_enc: None,
            ebr_dec: None,
            r2_enc: None,
            r2_dec: None,
            notes: Vec::new(),
        }
    }

    pub fn cells(&self) -> [Option<f64>; 6] {
        [self.bd_psnr, self.bd_vmaf, self.ebr_enc, self.ebr_dec, self.r2_enc, self.r2_dec]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragePoint {
    pub rung: usize,
    pub qp: u32,
    pub rate_kbps: f64,
    pub psnr: f64,
    pub vmaf: Option<f64>,
    pub enc_energy_j: f64,
    pub dec_energy_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodecCurve {
    pub codec: String,
    /// Sequences contributing to the average.
    pub sequences: Vec<String>,
    pub points: Vec<AveragePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub anchor: String,
    pub r2_floor: f64,
    pub codecs: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub averages: Vec<ReportRow>,
    pub curves: Vec<CodecCurve>,
    pub notes: Vec<String>,
}

/// Host and tool details, kept out of the analysis so the latter stays a
/// function of measured values only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Environment {
    pub host_fingerprints: Vec<String>,
    pub codec_versions: BTreeMap<String, Vec<String>>,
}

pub fn environment(records: &[RunRecord]) -> Environment {
    let mut host_fingerprints: Vec<String> = records.iter().map(|r| r.host_fingerprint.clone()).collect();
    host_fingerprints.sort();
    host_fingerprints.dedup();
    let mut codec_versions: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in records {
        let v = codec_versions.entry(r.codec.clone()).or_default();
        if !v.contains(&r.codec_version) {
            v.push(r.codec_version.clone());
        }
    }
    Environment {
        host_fingerprints,
        codec_versions,
    }
}

fn push_unique<T: PartialEq>(v: &mut Vec<T>, x: T) {
    if !v.contains(&x) {
        v.push(x);
    }
}

/// Successful records of one (codec, sequence), ordered by rung.
fn cell_records<'a>(records: &'a [RunRecord], codec: &str, class: SeqClass, seq: &str) -> Vec<&'a RunRecord> {
    let mut v: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.is_ok() && r.codec == codec && r.class == class && r.sequence == seq)
        .collect();
    v.sort_by_key(|r| r.rung);
    v
}

fn rq_points(recs: &[&RunRecord], q: impl Fn(&RunRecord) -> Option<f64>) -> Option<Vec<CurvePoint>> {
    recs.iter()
        .map(|r| Some(CurvePoint::rq(r.bitrate_kbps?, q(r)?)))
        .collect()
}

fn re_points(recs: &[&RunRecord], e: impl Fn(&RunRecord) -> Option<f64>) -> Option<Vec<CurvePoint>> {
    recs.iter()
        .map(|r| Some(CurvePoint::re(r.bitrate_kbps?, e(r)?)))
        .collect()
}

fn enc_j(r: &RunRecord) -> Option<f64> {
    r.enc_energy.as_ref().map(|e| e.mean_j)
}

fn dec_j(r: &RunRecord) -> Option<f64> {
    r.dec_energy.as_ref().map(|e| e.mean_j)
}

pub fn analyze(records: &[RunRecord], settings: &AnalysisSettings, force_merge: bool) -> Result<Report, BenchError> {
    if !force_merge {
        if let Some(first) = records.first() {
            if let Some(r) = records.iter().find(|r| r.host_fingerprint != first.host_fingerprint) {
                return Err(BenchError::FingerprintMismatch {
                    expected: first.host_fingerprint.clone(),
                    found: r.host_fingerprint.clone(),
                });
            }
        }
    }
    if !records.iter().any(|r| r.is_ok() && r.codec == settings.anchor) {
        return Err(BenchError::MissingAnchor(settings.anchor.clone()));
    }

    let mut codecs = settings.codecs.clone();
    let mut sequences = settings.sequences.clone();
    for r in records {
        push_unique(&mut codecs, r.codec.clone());
        push_unique(&mut sequences, (r.class, r.sequence.clone()));
    }
    let mut notes = Vec::new();

    let mut rows = Vec::new();
    for (class, seq) in &sequences {
        let anchor_recs = cell_records(records, &settings.anchor, *class, seq);
        for codec in &codecs {
            let mut row = ReportRow::empty(class.to_string(), seq.clone(), codec);
            let recs = cell_records(records, codec, *class, seq);
            if recs.is_empty() {
                row.notes.push("no successful records".into());
                rows.push(row);
                continue;
            }
            let is_anchor = codec == &settings.anchor;
            for (metric, name, q) in [
                (QualityMetric::Psnr, "bd_psnr", (|r: &RunRecord| r.psnr_yuv) as fn(&RunRecord) -> Option<f64>),
                (QualityMetric::Vmaf, "bd_vmaf", |r: &RunRecord| r.vmaf),
            ] {
                let value = if is_anchor {
                    Ok(0.0)
                } else {
                    match (rq_points(&anchor_recs, q), rq_points(&recs, q)) {
                        (Some(a), Some(t)) if !anchor_recs.is_empty() => {
                            bd_quality(metric, &settings.anchor, &a, codec, &t).map(|bd| {
                                if bd.outlier {
                                    row.notes.push(format!("{name}: outlier {:.2}", bd.bd_quality));
                                }
                                row.notes.extend(bd.warnings.iter().map(|w| format!("{name}: {w}")));
                                bd.bd_quality
                            })
                            .map_err(|e| e.to_string())
                        }
                        (_, _) if anchor_recs.is_empty() => Err("anchor has no records for this sequence".to_string()),
                        _ => Err("missing quality values".to_string()),
                    }
                };
                let slot = match metric {
                    QualityMetric::Psnr => &mut row.bd_psnr,
                    QualityMetric::Vmaf => &mut row.bd_vmaf,
                };
                match value {
                    Ok(v) => *slot = Some(v),
                    Err(e) => row.notes.push(format!("{name}: {e}")),
                }
            }
            for (name, e) in [
                ("ebr_enc", enc_j as fn(&RunRecord) -> Option<f64>),
                ("ebr_dec", dec_j),
            ] {
                let fitted = re_points(&recs, e)
                    .ok_or_else(|| "missing energy values".to_string())
                    .and_then(|pts| fit_re_line(&pts).map_err(|e| e.to_string()));
                match fitted {
                    Ok(fit) => {
                        let v = ebr(&fit, settings.r2_floor);
                        if v.low_fit {
                            row.notes.push(format!("{name}: r² {:.4} below {}", v.r_squared, settings.r2_floor));
                        }
                        if fit.negative_slope() {
                            row.notes.push(format!("{name}: negative slope"));
                        }
                        if name == "ebr_enc" {
                            row.ebr_enc = Some(v.value);
                            row.r2_enc = Some(v.r_squared);
                        } else {
                            row.ebr_dec = Some(v.value);
                            row.r2_dec = Some(v.r_squared);
                        }
                    }
                    Err(e) => row.notes.push(format!("{name}: {e}")),
                }
            }
            rows.push(row);
        }
    }

    let averages = codecs
        .iter()
        .map(|codec| {
            let mine: Vec<&ReportRow> = rows.iter().filter(|r| &r.codec == codec).collect();
            let mean = |k: usize| {
                let vals: Vec<f64> = mine.iter().filter_map(|r| r.cells()[k]).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            };
            ReportRow {
                class: String::new(),
                sequence: AVERAGE_LABEL.into(),
                codec: codec.clone(),
                bd_psnr: mean(0),
                bd_vmaf: mean(1),
                ebr_enc: mean(2),
                ebr_dec: mean(3),
                r2_enc: mean(4),
                r2_dec: mean(5),
                notes: Vec::new(),
            }
        })
        .collect();

    let mut curves = Vec::new();
    for codec in &codecs {
        let rungs = records
            .iter()
            .filter(|r| &r.codec == codec)
            .map(|r| r.rung + 1)
            .max()
            .unwrap_or(0);
        let mut used = Vec::new();
        let mut psnr_enc = Vec::new();
        let mut vmaf_dec = Vec::new();
        for (class, seq) in &sequences {
            let recs = cell_records(records, codec, *class, seq);
            if recs.len() != rungs || recs.iter().enumerate().any(|(i, r)| r.rung != i) {
                if !recs.is_empty() || rungs > 0 {
                    notes.push(format!("{codec}: {class}/{seq} incomplete, left out of averaged curves"));
                }
                continue;
            }
            let pe: Option<Vec<CurvePoint>> = recs
                .iter()
                .map(|r| {
                    Some(CurvePoint {
                        rate_kbps: r.bitrate_kbps?,
                        quality: r.psnr_yuv?,
                        energy_j: Some(enc_j(r)?),
                    })
                })
                .collect();
            let vd: Option<Vec<CurvePoint>> = recs
                .iter()
                .map(|r| {
                    Some(CurvePoint {
                        rate_kbps: r.bitrate_kbps?,
                        quality: r.vmaf.unwrap_or(f64::NAN),
                        energy_j: Some(dec_j(r)?),
                    })
                })
                .collect();
            if let (Some(pe), Some(vd)) = (pe, vd) {
                used.push(format!("{class}/{seq}"));
                psnr_enc.push(pe);
                vmaf_dec.push(vd);
            }
        }
        if used.is_empty() {
            continue;
        }
        let a = average_curves(&psnr_enc).map_err(|e| BenchError::Analysis(e.to_string()))?;
        let b = average_curves(&vmaf_dec).map_err(|e| BenchError::Analysis(e.to_string()))?;
        let qp_of = |rung: usize| {
            records
                .iter()
                .find(|r| &r.codec == codec && r.rung == rung)
                .map(|r| r.qp)
                .unwrap_or_default()
        };
        let points = a
            .iter()
            .zip(&b)
            .enumerate()
            .map(|(i, (a, b))| AveragePoint {
                rung: i,
                qp: qp_of(i),
                rate_kbps: a.rate_kbps,
                psnr: a.quality,
                vmaf: b.quality.is_finite().then_some(b.quality),
                enc_energy_j: a.energy_j.unwrap_or(f64::NAN),
                dec_energy_j: b.energy_j.unwrap_or(f64::NAN),
            })
            .collect();
        curves.push(CodecCurve {
            codec: codec.clone(),
            sequences: used,
            points,
        });
    }

    Ok(Report {
        anchor: settings.anchor.clone(),
        r2_floor: settings.r2_floor,
        codecs,
        rows,
        averages,
        curves,
        notes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmitFormats {
    pub csv: bool,
    pub json: bool,
    pub plotdata: bool,
}

impl Default for EmitFormats {
    fn default() -> Self {
        EmitFormats {
            csv: true,
            json: true,
            plotdata: true,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| BenchError::Analysis(e.to_string());
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(r).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| BenchError::Analysis(e.to_string()))
}

/// Long-form table with the fixed header, per-sequence rows then averages.
pub fn table_csv(report: &Report) -> Result<Vec<u8>, BenchError> {
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .chain(&report.averages)
        .map(|r| {
            let mut v = vec![r.class.clone(), r.sequence.clone(), r.codec.clone()];
            v.extend(r.cells().map(fmt_opt));
            v
        })
        .collect();
    csv_bytes(&TABLE_COLUMNS.map(String::from), &rows)
}

/// One row per sequence: BD pairs for every non-anchor codec, then EBR pairs
/// for every codec; last row is the average.
pub fn wide_table_csv(report: &Report) -> Result<Vec<u8>, BenchError> {
    let tests: Vec<&String> = report.codecs.iter().filter(|c| **c != report.anchor).collect();
    let mut header = vec!["class".to_string(), "sequence".to_string()];
    for c in &tests {
        header.push(format!("{c}_bd_psnr"));
        header.push(format!("{c}_bd_vmaf"));
    }
    for c in &report.codecs {
        header.push(format!("{c}_ebr_enc"));
        header.push(format!("{c}_ebr_dec"));
    }
    let find = |rows: &[ReportRow], class: &str, seq: &str, codec: &str| -> Option<ReportRow> {
        rows.iter()
            .find(|r| r.class == class && r.sequence == seq && r.codec == codec)
            .cloned()
    };
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in &report.rows {
        push_unique(&mut keys, (r.class.clone(), r.sequence.clone()));
    }
    let line = |rows: &[ReportRow], class: &str, seq: &str| {
        let mut v = vec![class.to_string(), seq.to_string()];
        for c in &tests {
            let r = find(rows, class, seq, c);
            v.push(fmt_opt(r.as_ref().and_then(|r| r.bd_psnr)));
            v.push(fmt_opt(r.as_ref().and_then(|r| r.bd_vmaf)));
        }
        for c in &report.codecs {
            let r = find(rows, class, seq, c);
            v.push(fmt_opt(r.as_ref().and_then(|r| r.ebr_enc)));
            v.push(fmt_opt(r.as_ref().and_then(|r| r.ebr_dec)));
        }
        v
    };
    let mut rows: Vec<Vec<String>> = keys.iter().map(|(c, s)| line(&report.rows, c, s)).collect();
    rows.push(line(&report.averages, "", AVERAGE_LABEL));
    csv_bytes(&header, &rows)
}

/// Plot-data CSV for one of `PLOT_FILES`.
pub fn plot_csv(report: &Report, panel: &str) -> Result<Vec<u8>, BenchError> {
    let qe = panel.starts_with("qe_");
    let mut header: Vec<String> = ["codec", "qp", "rate_kbps", "value"].map(String::from).to_vec();
    if qe {
        header.push("energy_j".into());
    }
    let pick = |p: &AveragePoint| -> (Option<f64>, Option<f64>) {
        match panel {
            "rq_psnr" => (Some(p.psnr), None),
            "rq_vmaf" => (p.vmaf, None),
            "re_enc" => (Some(p.enc_energy_j), None),
            "re_dec" => (Some(p.dec_energy_j), None),
            "qe_psnr_enc" => (Some(p.psnr), Some(p.enc_energy_j)),
            "qe_psnr_dec" => (Some(p.psnr), Some(p.dec_energy_j)),
            "qe_vmaf_enc" => (p.vmaf, Some(p.enc_energy_j)),
            "qe_vmaf_dec" => (p.vmaf, Some(p.dec_energy_j)),
            _ => (None, None),
        }
    };
    let mut rows = Vec::new();
    for c in &report.curves {
        for p in &c.points {
            let (value, energy) = pick(p);
            let mut row = vec![c.codec.clone(), p.qp.to_string(), p.rate_kbps.to_string(), fmt_opt(value)];
            if qe {
                row.push(fmt_opt(energy));
            }
            rows.push(row);
        }
    }
    csv_bytes(&header, &rows)
}

pub fn analysis_json(report: &Report) -> Result<Vec<u8>, BenchError> {
    let mut v = serde_json::to_vec_pretty(report).map_err(|e| BenchError::Analysis(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

/// Writes the selected outputs into `dir` and returns the paths written.
pub fn emit(report: &Report, env: Option<&Environment>, dir: &Path, formats: EmitFormats) -> Result<Vec<PathBuf>, BenchError> {
    if report.rows.is_empty() {
        return Err(BenchError::EmptyReport);
    }
    fs::create_dir_all(dir).map_err(BenchError::io(dir))?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<(), BenchError> {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(BenchError::io(&path))?;
        f.write_all(&bytes).map_err(BenchError::io(&path))?;
        written.push(path);
        Ok(())
    };
    if formats.csv {
        put("table3.csv".into(), table_csv(report)?)?;
        put("table3_wide.csv".into(), wide_table_csv(report)?)?;
    }
    if formats.json {
        put("analysis.json".into(), analysis_json(report)?)?;
        if let Some(env) = env {
            let mut v = serde_json::to_vec_pretty(env).map_err(|e| BenchError::Analysis(e.to_string()))?;
            v.push(b'\n');
            put("environment.json".into(), v)?;
        }
    }
    if formats.plotdata {
        for panel in PLOT_FILES {
            put(format!("{panel}.csv"), plot_csv(report, panel)?)?;
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SitiRow {
    pub class: String,
    pub sequence: String,
    pub si: Option<f64>,
    pub ti: Option<f64>,
    pub error: Option<String>,
}

/// SI/TI per configured sequence; unreadable sequences yield error rows.
pub fn siti_summary(cfg: &ExperimentConfig) -> Vec<SitiRow> {
    cfg.sequences
        .iter()
        .map(|s| {
            let res = read_yuv(&s.path, s).and_then(compute_siti);
            let (si, ti, error) = match res {
                Ok(v) => (Some(v.si), Some(v.ti), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            SitiRow {
                class: s.class_label.to_string(),
                sequence: s.name.clone(),
                si,
                ti,
                error,
            }
        })
        .collect()
}

pub fn siti_csv(rows: &[SitiRow]) -> Result<Vec<u8>, BenchError> {
    let header = ["class", "sequence", "si", "ti", "error"].map(String::from);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.class.clone(),
                r.sequence.clone(),
                fmt_opt(r.si),
                fmt_opt(r.ti),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    csv_bytes(&header, &body)
}
