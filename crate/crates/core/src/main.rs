use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use codec_energy::bench::campaign::{default_lock_path, measure_and_store_idle, open_provider};
use codec_energy::bench::report::{analysis_json, environment, siti_csv};
use codec_energy::bench::{
    analyze, campaign, emit, load_config, siti_summary, AnalysisSettings, BenchError, CampaignOptions, ConfigCheck,
    EmitFormats, ExperimentConfig, HostInfo, RecordStore,
};

#[derive(Parser)]
#[command(name = "codec-energy", version, about = "Energy, rate and quality benchmarking for video codecs")]
struct Cli {
    /// Experiment configuration file.
    #[arg(long, global = true, default_value = "codec-energy.toml")]
    config: PathBuf,
    /// Override the work directory.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Continue a campaign, skipping completed cells.
    #[arg(long, global = true)]
    resume: bool,
    /// Accept records from differing host fingerprints.
    #[arg(long, global = true)]
    force_merge: bool,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure and store the idle power baseline.
    MeasureIdle,
    /// Run the measurement campaign.
    Campaign {
        /// Measure a fresh idle baseline first.
        #[arg(long)]
        measure_idle: bool,
        /// Stop after this many new cells.
        #[arg(long)]
        limit: Option<usize>,
        /// Measurement lock file.
        #[arg(long)]
        lock: Option<PathBuf>,
    },
    /// Compute BD and EBR metrics and write analysis.json.
    Analyze {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write tables, analysis JSON and plot data.
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated subset of csv, json, plotdata.
        #[arg(long, value_delimiter = ',', default_value = "csv,json,plotdata")]
        format: Vec<String>,
    },
    /// Compute SI/TI for every configured sequence.
    Siti {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the configuration and referenced files.
    ValidateConfig,
}

fn config(cli: &Cli, check: ConfigCheck) -> Result<ExperimentConfig, BenchError> {
    let mut cfg = load_config(&cli.config, check)?;
    if let Some(w) = &cli.workdir {
        cfg.set_workdir(w.clone());
    }
    Ok(cfg)
}

fn print(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn write_out(path: &PathBuf, bytes: &[u8]) -> Result<(), BenchError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| BenchError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| BenchError::Io {
        path: path.clone(),
        source,
    })
}

fn run(cli: &Cli) -> Result<(), BenchError> {
    match &cli.command {
        Command::MeasureIdle => {
            let cfg = config(cli, ConfigCheck::Schema)?;
            let host = HostInfo::detect(open_provider(&cfg, None)?.as_ref());
            let baseline = measure_and_store_idle(&cfg, &host)?;
            print(&json!({ "baseline": baseline, "host": host }));
        }
        Command::Campaign {
            measure_idle,
            limit,
            lock,
        } => {
            let cfg = config(cli, ConfigCheck::Full)?;
            let opts = CampaignOptions {
                resume: cli.resume,
                force_merge: cli.force_merge,
                measure_idle: *measure_idle,
                limit: *limit,
                lock_path: lock.clone().unwrap_or_else(default_lock_path),
            };
            let summary = campaign(&cfg, &opts)?;
            print(&json!(summary));
        }
        Command::Analyze { out } => {
            let cfg = config(cli, ConfigCheck::Schema)?;
            let store = RecordStore::open(&cfg.workdir)?;
            let report = analyze(store.records(), &AnalysisSettings::from_config(&cfg), cli.force_merge)?;
            let path = out.clone().unwrap_or_else(|| cfg.workdir.join("report").join("analysis.json"));
            write_out(&path, &analysis_json(&report)?)?;
            print(&json!({ "analysis": path, "rows": report.rows.len(), "averages": report.averages }));
        }
        Command::Report { out, format } => {
            let cfg = config(cli, ConfigCheck::Schema)?;
            let formats = EmitFormats {
                csv: format.iter().any(|f| f == "csv"),
                json: format.iter().any(|f| f == "json"),
                plotdata: format.iter().any(|f| f == "plotdata"),
            };
            let store = RecordStore::open(&cfg.workdir)?;
            let report = analyze(store.records(), &AnalysisSettings::from_config(&cfg), cli.force_merge)?;
            let dir = out.clone().unwrap_or_else(|| cfg.workdir.join("report"));
            let env = environment(store.records());
            let files = emit(&report, Some(&env), &dir, formats)?;
            print(&json!({ "files": files }));
        }
        Command::Siti { out } => {
            let cfg = config(cli, ConfigCheck::Schema)?;
            let rows = siti_summary(&cfg);
            let csv = siti_csv(&rows)?;
            match out {
                Some(p) => write_out(p, &csv)?,
                None => print!("{}", String::from_utf8_lossy(&csv)),
            }
        }
        Command::ValidateConfig => {
            let cfg = config(cli, ConfigCheck::Full)?;
            print(&json!({
                "ok": true,
                "anchor": cfg.anchor,
                "codecs": cfg.codecs.iter().map(|c| &c.id).collect::<Vec<_>>(),
                "sequences": cfg.sequences.len(),
                "qp51": cfg.qp51,
                "qp63": cfg.qp63,
                "workdir": cfg.workdir,
            }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut body = json!({ "error": e.kind(), "message": e.to_string() });
            if let BenchError::Config(codec_energy::bench::ConfigError::Validation(fields)) = &e {
                body["fields"] = json!(fields);
            }
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
