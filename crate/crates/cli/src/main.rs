use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use skelfuse::association::GatingThreshold;
use skelfuse::sim::bundled_scenario_names;
use skelfuse_cli::commands::{self, ScenarioOverrides};
use skelfuse_cli::formats::CalibrationFile;

#[derive(Parser)]
#[command(name = "skelfuse", version, about = "Multi-camera 3D skeleton fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a camera network; writes stream.jsonl, truth.jsonl, calib.json and scenario.toml.
    Simulate {
        /// Scenario TOML file, or the name of a bundled scenario.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed_override: Option<u64>,
        /// Keep only these camera ids.
        #[arg(long, value_delimiter = ',')]
        cameras: Option<Vec<String>>,
    },
    /// Replay a detection stream through the tracker; writes events.jsonl and snapshots.jsonl.
    Track {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Tracker configuration TOML.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        gating_eps: Option<f64>,
        #[arg(long, default_value_t = 30.0)]
        snapshot_hz: f64,
    },
    /// Reprojection-error report comparing camera subsets and methods.
    Evaluate {
        #[arg(long)]
        scenario: String,
        /// Evaluation configuration TOML.
        #[arg(long)]
        eval_config: Option<PathBuf>,
        /// Tracker configuration TOML; overrides the one in the evaluation config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for report.csv and report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Evaluate this single seed instead of the configured ones.
        #[arg(long)]
        seed_override: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        cameras: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        maf_k: Option<Vec<usize>>,
        #[arg(long)]
        gating_eps: Option<f64>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        report_format: ReportFormat,
    },
    /// List the bundled scenarios.
    Scenarios,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Table,
}

fn run(cli: Cli) -> skelfuse::Result<()> {
    match cli.command {
        Command::Simulate {
            scenario,
            out,
            seed_override,
            cameras,
        } => {
            let overrides = ScenarioOverrides {
                seed: seed_override,
                cameras,
            };
            let cfg = overrides.apply(&commands::load_scenario(&scenario)?)?;
            let summary = commands::simulate(&cfg, &out)?;
            log::info!(
                "{} detection sets from {} written to {}",
                summary.detection_sets,
                summary.cameras.join(","),
                out.display()
            );
        }
        Command::Track {
            stream,
            calib,
            out,
            config,
            gating_eps,
            snapshot_hz,
        } => {
            let calib_path = calib.display().to_string();
            let calib = CalibrationFile::parse(&commands::read_text(&calib)?, &calib_path)?;
            let mut cfg = commands::load_tracker_config(config.as_deref())?;
            if let Some(eps) = gating_eps {
                cfg.gating = GatingThreshold::new(eps)?;
            }
            let text = commands::read_text(&stream)?;
            let summary = commands::track(&text, &stream.display().to_string(), &calib, &cfg, snapshot_hz, &out)?;
            log::info!(
                "ingested {} sets ({} rejected), {} tracks created, {} confirmed at the end",
                summary.ingested,
                summary.rejected,
                summary.tracks_created,
                summary.final_tracks
            );
        }
        Command::Evaluate {
            scenario,
            eval_config,
            config,
            out,
            seed_override,
            cameras,
            maf_k,
            gating_eps,
            report_format,
        } => {
            let overrides = ScenarioOverrides { seed: None, cameras };
            let cfg = overrides.apply(&commands::load_scenario(&scenario)?)?;
            let mut eval = commands::load_eval_config(eval_config.as_deref())?;
            if config.is_some() {
                eval.tracker = commands::load_tracker_config(config.as_deref())?;
            }
            if let Some(seed) = seed_override {
                eval.seeds = vec![seed];
            }
            if let Some(k) = maf_k {
                eval.maf_k = k;
            }
            if let Some(eps) = gating_eps {
                eval.tracker.gating = GatingThreshold::new(eps)?;
            }
            let (report, _) = commands::evaluate_to(&cfg, &eval, out.as_deref())?;
            match report_format {
                ReportFormat::Csv => print!("{}", report.to_csv()),
                ReportFormat::Table => print!("{}", report.to_table()),
            }
            if report.rejected_ingests > 0 {
                log::warn!("{} detection sets were rejected by the tracker", report.rejected_ingests);
            }
        }
        Command::Scenarios => {
            for name in bundled_scenario_names() {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SKELFUSE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
