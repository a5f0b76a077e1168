use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use intravol_core::harness::{self, RunConfig};
use intravol_core::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "intravol", version, about = "Intraday volume forecasting: calibrate, replay, export curves, generate scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key-value TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bin width in minutes (overrides the config file).
    #[arg(long)]
    bin_minutes: Option<u32>,
    /// Session as HH:MM-HH:MM (overrides the config file).
    #[arg(long)]
    session: Option<String>,
}

impl Common {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(m) = self.bin_minutes {
            cfg.bin_minutes = m;
        }
        if let Some(s) = &self.session {
            cfg.session = s.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-symbol parameters and write <SYMBOL>.params.json files.
    Calibrate {
        #[arg(long)]
        days: PathBuf,
        #[arg(long)]
        bins: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use only days on or before this date.
        #[arg(long)]
        until: Option<NaiveDate>,
        #[command(flatten)]
        common: Common,
    },
    /// Replay sessions causally and report forecast accuracy.
    Replay {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        days: PathBuf,
        #[arg(long)]
        bins: PathBuf,
        #[arg(long)]
        from: NaiveDate,
        #[arg(long)]
        to: NaiveDate,
        /// Report path; JSON when the extension is .json, text otherwise.
        #[arg(long)]
        report: PathBuf,
        /// Optional JSON Lines file with every forecast.
        #[arg(long)]
        forecasts: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write historical and bucketed average curves as CSV.
    ExportCurves {
        #[arg(long)]
        days: PathBuf,
        #[arg(long)]
        bins: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of equal-count predictor buckets.
        #[arg(long, default_value_t = 5)]
        buckets: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic scenario (days.csv, bins.csv, truth.json).
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Data => 1,
        ErrorClass::Calibration => 2,
        ErrorClass::Config => 3,
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Calibrate { days, bins, out, until, common } => {
            let cfg = common.config()?;
            let summary = harness::cmd_calibrate(&days, &bins, &out, until, &cfg)?;
            for path in &summary.written {
                println!("wrote {}", path.display());
            }
            for (symbol, err) in &summary.failures {
                eprintln!("error: {symbol}: {err}");
            }
            Ok(if summary.failures.is_empty() { 0 } else { 2 })
        }
        Command::Replay { params, days, bins, from, to, report, forecasts, common } => {
            let cfg = common.config()?;
            let rep = harness::cmd_replay(&params, &days, &bins, from, to, &report, forecasts.as_deref(), &cfg)?;
            print!("{}", rep.to_text());
            Ok(0)
        }
        Command::ExportCurves { days, bins, out, buckets, common } => {
            let cfg = common.config()?;
            for path in harness::cmd_export_curves(&days, &bins, &out, buckets, &cfg)? {
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
        Command::Synth { spec, out, seed } => {
            let spec = harness::cmd_synth(&spec, &out, seed)?;
            println!("wrote {} days of {} to {} (seed {})", spec.n_days, spec.symbol, out.display(), spec.seed);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
