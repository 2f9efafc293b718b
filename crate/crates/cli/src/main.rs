use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sustain_core::control::{self, ControlCommand};
use sustain_core::harness::{self, Approach, HarnessConfig, RunReport};
use sustain_core::ingestion::{self, DriftStep, StreamConfig, SyntheticParams, SyntheticSource};
use sustain_core::Error;

#[derive(Parser)]
#[command(name = "sustain", version, about = "Self-adaptive, energy-aware forecasting harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one approach (or `all`) and write its report.
    Run {
        /// JSON harness configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// A1..A6, or `all`.
        #[arg(long)]
        approach: String,
        /// `synthetic`, or the path of a CSV file to replay.
        #[arg(long, default_value = "synthetic")]
        data: String,
        /// Seeds the synthetic stream and the model initialisation.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate run reports and write comparison.csv.
    Compare {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Send a command to a running instance.
    Control {
        #[arg(long)]
        socket: PathBuf,
        #[arg(required = true, num_args = 1.., allow_hyphen_values = true)]
        command: Vec<String>,
    },
    /// Write a synthetic sensor stream as CSV.
    GenStream {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        len: u64,
        /// Drift step `at:shift:scale`; repeatable.
        #[arg(long)]
        drift: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let validation = e.is_validation() || matches!(e, Error::StreamMismatch(..) | Error::UnknownModel(_));
        Self { code: if validation { 1 } else { 2 }, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, approach, data, seed, out } => {
            let mut cfg = match config {
                Some(path) => HarnessConfig::load(&path)?,
                None => HarnessConfig::default(),
            };
            apply_data(&mut cfg, &data, seed);
            if approach.eq_ignore_ascii_case("all") {
                let reports = harness::run_all(&cfg, &Approach::ALL, &out)?;
                print!("{}", harness::render_table(&harness::compare(&reports)?));
            } else {
                let report = harness::run(&cfg, approach.parse()?, &out)?;
                print!("{}", harness::render_table(&harness::compare(std::slice::from_ref(&report))?));
            }
            Ok(())
        }
        Command::Compare { out, reports } => {
            let reports = reports.iter().map(|p| RunReport::load(p)).collect::<Result<Vec<_>, _>>()?;
            let rows = harness::compare(&reports)?;
            std::fs::create_dir_all(&out).map_err(Error::from)?;
            harness::write_comparison_csv(&out.join(harness::COMPARISON_FILE), &rows)?;
            print!("{}", harness::render_table(&rows));
            Ok(())
        }
        Command::Control { socket, command } => {
            let command = ControlCommand::parse(&command)?;
            let reply = control::send(&socket, &command)?;
            println!("{reply}");
            if reply["ok"] == true {
                Ok(())
            } else {
                Err(Failure::validation(reply["error"].as_str().unwrap_or("rejected").to_string()))
            }
        }
        Command::GenStream { seed, len, drift, out } => {
            let schedule = drift.iter().map(|d| d.parse::<DriftStep>()).collect::<Result<Vec<_>, _>>()?;
            let mut source = SyntheticSource::new(seed, SyntheticParams::default(), schedule, Some(len))?;
            let readings: Vec<_> = std::iter::from_fn(|| source.next_reading()).collect();
            ingestion::write_csv(&out, &readings)?;
            println!("wrote {} readings to {}", readings.len(), out.display());
            Ok(())
        }
    }
}

/// `--data` and `--seed` override the configured stream.
fn apply_data(cfg: &mut HarnessConfig, data: &str, seed: Option<u64>) {
    if data == "synthetic" {
        if let StreamConfig::Replay { .. } = cfg.stream {
            cfg.stream = HarnessConfig::default().stream;
        }
        if let (StreamConfig::Synthetic { seed: s, .. }, Some(seed)) = (&mut cfg.stream, seed) {
            *s = seed;
        }
    } else {
        cfg.stream = StreamConfig::Replay { path: PathBuf::from(data), speedup: 1.0 };
    }
    if let Some(seed) = seed {
        for spec in cfg.models.values_mut() {
            spec.seed = seed;
        }
    }
}
