//! `gridtwin-fixture`: writes the synthetic island fixture used by the test
//! suites and the examples in the README.

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::Parser;

use gridtwin::fixtures::{write_fixture, FixtureSpec};

#[derive(Parser)]
#[command(
    name = "gridtwin-fixture",
    version,
    about = "Generate the synthetic distribution network fixture"
)]
struct Cli {
    /// Output directory for network.json, measurements.csv and config.json
    #[arg(long)]
    out: PathBuf,
    /// Number of 15-minute steps (default: the full 2023 year)
    #[arg(long)]
    steps: Option<usize>,
    /// Noise seed for the measurement series
    #[arg(long)]
    seed: Option<u64>,
    /// First timestamp (RFC 3339, default 2023-01-01T00:00:00Z)
    #[arg(long)]
    start: Option<DateTime<Utc>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut spec = FixtureSpec::default();
    if let Some(steps) = cli.steps {
        spec.steps = steps;
    }
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if let Some(start) = cli.start {
        spec.start = start;
    }
    match write_fixture(&cli.out, &spec) {
        Ok(()) => {
            println!(
                "fixture written to {}: {} steps from {}",
                cli.out.display(),
                spec.steps,
                spec.start.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
