use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use fairdeliver::arbiter::Mode;
use fairdeliver_cli::{run_scenario, suite, Overrides, Report, UsageError};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Download,
    Stream,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Download => Mode::Download,
            ModeArg::Stream => Mode::Stream,
        }
    }
}

/// Run fair-delivery scenarios in the round simulator and report the outcome.
///
/// Exit status: 0 when every check passes, 1 when any check fails,
/// 2 for usage errors such as unreadable or malformed scenario files.
#[derive(Debug, Parser)]
#[command(name = "fairdeliver", version)]
struct Args {
    /// Scenario file (TOML).
    #[arg(required_unless_present = "suite", conflicts_with = "suite")]
    path: Option<PathBuf>,
    /// Run every *.toml scenario in this directory.
    #[arg(long, value_name = "DIR")]
    suite: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Chunk count.
    #[arg(long)]
    n: Option<u64>,
    /// Chunk size in bytes.
    #[arg(long)]
    eta: Option<usize>,
    /// Write the JSON report here instead of printing a summary only.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Print the JSON report to stdout.
    #[arg(long)]
    json: bool,
}

fn execute(args: &Args) -> Result<Report, UsageError> {
    let overrides = Overrides { seed: args.seed, mode: args.mode.map(Into::into), n: args.n, eta: args.eta };
    match (&args.suite, &args.path) {
        (Some(dir), _) => suite(dir, &overrides),
        (None, Some(path)) => run_scenario(path, &overrides),
        (None, None) => unreachable!("clap requires a path or --suite"),
    }
}

fn emit(args: &Args, report: &Report) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(report).context("serializing report")?;
    if let Some(out) = &args.out {
        std::fs::write(out, &json).with_context(|| format!("writing {}", out.display()))?;
    }
    if args.json {
        println!("{json}");
    } else {
        print!("{}", report.render());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let report = match execute(&args) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = emit(&args, &report) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    ExitCode::from(report.exit_code() as u8)
}
