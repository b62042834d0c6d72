//! Single-binary front end for the quantized training engine.
//!
//! Exit codes: 0 on success, 1 for usage and configuration problems
//! (including malformed JSON configs), 2 for runtime failures (missing or
//! corrupt data files, diverged runs, failed checks).

mod commands;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "gsqt",
    version,
    about = "Grouped-integer tensors and quantized low-rank fine-tuning"
)]
struct Cli {
    /// Worker threads for parallel kernels; the GSQT_WORKERS environment
    /// variable is the fallback, and the machine decides when neither is
    /// set.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pack a dense matrix file into a grouped-integer tensor
    Quantize(commands::convert::QuantizeArgs),
    /// Decode a grouped tensor file back into a dense matrix
    Dequantize(commands::convert::DequantizeArgs),
    /// Measure reconstruction quality of every format on controlled data
    FormatsCompare(commands::analyze::FormatsCompareArgs),
    /// Run one fine-tuning job and write its artifact
    Train(commands::train::TrainArgs),
    /// Train a bits-by-rank grid and emit the Pareto table
    Sweep(commands::train::SweepArgs),
    /// Check analytic gradients against finite differences or the
    /// full-precision path
    Gradcheck(commands::analyze::GradcheckArgs),
    /// Training memory estimate at a reference decoder shape
    Mem(commands::analyze::MemArgs),
}

fn worker_count(flag: Option<usize>) -> gsqt::Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("GSQT_WORKERS") {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| gsqt::Error::Config(format!("GSQT_WORKERS must be a thread count, got {s:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> gsqt::Result<()> {
    if let Some(n) = worker_count(cli.workers)? {
        gsqt::set_worker_threads(n)?;
    }
    match cli.command {
        Command::Quantize(args) => commands::convert::quantize(&args),
        Command::Dequantize(args) => commands::convert::dequantize(&args),
        Command::FormatsCompare(args) => commands::analyze::formats_compare(&args),
        Command::Train(args) => commands::train::train(&args),
        Command::Sweep(args) => commands::train::sweep(&args),
        Command::Gradcheck(args) => commands::analyze::gradcheck(&args),
        Command::Mem(args) => commands::analyze::mem(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = if matches!(e, gsqt::Error::Config(_)) { 1 } else { 2 };
            ExitCode::from(code)
        }
    }
}
