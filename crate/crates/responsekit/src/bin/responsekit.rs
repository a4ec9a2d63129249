//! Thin command-line front end: parses arguments, caps the thread pool from
//! `RESPONSEKIT_THREADS`, and hands off to the library's experiment runner.
//! On failure a machine-readable error JSON goes to stderr and the process
//! exits nonzero.

use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "responsekit",
    about = "Config-driven experiments: signatures, signature kernels, stochastic-RNN simulation, \
             response kernels, Volterra series, and kernel machines",
    after_help = "Commands: sig, kernel, simulate, respond, volterra, fit, predict, repro.\n\
                  Every experiment is determined by (config, master seed); --seed overrides the\n\
                  config's seed. RESPONSEKIT_THREADS caps internal parallelism."
)]
struct Args {
    /// Command to run (sig, kernel, simulate, respond, volterra, fit, predict, repro).
    command: String,
    /// JSON config file for the command.
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for reports.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();

    if let Ok(threads) = std::env::var("RESPONSEKIT_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!(
                    "{}",
                    serde_json::json!({
                        "error": format!("RESPONSEKIT_THREADS must be a positive integer, got `{threads}`"),
                        "command": args.command,
                    })
                );
                return ExitCode::from(2);
            }
        }
    }

    match responsekit::cli::run(&args.command, &args.config, args.seed, &args.out) {
        Ok(written) => {
            for file in written {
                println!("wrote {}", file.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json(&args.command));
            ExitCode::FAILURE
        }
    }
}
