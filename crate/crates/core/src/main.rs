use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use tailgrid::cli::{run, selftest, Overrides, EXIT_FAIL, EXIT_PASS, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "tailgrid", about = "Local tail diagnostics for lattice distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON or TOML config.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Random seed (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Number of probe points, spaced geometrically unless the config asks for linear spacing.
        #[arg(long)]
        probes: Option<usize>,
        /// Do not print the summary.
        #[arg(long)]
        quiet: bool,
    },
    /// Print the version.
    Version,
    /// Run the built-in smoke checks.
    Selftest,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match cli.command {
        Command::Version => {
            println!("tailgrid {}", env!("CARGO_PKG_VERSION"));
            EXIT_PASS
        }
        Command::Selftest => {
            let start = Instant::now();
            let results = selftest();
            for (name, ok) in &results {
                println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
            }
            println!("selftest finished in {:.2} s", start.elapsed().as_secs_f64());
            if results.iter().all(|r| r.1) {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Command::Run { config, output, seed, probes, quiet } => {
            let ov = Overrides { output_dir: output, seed, probes };
            match run(&config, &ov) {
                Ok(out) => {
                    if !quiet {
                        for r in &out.reports {
                            println!("{:<24} {:<13} limit={:.6e}", r.check, r.verdict.to_string(), r.limit_estimate);
                        }
                        println!("overall: {} ({})", out.verdict(), out.output_dir.display());
                    }
                    out.exit_code()
                }
                Err(e) => {
                    eprintln!("tailgrid: {e}");
                    e.exit_code()
                }
            }
        }
    };
    ExitCode::from(code as u8)
}
