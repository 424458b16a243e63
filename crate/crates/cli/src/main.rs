//! `tubechaos run | sweep | plotdata`.
//!
//! Exit codes: 0 all assertions passed, 1 an assertion failed, 2 configuration
//! error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tubechaos::harness::{emit_plot_data, parameter_sweep, run_experiment, ExperimentConfig, PlotKind};
use tubechaos::Error;

#[derive(Parser)]
#[command(name = "tubechaos", version, about = "Realize section perturbations and measure the chaos they inject")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every enabled stage of a config.
    Run { config: PathBuf },
    /// Run a config once per value of one numeric field.
    Sweep {
        config: PathBuf,
        /// Dotted config path, or one of K, kick, delta_h.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
    },
    /// Write plot-ready CSV next to a run summary or sweep table.
    Plotdata {
        artifact: PathBuf,
        /// section-scatter, lyapunov-history or sweep-curve.
        #[arg(long)]
        kind: String,
    },
}

const PASS: u8 = 0;
const ASSERTION: u8 = 1;
const CONFIG: u8 = 2;
const NUMERICAL: u8 = 3;

fn failure(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    let io = matches!(e.root(), Error::Io(_));
    ExitCode::from(if e.is_config() || io { CONFIG } else { NUMERICAL })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return failure(&e),
            };
            match run_experiment(&cfg) {
                Ok(art) => {
                    for a in &art.assertions {
                        let mark = if a.passed { "pass" } else { "FAIL" };
                        println!("{mark} {}: {} = {:e} (limit {:e})", a.stage, a.name, a.value, a.limit);
                    }
                    println!("wrote {}", cfg.output.dir.display());
                    ExitCode::from(if art.passed() { PASS } else { ASSERTION })
                }
                Err(e) => failure(&e),
            }
        }
        Command::Sweep { config, axis, values } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return failure(&e),
            };
            match parameter_sweep(&cfg, &axis, &values) {
                Ok(table) => {
                    for p in &table.points {
                        println!("{} = {}: {}", table.axis, p.value, p.status);
                        if let Some(err) = &p.error {
                            println!("  {err}");
                        }
                    }
                    println!("wrote {}", cfg.output.dir.join("sweep.csv").display());
                    let all = table.points.iter().all(|p| p.status == "passed");
                    ExitCode::from(if all { PASS } else { ASSERTION })
                }
                Err(e) => failure(&e),
            }
        }
        Command::Plotdata { artifact, kind } => {
            let written = kind.parse::<PlotKind>().and_then(|k| emit_plot_data(&artifact, k));
            match written {
                Ok(path) => {
                    println!("wrote {}", path.display());
                    ExitCode::from(PASS)
                }
                Err(e) => failure(&e),
            }
        }
    }
}
