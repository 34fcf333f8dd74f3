use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use petc_cli::pipeline::{cmd_bounds, cmd_design, cmd_simulate, cmd_verify, CliError};

/// Design-and-simulation workbench for quantized, decentralized periodic
/// event-triggered control loops.
#[derive(Parser)]
#[command(name = "petc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the design pipeline and write a certificate.
    Design {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the configured scenario under a certificate.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Include flow sub-samples in the trace CSV.
        #[arg(long)]
        flow: bool,
    },
    /// Re-check a certificate against a model.
    Verify {
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Worst-case step-count and zoom-level bounds for a scenario budget.
    Bounds {
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        w0: f64,
        #[arg(long)]
        w_inf: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Design { config, out } => {
            let cert = cmd_design(&config, &out)?;
            println!(
                "feasible at varrho {:.4}; eta_min {:.6e}; wrote {}",
                cert.params.varrho,
                cert.params.eta_min,
                out.display()
            );
        }
        Command::Simulate {
            config,
            cert,
            trace,
            report,
            flow,
        } => {
            let out = cmd_simulate(&config, &cert, &trace, &report, flow)?;
            print!("{}", out.summary);
        }
        Command::Verify { cert, config } => {
            let out = cmd_verify(&cert, &config)?;
            print!("{}", out.rendered);
        }
        Command::Bounds { cert, w0, w_inf } => {
            let out = cmd_bounds(&cert, w0, w_inf)?;
            print!("{}", out.rendered);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
