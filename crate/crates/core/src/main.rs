use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pwcert::cli::{self, RunConfig};

/// Periodic planewave mean-field solver with certified energy error bounds.
#[derive(Parser)]
#[command(name = "pwcert", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve in the reference basis and cache the reference solution.
    Reference {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the bounded SCF against a cached reference; writes trace.csv and
    /// summary.json into the output directory.
    Bounds {
        #[arg(long)]
        config: PathBuf,
    },
    /// One bounded run per cutoff plus an aggregated sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated computational cutoffs in Hartree.
        #[arg(long, value_delimiter = ',', required = true)]
        ecuts: Vec<f64>,
    },
    /// Emit the external potential's Fourier coefficients as CSV.
    GenPotential {
        #[arg(long)]
        config: PathBuf,
        /// Output file (defaults to <output.dir>/potential.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut log = std::io::stderr();
    let result = match &cli.command {
        Command::Reference { config } => RunConfig::load(config)
            .and_then(|cfg| cli::cmd_reference(&cfg, &mut log).map(|_| ())),
        Command::Bounds { config } => RunConfig::load(config).and_then(|cfg| {
            let output = cli::cmd_bounds(&cfg, &mut log)?;
            if !output.converged {
                return Err(pwcert::Error::NonConvergence {
                    max_iter: cfg.scf.max_iter,
                    residual: f64::NAN,
                });
            }
            Ok(())
        }),
        Command::Sweep { config, ecuts } => RunConfig::load(config)
            .and_then(|cfg| cli::cmd_sweep(&cfg, ecuts, &mut log).map(|_| ())),
        Command::GenPotential { config, out } => RunConfig::load(config)
            .and_then(|cfg| cli::cmd_gen_potential(&cfg, out.as_deref(), &mut log).map(|_| ())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(cli::exit_code(&err) as u8)
        }
    }
}
