//! `maxpi` — command-line front end for the parallel-imaging toolkit.
//!
//! Exit codes: 0 success, 1 configuration error (bad flags, bad config file,
//! inconsistent parameters), 2 runtime error (I/O or numerical failure).

mod commands;
mod util;

use clap::{Parser, Subcommand};
use maxpi::error::ErrorCategory;

#[derive(Parser)]
#[command(name = "maxpi", version, about = "Parallel-MRI reconstruction toolkit", long_about = None)]
struct Cli {
    /// Worker threads (reserved; all solvers currently run sequentially).
    /// Also read from the MPI_THREADS environment variable.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample boundary excitations and build the field basis.
    BuildBasis(commands::BuildBasisOpts),
    /// Re-express a stored basis as a low-rank separable core.
    CompressBasis(commands::CompressBasisOpts),
    /// Tabulate basis-projection errors for a set of truncation sizes.
    Project(commands::ProjectOpts),
    /// Generate phantom k-space data for a sampling pattern.
    Simulate(commands::SimulateOpts),
    /// Jointly estimate density and coil maps (basis-constrained).
    ReconBl(commands::ReconBlOpts),
    /// Reconstruct density under per-coil noise-ball constraints.
    ReconL(commands::ReconLOpts),
    /// Score a reconstruction against a reference.
    Metrics(commands::MetricsOpts),
}

fn thread_count(flag: Option<usize>) -> Result<usize, String> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("MPI_THREADS") {
            Ok(s) => s
                .parse::<usize>()
                .map_err(|_| format!("MPI_THREADS must be a positive integer, got '{s}'"))?,
            Err(_) => 1,
        },
    };
    if n == 0 {
        return Err("thread count must be at least 1".into());
    }
    Ok(n)
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version through the error path; keep those at 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(msg) = thread_count(cli.threads) {
        eprintln!("error[config]: {msg}");
        std::process::exit(1);
    }
    let result = match cli.cmd {
        Cmd::BuildBasis(o) => commands::build_basis(o),
        Cmd::CompressBasis(o) => commands::compress_basis(o),
        Cmd::Project(o) => commands::project_cmd(o),
        Cmd::Simulate(o) => commands::simulate(o),
        Cmd::ReconBl(o) => commands::recon_bl(o),
        Cmd::ReconL(o) => commands::recon_l(o),
        Cmd::Metrics(o) => commands::metrics_cmd(o),
    };
    if let Err(e) = result {
        let category = e.category();
        eprintln!("error[{category}]: {e}");
        std::process::exit(match category {
            ErrorCategory::Config => 1,
            ErrorCategory::Io | ErrorCategory::Numeric => 2,
        });
    }
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        super::Cli::command().debug_assert();
    }
}
