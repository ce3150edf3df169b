use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use safeset_cli::commands::{self, finish};
use safeset_cli::{exit, RunConfig};

#[derive(Parser)]
#[command(name = "safeset", version, about = "Grow, verify, and use certified control invariant sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expand the initial set and write the trace, snapshots, final boundary, and report.
    Expand {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify every segment of a boundary and check it against the safe set box.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        boundary: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-loop runs of the safety filter from random interior states.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        boundary: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Grid viability kernel of the configured system.
    Kernel {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also report whether this boundary lies inside the kernel.
        #[arg(long)]
        boundary: Option<PathBuf>,
    },
    /// Signed distance to a boundary on a regular grid.
    Sdf {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        boundary: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> u8 {
    let config = match &cli.command {
        Command::Expand { config, .. }
        | Command::Verify { config, .. }
        | Command::Simulate { config, .. }
        | Command::Kernel { config, .. }
        | Command::Sdf { config, .. } => config,
    };
    let cfg = match RunConfig::load(config) {
        Ok(cfg) => cfg,
        Err(e) => return finish(Err(e)),
    };
    let out = |o: &Option<PathBuf>| o.clone().unwrap_or_else(commands::default_out);
    finish(match &cli.command {
        Command::Expand { out: o, .. } => commands::cmd_expand(&cfg, &out(o)),
        Command::Verify { boundary, out: o, .. } => commands::cmd_verify(&cfg, boundary, o.as_deref()),
        Command::Simulate { boundary, out: o, seed, .. } => commands::cmd_simulate(&cfg, boundary, &out(o), *seed),
        Command::Kernel { out: o, boundary, .. } => commands::cmd_kernel(&cfg, &out(o), boundary.as_deref()),
        Command::Sdf { boundary, out: o, .. } => commands::cmd_sdf(&cfg, boundary, &out(o)),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG } else { exit::OK });
        }
    };
    ExitCode::from(run(cli))
}
