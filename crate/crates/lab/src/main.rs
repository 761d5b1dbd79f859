use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use odenet_lab::{run_command, Command, ExperimentConfig, LabError};

#[derive(Parser)]
#[command(name = "odenet-lab", version, about = "Numerical-scheme and residual-network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Integrate a test problem and write trajectory.csv.
    Integrate(Common),
    /// Estimate a convergence order and write order.csv.
    Order(Common),
    /// Monte Carlo weak-error sweep on geometric Brownian motion; writes weak.csv.
    Weak(Common),
    /// Train one network; writes run.json, curves.csv, k.csv, params.ckpt.
    Train(Common),
    /// Paired multi-seed comparison of training groups.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out`, then `out/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Sub::Integrate(a) => (Command::Integrate, a),
        Sub::Order(a) => (Command::Order, a),
        Sub::Weak(a) => (Command::Weak, a),
        Sub::Train(a) => (Command::Train, a),
        Sub::Compare(a) => (Command::Compare, a),
    };
    let code = match execute(cmd, &args) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if let Some(flag) = &outcome.flag {
                eprintln!("flagged: {flag}");
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("odenet-lab {cmd}: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn execute(cmd: Command, args: &Common) -> Result<odenet_lab::Outcome, LabError> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out = Some(out.clone());
    }
    let out = config.out.clone().unwrap_or_else(|| PathBuf::from("out").join(cmd.name()));
    run_command(cmd, &config, &out)
}
