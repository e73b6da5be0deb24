use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cavlink_cli::commands::run_mode;
use cavlink_cli::config::{apply_overrides, RunConfig};
use cavlink_cli::CliError;

/// Simulator and verifier for repeat-until-success quantum-state
/// transmission between two cavity-QED nodes.
#[derive(Parser)]
#[command(name = "cavlink", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Base seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of runs/trajectories override.
    #[arg(long)]
    n_runs: Option<usize>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path config overrides, e.g. `noise.p_nojump=0.5`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Abstract-channel protocol Monte Carlo.
    Protocol(Common),
    /// Full cascaded-cavity trajectory runs over the variant grid.
    Physical(Common),
    /// Environment commuting-condition checks.
    EnvCheck(Common),
    /// Laser-pulse construction for the transmission gate.
    PulseDesign(Common),
    /// Trajectory ensemble against direct density-matrix integration.
    OracleCompare(Common),
}

impl Command {
    fn mode_name(&self) -> &'static str {
        match self {
            Command::Protocol(_) => "protocol",
            Command::Physical(_) => "physical",
            Command::EnvCheck(_) => "env-check",
            Command::PulseDesign(_) => "pulse-design",
            Command::OracleCompare(_) => "oracle-compare",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Protocol(c)
            | Command::Physical(c)
            | Command::EnvCheck(c)
            | Command::PulseDesign(c)
            | Command::OracleCompare(c) => c,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = cli.command.common();
    let text = std::fs::read_to_string(&common.config).map_err(|e| {
        CliError::Config(format!("cannot read {}: {e}", common.config.display()))
    })?;

    let mut overrides = vec![format!("mode=\"{}\"", cli.command.mode_name())];
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(n) = common.n_runs {
        overrides.push(format!("n_runs={n}"));
    }
    if let Some(out) = &common.out {
        overrides.push(format!("out_dir=\"{}\"", out.display()));
    }
    overrides.extend(common.overrides.iter().cloned());

    let patched = apply_overrides(&text, &overrides)?;
    let cfg = RunConfig::from_json(&patched)?;
    let line = run_mode(&cfg)?;
    println!("{line}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
