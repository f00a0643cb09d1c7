//! `swingreach`: reachability sets, attack runs and HITL endpoints for the
//! single-machine infinite-bus model, driven by a TOML scenario file.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use swingreach::plant::RelayStatus;

use crate::config::ScenarioConfig;
use crate::error::CliResult;
use crate::output::Output;

#[derive(Debug, Parser)]
#[command(name = "swingreach", version, about = "Reachability and attack scenarios for an SMIB power system")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (TOML). Missing keys take the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Nodes per axis for both grids.
    #[arg(long, global = true)]
    grid: Option<usize>,

    /// Horizon in seconds for the selected subcommand.
    #[arg(long, global = true)]
    horizon: Option<f64>,

    /// Relay states to run (overrides `relays` in the config).
    #[arg(long, global = true)]
    relay: Option<RelayArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RelayArg {
    Open,
    Closed,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stability regions with snapshots.
    Stability,
    /// Invariant and viability sets plus the open/closed intersection.
    Invariant,
    /// Trajectories from the configured initial states.
    Simulate,
    /// Optimal keep-out attacks and the coordinated relay attack.
    Attack,
    /// Invariant-set emptiness over a range of disturbance bounds.
    Sweep,
    /// Plant, controller and proxy over loopback TCP in one process.
    Hitl {
        /// Pace the plant at wall-clock speed.
        #[arg(long)]
        realtime: bool,
    },
    /// Plant endpoint: listens for the controller (or proxy).
    HitlPlant {
        #[arg(long, default_value = "127.0.0.1:7700")]
        listen: String,
        #[arg(long)]
        realtime: bool,
    },
    /// Controller endpoint: connects to the plant (or proxy).
    HitlController {
        #[arg(long, default_value = "127.0.0.1:7701")]
        connect: String,
    },
    /// Spoofing proxy: connects to the plant, then listens for the controller.
    HitlProxy {
        #[arg(long, default_value = "127.0.0.1:7701")]
        listen: String,
        #[arg(long, default_value = "127.0.0.1:7700")]
        connect: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Stability => "stability",
            Command::Invariant => "invariant",
            Command::Simulate => "simulate",
            Command::Attack => "attack",
            Command::Sweep => "sweep",
            Command::Hitl { .. } => "hitl",
            Command::HitlPlant { .. } => "hitl-plant",
            Command::HitlController { .. } => "hitl-controller",
            Command::HitlProxy { .. } => "hitl-proxy",
        }
    }
}

fn resolve(cli: &Cli) -> CliResult<ScenarioConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(n) = cli.grid {
        cfg.grid.n_delta = n;
        cfg.grid.n_omega = n;
        cfg.set_grid.nodes = n;
    }
    if let Some(relay) = cli.relay {
        cfg.relays = match relay {
            RelayArg::Open => vec![RelayStatus::Open],
            RelayArg::Closed => vec![RelayStatus::Closed],
            RelayArg::Both => vec![RelayStatus::Open, RelayStatus::Closed],
        };
        if let RelayArg::Open | RelayArg::Closed = relay {
            cfg.hitl.relay = cfg.relays[0];
        }
    }
    if let Some(h) = cli.horizon {
        match cli.command {
            Command::Stability | Command::Invariant => cfg.horizon = h,
            Command::Simulate => cfg.simulation.horizon = h,
            Command::Attack => cfg.attack.horizon = h,
            Command::Sweep => cfg.sweep.horizon = h,
            Command::Hitl { .. } | Command::HitlPlant { .. } | Command::HitlController { .. } | Command::HitlProxy { .. } => {
                cfg.hitl.horizon = h
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = resolve(cli)?;
    let out = Output::create(&cfg.out, cli.command.name(), &cfg)?;
    match &cli.command {
        Command::Stability => commands::stability(&cfg, &out),
        Command::Invariant => commands::invariant(&cfg, &out),
        Command::Simulate => commands::simulate_cmd(&cfg, &out),
        Command::Attack => commands::attack(&cfg, &out),
        Command::Sweep => commands::sweep(&cfg, &out),
        Command::Hitl { realtime } => commands::hitl(&cfg, &out, *realtime),
        Command::HitlPlant { listen, realtime } => commands::hitl_plant(&cfg, &out, listen, *realtime),
        Command::HitlController { connect } => commands::hitl_controller(&cfg, &out, connect),
        Command::HitlProxy { listen, connect } => commands::hitl_proxy(&cfg, &out, listen, connect),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::CliError;

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_the_config() {
        let cli = Cli::parse_from(["swingreach", "sweep", "--grid", "51", "--horizon", "2", "--relay", "closed"]);
        let cfg = resolve(&cli).unwrap();
        assert_eq!((cfg.grid.n_delta, cfg.set_grid.nodes), (51, 51));
        assert_eq!(cfg.sweep.horizon, 2.0);
        assert_eq!(cfg.horizon, 3.0);
        assert_eq!(cfg.relays, vec![RelayStatus::Closed]);
    }

    #[test]
    fn invalid_overrides_are_config_errors() {
        let cli = Cli::parse_from(["swingreach", "stability", "--grid", "1"]);
        assert!(matches!(resolve(&cli), Err(CliError::Config(_))));
        let cli = Cli::parse_from(["swingreach", "simulate", "--horizon=-1"]);
        assert!(matches!(resolve(&cli), Err(CliError::Config(_))));
    }
}
