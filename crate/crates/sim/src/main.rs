use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use oam_core::controller::ControllerKind;
use oam_sim::output::write_outputs;
use oam_sim::{run_scenario, RunOptions, Scenario, SimConfig};

#[derive(Parser)]
#[command(name = "oam", about = "Aerial manipulator simulation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Grite,
    Gpid,
    Grise,
}

impl From<ControllerArg> for ControllerKind {
    fn from(c: ControllerArg) -> Self {
        match c {
            ControllerArg::Grite => ControllerKind::Grite,
            ControllerArg::Gpid => ControllerKind::Gpid,
            ControllerArg::Grise => ControllerKind::Grise,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a built-in scenario and write telemetry.csv, plan.json, metrics.json and solver_log.json.
    Run {
        #[arg(long)]
        scenario: String,
        /// JSON configuration; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "grite")]
        controller: ControllerArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        disable_collision_constraints: bool,
    },
    /// List the built-in scenarios.
    List,
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::List => {
            for name in oam_sim::SCENARIO_NAMES {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { scenario, config, out, controller, seed, disable_collision_constraints } => {
            let cfg = match &config {
                Some(path) => SimConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
                None => SimConfig::default(),
            };
            let scenario = Scenario::builtin(&scenario, &cfg.vehicle.manipulator())?;
            let opts = RunOptions { controller: controller.into(), seed, collision_avoidance: !disable_collision_constraints, gains: None };
            let outcome = run_scenario(&scenario, &cfg, &opts)?;
            write_outputs(&out, &outcome)?;
            match &outcome.failure {
                None => {
                    println!("{}: ok ({:.2} s, min certificate {:.4})", outcome.scenario, outcome.duration, outcome.min_certificate);
                    Ok(ExitCode::SUCCESS)
                }
                Some(f) => {
                    println!("{}: failed: {f}", outcome.scenario);
                    Ok(ExitCode::from(1))
                }
            }
        }
    }
}
