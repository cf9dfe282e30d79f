use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sheathkit::diagnostics::{select_constants, SelectionMode, SelectionRequest};
use sheathkit::experiments::{
    run_bohm_scan, run_check_elliptic, run_evolve, run_instability, run_stability, run_stationary, write_json,
    EvolveSpec, ExperimentSpec,
};
use sheathkit::{Result, SheathError};

#[derive(Parser)]
#[command(name = "sheathkit", version, about = "Kinetic plasma-sheath toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run directory; nothing is written when absent.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    I,
    Ii,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the stationary sheath and report K, sup B and the decay rate.
    Stationary(Common),
    /// Evolve the configured initial data.
    Evolve {
        #[command(flatten)]
        common: Common,
        /// Evolution settings overriding the `[evolve]` table.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Decay of a perturbation supported in `xi_1 <= -r + epsilon`.
    Stability(Common),
    /// Growth of a perturbation supported in `[R1, R2]`.
    Instability(Common),
    /// Bohm integral, sup B and solvability over a range of `u_infty`.
    BohmScan(Common),
    /// Search for constants satisfying the stability condition.
    SelectConstants {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Barrier bounds and weighted inequalities of the perturbation potential.
    CheckElliptic(Common),
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>, name: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| SheathError::Serialization(e.to_string()))?;
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    if let Some(d) = out {
        std::fs::create_dir_all(d)?;
        write_json(&d.join(name), value)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stationary(c) => {
            let spec = ExperimentSpec::from_path(&c.config)?;
            emit(&run_stationary(&spec, c.out_dir.as_deref())?, None, "")
        }
        Command::Evolve { common, spec: evolve } => {
            let mut spec = ExperimentSpec::from_path(&common.config)?;
            if let Some(p) = evolve {
                let e: EvolveSpec = sheathkit::config::read_structured(&p)?;
                spec.evolve = e;
                spec.validate()?;
            }
            let run = run_evolve(&spec, common.out_dir.as_deref())?;
            let last = run.series.last().copied();
            emit(
                &serde_json::json!({
                    "stop": run.stop,
                    "final_time": run.final_time,
                    "steps": run.steps,
                    "mass": run.mass,
                    "last_sample": last,
                }),
                None,
                "",
            )
        }
        Command::Stability(c) => {
            let spec = ExperimentSpec::from_path(&c.config)?;
            let (report, _) = run_stability(&spec, c.out_dir.as_deref())?;
            emit(&report, None, "")
        }
        Command::Instability(c) => {
            let spec = ExperimentSpec::from_path(&c.config)?;
            emit(&run_instability(&spec, c.out_dir.as_deref())?, None, "")
        }
        Command::BohmScan(c) => {
            let spec = ExperimentSpec::from_path(&c.config)?;
            emit(&run_bohm_scan(&spec, c.out_dir.as_deref())?, None, "")
        }
        Command::SelectConstants { common, mode } => {
            let spec = ExperimentSpec::from_path(&common.config)?;
            let epsilon = spec
                .stability
                .map(|s| s.epsilon)
                .ok_or_else(|| SheathError::InvalidConfig("select-constants needs [stability] epsilon".into()))?;
            let p = spec.plasma;
            let req = match mode {
                Mode::I => SelectionRequest {
                    mode: SelectionMode::ConditionI,
                    u_infty: Some(p.u_infty),
                    theta_infty: None,
                    r: p.r,
                    sigma: p.sigma,
                    epsilon,
                },
                Mode::Ii => SelectionRequest {
                    mode: SelectionMode::ConditionIi,
                    u_infty: None,
                    theta_infty: Some(p.theta_infty),
                    r: p.r,
                    sigma: p.sigma,
                    epsilon,
                },
            };
            emit(&select_constants(&req)?, common.out_dir.as_deref(), "verdict.json")
        }
        Command::CheckElliptic(c) => {
            let spec = ExperimentSpec::from_path(&c.config)?;
            emit(&run_check_elliptic(&spec, c.out_dir.as_deref())?, None, "")
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
