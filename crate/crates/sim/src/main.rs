//! Command-line front end: world generation, sensor simulation, dataset
//! localization, and trajectory evaluation.
//!
//! Exit codes: 0 success, 1 input or processing error, 2 when the run ends
//! with localization lost after a failed re-localization.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use maploc_core::config::load_config;
use maploc_core::map::{load_map, save_cloud, GlobalMap};
use maploc_sim::evaluate::{compute_ate_rmse, DEFAULT_MAX_DT};
use maploc_sim::logio::{read_event_log, read_trajectory, write_event_log, write_trajectory};
use maploc_sim::replay::replay;
use maploc_sim::sensors::simulate_sensors;
use maploc_sim::specfile::{load_noise, load_scenario};
use maploc_sim::trajectory::Trajectory;
use maploc_sim::world::generate_world;

#[derive(Parser)]
#[command(name = "maploc", about = "Map-based LIDAR-inertial-GNSS localization test bench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and write it as a map file.
    MakeMap {
        /// Scenario spec file (world section is used).
        #[arg(long)]
        spec: PathBuf,
        /// Output map file (ASCII `x y z`).
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate sensors along the scenario trajectory into a dataset
    /// directory (events.log, scans/, truth.txt).
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        /// Noise model file.
        #[arg(long)]
        noise: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize a recorded dataset against a prior map.
    Localize {
        #[arg(long)]
        map: PathBuf,
        /// Event log file (scan paths resolve relative to it).
        #[arg(long)]
        log: PathBuf,
        /// Pipeline configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output trajectory file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an estimated trajectory against ground truth and print the
    /// translation RMSE.
    Evaluate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Association tolerance, seconds.
        #[arg(long, default_value_t = DEFAULT_MAX_DT)]
        max_dt: f64,
        /// Evaluate horizontal error only.
        #[arg(long)]
        xy_only: bool,
    },
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::MakeMap { spec, out } => {
            let scenario = load_scenario(&spec).map_err(|e| e.to_string())?;
            let world = generate_world(&scenario.world);
            if world.is_empty() {
                eprintln!("warning: feature density is zero, the map is empty");
            }
            save_cloud(&out, &world).map_err(|e| e.to_string())?;
            eprintln!("map: {} points -> {}", world.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { spec, noise, out } => {
            let scenario = load_scenario(&spec).map_err(|e| e.to_string())?;
            let noise = load_noise(&noise).map_err(|e| e.to_string())?;
            let world = GlobalMap::from_cloud(generate_world(&scenario.world))
                .map_err(|e| format!("world generation: {e}"))?;
            let trajectory = Trajectory::new(&scenario.trajectory).map_err(|e| e.to_string())?;
            let log = simulate_sensors(
                &world,
                &trajectory,
                &noise,
                &scenario.rates,
                maploc_core::gnss_ekf::GRAVITY_MS2,
            );
            let path = write_event_log(&out, &log).map_err(|e| e.to_string())?;
            eprintln!(
                "dataset: {} records ({} scans) -> {}",
                log.records.len(),
                log.lidar_count(),
                path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Localize { map, log, config, out } => {
            let map = load_map(&map).map_err(|e| e.to_string())?;
            let log = read_event_log(&log).map_err(|e| e.to_string())?;
            let config = load_config(&config).map_err(|e| e.to_string())?;
            let outcome = replay(&log, map, config).map_err(|e| e.to_string())?;
            write_trajectory(&out, &outcome.trajectory).map_err(|e| e.to_string())?;
            eprintln!(
                "localized: {} poses, {} registrations ({} failed), {} relocalizations ({} failed)",
                outcome.trajectory.len(),
                outcome.stats.registrations,
                outcome.stats.registration_failures,
                outcome.stats.relocalizations,
                outcome.stats.relocalization_failures,
            );
            if outcome.ended_lost() {
                eprintln!("error: run ended with localization lost (re-localization failed)");
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { est, truth, max_dt, xy_only } => {
            let est = read_trajectory(&est).map_err(|e| e.to_string())?;
            let truth = read_trajectory(&truth).map_err(|e| e.to_string())?;
            let rmse = compute_ate_rmse(&est, &truth, max_dt, xy_only).map_err(|e| e.to_string())?;
            println!("{rmse}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
