use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::PathBuf;
use std::time::Duration;

use acfleet_core::calibration::{self, NOMINAL_AMBIENT};
use acfleet_core::fleet::{Fleet, FleetSpec};
use acfleet_core::plant::{DeviceProtocol, Plant};
use acfleet_core::signal::{synthetic_regd, SyntheticRegD};
use acfleet_plantlink::{serve, ServerConfig};
use acfleet_runner::config::Seeds;
use acfleet_runner::matrix::{run_matrix, write_table, MatrixFile};
use acfleet_runner::presets::{case_config, case_spec, ControllerKind};
use acfleet_runner::validation::{run_validation, ValidationPreset};
use acfleet_runner::{run_experiment, ExperimentConfig};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "acfleet", version, about = "Air-conditioner fleet tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file or a case preset.
    Run {
        /// TOML experiment config.
        #[arg(long, conflicts_with = "case")]
        config: Option<PathBuf>,
        /// Case preset (1-10).
        #[arg(long)]
        case: Option<u8>,
        /// Controller for a case preset: pi, markov or pem.
        #[arg(long, default_value = "pem")]
        controller: ControllerKind,
        /// Replace every seed with streams derived from this one.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-house telemetry CSV.
        #[arg(long)]
        telemetry: bool,
        /// Print the resolved config as TOML and exit.
        #[arg(long)]
        dump_config: bool,
    },
    /// Run a case × controller matrix and write the summary table.
    Matrix {
        /// TOML file of `[[row]]` entries; all 30 cells when omitted.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Summary CSV path; stdout when omitted.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Directory for per-run metrics JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an open-loop validation scenario (exp1 ... exp7, or all).
    Validate {
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a simulated fleet over TCP for an external aggregator.
    ServePlant {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        #[arg(long, default_value_t = 543)]
        houses: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        dt: f64,
        /// Seconds to wait for commands; twice the control period by default.
        #[arg(long)]
        timeout: Option<f64>,
        /// Stop after this many steps.
        #[arg(long)]
        steps: Option<u64>,
        /// Run in wall-clock time instead of as fast as the aggregator answers.
        #[arg(long)]
        realtime: bool,
        /// Devices raise packet requests.
        #[arg(long)]
        packetized: bool,
    },
    /// Print the calibrated house model and its derived quantities.
    Calibrate,
    /// Write a synthetic regulation trace as `time_s,value` CSV.
    GenRegd {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7200.0)]
        duration: f64,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ExperimentConfig::from_toml(&text)?)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config, case, controller, seed, out, telemetry, dump_config } => {
            let mut cfg = match (config, case) {
                (Some(path), _) => load_config(&path)?,
                (None, Some(c)) => {
                    let spec = case_spec(c).with_context(|| format!("no preset for case {c}"))?;
                    case_config(&spec, controller, seed.unwrap_or(1))
                }
                (None, None) => bail!("give --config or --case"),
            };
            if let Some(s) = seed {
                cfg.seeds = Seeds::from_master(s);
            }
            if out.is_some() {
                cfg.output.dir = out;
            }
            cfg.output.telemetry |= telemetry;
            if dump_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let r = run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Matrix { matrix, seed, table, out } => {
            let m = match matrix {
                Some(path) => MatrixFile::from_toml(&fs::read_to_string(&path)?)?,
                None => MatrixFile::full(seed),
            };
            let outcomes = run_matrix(&m.row, &|cfg| cfg.output.dir = out.clone());
            let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
            match table {
                Some(path) => write_table(&outcomes, fs::File::create(path)?)?,
                None => write_table(&outcomes, std::io::stdout().lock())?,
            }
            if failed > 0 {
                log::warn!("{failed} of {} rows failed", outcomes.len());
            }
        }
        Command::Validate { name, seed, out } => {
            let presets: Vec<ValidationPreset> = if name == "all" {
                ValidationPreset::ALL.to_vec()
            } else {
                vec![name.parse().map_err(anyhow::Error::msg)?]
            };
            let mut all_pass = true;
            for p in presets {
                let report = run_validation(p, seed)?;
                for c in &report.checks {
                    println!("{} {:<40} {} ({})", p.name(), c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
                    all_pass &= c.passed;
                }
                if let Some(dir) = &out {
                    fs::create_dir_all(dir)?;
                    let f = fs::File::create(dir.join(format!("{}.json", p.name())))?;
                    serde_json::to_writer_pretty(f, &report)?;
                }
            }
            if !all_pass {
                std::process::exit(1);
            }
        }
        Command::ServePlant { bind, houses, seed, dt, timeout, steps, realtime, packetized } => {
            let fleet = Fleet::from_spec(&FleetSpec::nominal(houses, seed), NOMINAL_AMBIENT)?;
            let mut plant = Plant::new(fleet, NOMINAL_AMBIENT, dt, 1.0, Seeds::from_master(seed).plant);
            if packetized {
                plant.set_protocol(DeviceProtocol::Packetized(Default::default()));
            }
            let mut cfg = ServerConfig::for_control_dt(dt);
            if let Some(t) = timeout {
                cfg.step_timeout = Duration::from_secs_f64(t);
            }
            cfg.max_steps = steps;
            cfg.pace = realtime.then(|| Duration::from_secs_f64(dt));
            let listener = TcpListener::bind(&bind)?;
            log::info!("plant with {houses} houses listening on {}", listener.local_addr()?);
            let sessions = serve(&listener, &mut plant, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&sessions)?);
        }
        Command::Calibrate => {
            let s = calibration::summarize(&calibration::nominal_thermal(), &calibration::nominal_ac())?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::GenRegd { out, duration, seed } => {
            let trace = synthetic_regd(&SyntheticRegD { duration, seed, ..SyntheticRegD::default() });
            let mut f = fs::File::create(&out)?;
            trace.write(&mut f)?;
            f.flush()?;
        }
    }
    Ok(())
}
