//! The ten tracking cases and the tuned controller settings.

use acfleet_core::controller::{ControllerConfig, MarkovConfig, PemConfig, PiConfig};
use acfleet_core::signal::SyntheticRegD;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Level, SignalConfig, SignalKind};

/// Period of the square-wave reference (s).
pub const SQUARE_PERIOD_S: f64 = 600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Pi,
    Markov,
    Pem,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::Pi, ControllerKind::Markov, ControllerKind::Pem];

    pub fn label(self) -> &'static str {
        match self {
            ControllerKind::Pi => "PI",
            ControllerKind::Markov => "Markov",
            ControllerKind::Pem => "PEM",
        }
    }

    /// Tuned settings for a fleet of `n_houses` at control period `dt`.
    pub fn config(self, n_houses: usize, avg_on_power: f64, dt: f64) -> ControllerConfig {
        match self {
            ControllerKind::Pi => ControllerConfig::Pi(PiConfig {
                // Low gains keep the loop stable at the impaired channel's
                // delay of about nine control steps.
                kp: 0.1,
                ki: 0.0005,
                // Ten steps of the whole fleet's running power.
                anti_windup_limit: 10.0 * n_houses as f64 * avg_on_power * dt,
                ..PiConfig::default()
            }),
            ControllerKind::Markov => ControllerConfig::Markov(MarkovConfig::default()),
            ControllerKind::Pem => ControllerConfig::Pem(PemConfig {
                // Short waits keep enough requests queued to fill sudden rises.
                mean_time_to_request: 60.0,
                ..PemConfig::default()
            }),
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pi" => Ok(ControllerKind::Pi),
            "markov" => Ok(ControllerKind::Markov),
            "pem" => Ok(ControllerKind::Pem),
            _ => Err(format!("unknown controller {s:?} (pi, markov, pem)")),
        }
    }
}

/// Conditions of one matrix case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub case: u8,
    /// Extreme means the square wave instead of the regulation trace.
    pub signal: Level,
    pub amplitude_fraction: f64,
    /// Not simulated; kept so the table reads like the original.
    pub voltage: Level,
    pub comm: Level,
    pub outdoor: Level,
}

const fn case(case: u8, signal: Level, amp: f64, voltage: Level, comm: Level, outdoor: Level) -> CaseSpec {
    CaseSpec { case, signal, amplitude_fraction: amp, voltage, comm, outdoor }
}

use Level::{Extreme as E, Nominal as N};

pub const CASES: [CaseSpec; 10] = [
    case(1, N, 0.2, N, N, N),
    case(2, E, 0.3, N, N, N),
    case(3, N, 0.3, N, E, N),
    case(4, N, 0.1, N, N, E),
    case(5, N, 0.1, E, E, N),
    case(6, N, 0.3, E, N, E),
    case(7, E, 0.1, N, E, E),
    case(8, E, 0.1, E, N, N),
    case(9, N, 0.2, N, N, E),
    case(10, E, 0.3, E, E, E),
];

pub fn case_spec(case: u8) -> Option<CaseSpec> {
    CASES.iter().copied().find(|c| c.case == case)
}

/// Full configuration for one (case, controller) cell.
pub fn case_config(spec: &CaseSpec, controller: ControllerKind, master_seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::nominal(
        format!("case{:02}-{}", spec.case, controller.label().to_ascii_lowercase()),
        ControllerConfig::Pi(PiConfig::default()),
    );
    cfg.seeds = crate::config::Seeds::from_master(master_seed);
    cfg.controller = controller.config(cfg.fleet.n_houses, cfg.fleet.avg_on_power_w, cfg.timing.control_dt);
    cfg.signal = SignalConfig {
        kind: match spec.signal {
            Level::Nominal => SignalKind::Regd { trace: None, synthetic: SyntheticRegD::default() },
            Level::Extreme => SignalKind::Square { period_s: SQUARE_PERIOD_S },
        },
        amplitude_fraction: spec.amplitude_fraction,
    };
    cfg.conditions.signal = spec.signal;
    cfg.conditions.amplitude_fraction = spec.amplitude_fraction;
    cfg.set_comm(spec.comm);
    cfg.set_outdoor(spec.outdoor);
    cfg
}
