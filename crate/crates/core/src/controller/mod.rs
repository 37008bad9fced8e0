//! Aggregator controllers. All three see the same telemetry and emit
//! per-device switch commands:
//!
//! * [`pi`] feedback on the aggregate tracking error, switching randomly
//!   chosen eligible devices;
//! * [`markov`] one-step-ahead prediction with a temperature-bin Markov
//!   chain and probabilistic switching per bin;
//! * [`pem`] packetized energy management: devices request packets and the
//!   aggregator grants or denies them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::house::{HouseId, SwitchTarget};
use crate::plant::{DeviceCommand, DeviceReport};

pub mod markov;
pub mod pem;
pub mod pi;

pub use markov::{MarkovConfig, MarkovController};
pub use pem::{PemConfig, PemController};
pub use pi::{PiConfig, PiController};

/// What a controller sees at one control step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub time: f64,
    pub dt: f64,
    /// Target aggregate power for the coming interval (W).
    pub reference: f64,
    pub devices: &'a [DeviceReport],
}

impl Observation<'_> {
    /// Sum of reported device powers, skipping corrupt entries.
    pub fn aggregate_power(&self) -> f64 {
        self.devices.iter().filter(|d| !d.corrupt).map(|d| d.power_w).sum()
    }

    /// Mean power of running devices, falling back to their rated power.
    pub fn mean_running_power(&self) -> Option<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for d in self.devices.iter().filter(|d| !d.corrupt && d.compressor.is_on()) {
            sum += d.power_w;
            n += 1;
        }
        if n > 0 {
            return Some(sum / n as f64);
        }
        let rated: Vec<f64> = self.devices.iter().filter(|d| !d.corrupt).map(|d| d.rated_w).collect();
        (!rated.is_empty()).then(|| rated.iter().sum::<f64>() / rated.len() as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandBatch {
    pub commands: Vec<DeviceCommand>,
    /// The controller wanted more (or less) power than it could reach.
    pub saturated: bool,
    /// Signed control effort in the controller's own units, for logging.
    pub effort: f64,
}

pub trait Controller: Send {
    fn name(&self) -> &'static str;

    /// Uncontrolled telemetry seen during the baseline window. Model-based
    /// controllers learn from it; the default ignores it.
    fn observe_baseline(&mut self, _obs: &Observation) {}

    /// Called once when the baseline window closes.
    fn finish_baseline(&mut self) {}

    fn step(&mut self, obs: &Observation) -> CommandBatch;
}

/// Which controller to run, with its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ControllerConfig {
    Pi(PiConfig),
    Markov(MarkovConfig),
    Pem(PemConfig),
}

impl ControllerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerConfig::Pi(_) => "PI",
            ControllerConfig::Markov(_) => "Markov",
            ControllerConfig::Pem(_) => "PEM",
        }
    }

    pub fn build(&self, seed: u64) -> Box<dyn Controller> {
        match self {
            ControllerConfig::Pi(c) => Box::new(PiController::new(c.clone(), seed)),
            ControllerConfig::Markov(c) => Box::new(MarkovController::new(c.clone(), seed)),
            ControllerConfig::Pem(c) => Box::new(PemController::new(*c)),
        }
    }
}

/// Commands the aggregator has sent but not yet seen take effect.
#[derive(Debug, Clone, Default)]
pub struct PendingCommands {
    entries: HashMap<HouseId, (SwitchTarget, f64, f64)>,
    timeout: f64,
}

impl PendingCommands {
    pub fn new(timeout: f64) -> Self {
        Self { entries: HashMap::new(), timeout }
    }

    pub fn insert(&mut self, id: HouseId, target: SwitchTarget, time: f64, power: f64) {
        self.entries.insert(id, (target, time, power));
    }

    pub fn contains(&self, id: HouseId) -> bool {
        self.entries.contains_key(&id)
    }

    /// Drop entries that took effect, were rejected or timed out.
    pub fn refresh(&mut self, obs: &Observation) {
        if self.entries.is_empty() {
            return;
        }
        let timeout = self.timeout;
        for d in obs.devices {
            if let Some(&(target, sent, _)) = self.entries.get(&d.id) {
                let done = match target {
                    SwitchTarget::On => d.compressor.is_on(),
                    SwitchTarget::Off => !d.compressor.is_on(),
                    SwitchTarget::NoChange => true,
                };
                if done || d.accepted == Some(false) || obs.time - sent >= timeout {
                    self.entries.remove(&d.id);
                }
            }
        }
    }

    /// Power still expected from outstanding commands (W).
    pub fn expected_change(&self) -> f64 {
        self.entries
            .values()
            .map(|&(t, _, p)| match t {
                SwitchTarget::On => p,
                SwitchTarget::Off => -p,
                SwitchTarget::NoChange => 0.0,
            })
            .sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
