//! Experiment configuration.
//!
//! A run is described by one TOML document. Every table has defaults, so a
//! file only needs what differs from the nominal case:
//!
//! ```toml
//! name = "case1-pem"
//! heat_gain_w = 200.0
//! ambient_c = 32.2
//!
//! [controller]
//! kind = "pem"
//! epoch_length = 300.0
//! mean_time_to_request = 300.0
//! allow_turn_off_requests = true
//! pending_timeout = 30.0
//!
//! [signal]
//! kind = "regd"
//! amplitude_fraction = 0.2
//!
//! [channel]
//! kind = "perfect"
//! ```

use std::path::PathBuf;

use acfleet_core::calibration::{self, EXTREME_AMBIENT, EXTREME_HEAT_GAIN, NOMINAL_AMBIENT, NOMINAL_HEAT_GAIN};
use acfleet_core::channel::ChannelModel;
use acfleet_core::controller::{ControllerConfig, PemConfig};
use acfleet_core::fleet::FleetSpec;
use acfleet_core::grid::AssignmentRule;
use acfleet_core::signal::SyntheticRegD;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Nominal,
    Extreme,
}

/// The labelled conditions of a matrix case. The fields that drive the
/// simulation live elsewhere in the config; this block records intent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Conditions {
    pub signal: Level,
    pub amplitude_fraction: f64,
    pub comm: Level,
    pub outdoor: Level,
}

impl Default for Conditions {
    fn default() -> Self {
        Self { signal: Level::Nominal, amplitude_fraction: 0.2, comm: Level::Nominal, outdoor: Level::Nominal }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetConfig {
    pub n_houses: usize,
    /// Houses tagged as the remote hardware group.
    pub n_remote: usize,
    pub heterogeneity_fraction: f64,
    pub avg_on_power_w: f64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self { n_houses: 543, n_remote: 20, heterogeneity_fraction: 0.2, avg_on_power_w: 2600.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SignalKind {
    /// Flat at the baseline.
    Constant,
    /// Alternates high then low every half period.
    Square { period_s: f64 },
    /// Regulation trace: read from a `time_s,value` file, or generated.
    Regd {
        #[serde(default)]
        trace: Option<PathBuf>,
        #[serde(default)]
        synthetic: SyntheticRegD,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    #[serde(flatten)]
    pub kind: SignalKind,
    #[serde(default)]
    pub amplitude_fraction: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self { kind: SignalKind::Regd { trace: None, synthetic: SyntheticRegD::default() }, amplitude_fraction: 0.2 }
    }
}

impl SignalConfig {
    pub fn is_regd(&self) -> bool {
        matches!(self.kind, SignalKind::Regd { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[derive(Default)]
pub enum ChannelConfig {
    #[default]
    Perfect,
    Impaired {
        delay_mean_s: f64,
        delay_std_s: f64,
        loss_min: f64,
        loss_max: f64,
        /// Pass telemetry through an independent copy of the channel too.
        #[serde(default)]
        impair_measurements: bool,
    },
}

impl ChannelConfig {
    pub fn extreme() -> Self {
        let m = ChannelModel::impaired(0);
        ChannelConfig::Impaired {
            delay_mean_s: m.delay_mean,
            delay_std_s: m.delay_std,
            loss_min: m.loss_rate_min,
            loss_max: m.loss_rate_max,
            impair_measurements: false,
        }
    }

    /// Model for the telemetry path, if it is impaired.
    pub fn measurement_model(&self, seed: u64) -> Option<ChannelModel> {
        match *self {
            ChannelConfig::Impaired { impair_measurements: true, .. } => Some(self.model(seed.wrapping_add(1))),
            _ => None,
        }
    }

    pub fn model(&self, seed: u64) -> ChannelModel {
        match *self {
            ChannelConfig::Perfect => ChannelModel { rng_seed: seed, ..ChannelModel::perfect() },
            ChannelConfig::Impaired { delay_mean_s, delay_std_s, loss_min, loss_max, .. } => ChannelModel {
                delay_mean: delay_mean_s,
                delay_std: delay_std_s,
                loss_rate_min: loss_min,
                loss_rate_max: loss_max,
                ..ChannelModel::impaired(seed)
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub n_transformers: usize,
    pub assignment: AssignmentRule,
    /// Loading (p.u.) of each transformer at its uncontrolled peak.
    pub headroom: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n_transformers: 50, assignment: AssignmentRule::Uniform, headroom: 0.9 }
    }
}

/// Phase lengths, all in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Timing {
    pub control_dt: f64,
    pub physics_dt: f64,
    /// Uncontrolled run discarded before anything is measured.
    pub warmup_s: f64,
    /// Uncontrolled run over which the baseline is averaged and model-based
    /// controllers learn.
    pub baseline_s: f64,
    /// Tracking phase.
    pub duration_s: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Self { control_dt: 2.0, physics_dt: 1.0, warmup_s: 1800.0, baseline_s: 1800.0, duration_s: 2400.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub fleet: u64,
    pub plant: u64,
    pub controller: u64,
    pub channel: u64,
    pub grid: u64,
    pub fairness: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self::from_master(1)
    }
}

impl Seeds {
    /// Derive every stream from one number.
    pub fn from_master(m: u64) -> Self {
        Self {
            fleet: m,
            plant: m.wrapping_add(1_000),
            controller: m.wrapping_add(2_000),
            channel: m.wrapping_add(3_000),
            grid: m.wrapping_add(4_000),
            fairness: m.wrapping_add(5_000),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    /// Where the metrics JSON (and telemetry CSV if asked) go.
    pub dir: Option<PathBuf>,
    /// Per-house telemetry CSV for the tracking phase.
    pub telemetry: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub fleet: FleetConfig,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub signal: SignalConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub conditions: Conditions,
    #[serde(default = "default_heat_gain")]
    pub heat_gain_w: f64,
    #[serde(default = "default_ambient")]
    pub ambient_c: f64,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_heat_gain() -> f64 {
    NOMINAL_HEAT_GAIN
}

fn default_ambient() -> f64 {
    NOMINAL_AMBIENT
}

impl ExperimentConfig {
    /// Nominal conditions, perfect channel, the given controller.
    pub fn nominal(name: impl Into<String>, controller: ControllerConfig) -> Self {
        Self {
            name: name.into(),
            fleet: FleetConfig::default(),
            controller,
            signal: SignalConfig::default(),
            channel: ChannelConfig::Perfect,
            grid: GridConfig::default(),
            conditions: Conditions::default(),
            heat_gain_w: NOMINAL_HEAT_GAIN,
            ambient_c: NOMINAL_AMBIENT,
            timing: Timing::default(),
            seeds: Seeds::default(),
            output: OutputConfig::default(),
        }
    }

    /// Apply the outdoor level: temperature and internal heat gain move
    /// together.
    pub fn set_outdoor(&mut self, level: Level) {
        self.conditions.outdoor = level;
        (self.ambient_c, self.heat_gain_w) = match level {
            Level::Nominal => (NOMINAL_AMBIENT, NOMINAL_HEAT_GAIN),
            Level::Extreme => (EXTREME_AMBIENT, EXTREME_HEAT_GAIN),
        };
    }

    pub fn set_comm(&mut self, level: Level) {
        self.conditions.comm = level;
        self.channel = match level {
            Level::Nominal => ChannelConfig::Perfect,
            Level::Extreme => ChannelConfig::extreme(),
        };
    }

    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Config(m.to_string()));
        let t = &self.timing;
        if !(t.control_dt > 0.0 && t.physics_dt > 0.0) {
            return bad("time steps must be positive");
        }
        if !(t.warmup_s >= 0.0 && t.baseline_s >= t.control_dt && t.duration_s >= t.control_dt) {
            return bad("baseline and tracking phases need at least one control step");
        }
        if !(0.0..=1.0).contains(&self.signal.amplitude_fraction) {
            return bad("amplitude_fraction must lie in [0, 1]");
        }
        if let SignalKind::Square { period_s } = self.signal.kind {
            if !(period_s > 0.0) {
                return bad("square period must be positive");
            }
        }
        if self.grid.n_transformers == 0 || !(self.grid.headroom > 0.0) {
            return bad("grid needs at least one transformer and positive headroom");
        }
        if !(self.heat_gain_w >= 0.0 && self.ambient_c.is_finite()) {
            return bad("heat gain must be >= 0 and ambient finite");
        }
        self.channel.model(0).validate().map_err(|e| RunError::Config(e.to_string()))?;
        self.fleet_spec().validate()?;
        Ok(())
    }

    /// Population description with the configured heat gain.
    pub fn fleet_spec(&self) -> FleetSpec {
        let mut spec = FleetSpec::nominal(self.fleet.n_houses, self.seeds.fleet);
        spec.nominal.heat = calibration::nominal_heat(self.heat_gain_w);
        spec.heterogeneity_fraction = self.fleet.heterogeneity_fraction;
        spec.avg_on_power_target = self.fleet.avg_on_power_w;
        spec.n_remote = self.fleet.n_remote.min(self.fleet.n_houses);
        spec
    }

    /// Short digest of the resolved configuration, output paths excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        let json = serde_json::to_string(&c).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Controllers that need the device agents to raise requests.
    pub fn packetized(&self) -> Option<PemConfig> {
        match &self.controller {
            ControllerConfig::Pem(c) => Some(*c),
            _ => None,
        }
    }
}
