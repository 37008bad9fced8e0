//! One house: thermal physics behind a deadband thermostat, compressor
//! lockout, a lagged temperature sensor and an inrush-event record.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::thermal::{
    ac_power, step_thermal, thermometer_reading, AcParams, Deadband, HeatInputs, ThermalError, ThermalParams,
    ThermalState,
};

/// Opaque house identifier, rendered as `h00042` on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HouseId(pub u32);

impl fmt::Display for HouseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{:05}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed house id {0:?}")]
pub struct ParseHouseIdError(pub String);

impl FromStr for HouseId {
    type Err = ParseHouseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('h').and_then(|n| n.parse().ok()).map(HouseId).ok_or_else(|| ParseHouseIdError(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HouseParams {
    pub id: HouseId,
    pub thermal: ThermalParams,
    pub ac: AcParams,
    pub heat: HeatInputs,
    pub setpoint: f64,
    pub deadband_halfwidth: f64,
    /// First-order lag of the temperature sensor (s). Zero reads the
    /// thermometer directly.
    pub sensor_lag_tau: f64,
}

impl HouseParams {
    pub fn deadband(&self) -> Deadband {
        Deadband::around(self.setpoint, self.deadband_halfwidth)
    }

    pub fn validate(&self) -> Result<(), ThermalError> {
        self.thermal.validate()?;
        self.ac.validate()?;
        self.heat.validate()?;
        if !(self.deadband_halfwidth > 0.0) {
            return Err(ThermalError::InvalidParams("deadband_halfwidth must be > 0".into()));
        }
        if !(self.sensor_lag_tau >= 0.0) {
            return Err(ThermalError::InvalidParams("sensor_lag_tau must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Compressor {
    On,
    Off,
    /// Off and barred from restarting for `remaining` seconds.
    LockedOff {
        remaining: f64,
    },
    /// On and barred from stopping for `remaining` seconds.
    LockedOn {
        remaining: f64,
    },
}

impl Compressor {
    pub fn is_on(&self) -> bool {
        matches!(self, Compressor::On | Compressor::LockedOn { .. })
    }

    pub fn is_locked_off(&self) -> bool {
        matches!(self, Compressor::LockedOff { .. })
    }

    /// Remaining lockout time, zero if none.
    pub fn lockout_remaining(&self) -> f64 {
        match *self {
            Compressor::LockedOff { remaining } | Compressor::LockedOn { remaining } => remaining,
            _ => 0.0,
        }
    }

    /// Short state name used in telemetry.
    pub fn label(&self) -> &'static str {
        match self {
            Compressor::On => "on",
            Compressor::Off => "off",
            Compressor::LockedOff { .. } => "locked_off",
            Compressor::LockedOn { .. } => "locked_on",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HouseState {
    pub thermal: ThermalState,
    /// Lagged sensor temperature that the thermostat acts on (°C).
    pub measured: f64,
    pub compressor: Compressor,
    /// Seconds since the compressor last changed between on and off.
    pub time_in_state: f64,
    /// Seconds since the last off-to-on transition.
    pub cycle_phase_time: f64,
    pub on_transitions: u64,
    pub off_transitions: u64,
}

impl HouseState {
    /// Start with every node at `temp`, compressor idle and unlocked.
    pub fn at_rest(params: &HouseParams, temp: f64, ambient: f64) -> Self {
        let thermal = ThermalState { water: temp, air: temp, evaporator: temp, condenser: ambient, ambient };
        Self {
            thermal,
            measured: thermometer_reading(&thermal, &params.thermal),
            compressor: Compressor::Off,
            time_in_state: 0.0,
            cycle_phase_time: f64::INFINITY,
            on_transitions: 0,
            off_transitions: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwitchTarget {
    On,
    Off,
    NoChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommandSource {
    Thermostat,
    Aggregator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchCommand {
    pub target: SwitchTarget,
    pub source: CommandSource,
}

impl SwitchCommand {
    pub const NONE: SwitchCommand = SwitchCommand { target: SwitchTarget::NoChange, source: CommandSource::Aggregator };

    pub fn aggregator(target: SwitchTarget) -> Self {
        Self { target, source: CommandSource::Aggregator }
    }

    fn thermostat(target: SwitchTarget) -> Self {
        Self { target, source: CommandSource::Thermostat }
    }
}

/// Deadband thermostat acting on the lagged sensor temperature.
pub fn thermostat_decision(state: &HouseState, params: &HouseParams) -> SwitchCommand {
    let db = params.deadband();
    let target = match state.compressor {
        Compressor::Off if state.measured >= db.upper => SwitchTarget::On,
        Compressor::On if state.measured <= db.lower => SwitchTarget::Off,
        _ => SwitchTarget::NoChange,
    };
    SwitchCommand::thermostat(target)
}

/// Apply a switch command if the compressor can legally follow it.
///
/// Returns the new state and whether the command was accepted. `NoChange`
/// and commands matching the current on/off state are accepted without
/// effect.
pub fn apply_command(state: &HouseState, cmd: SwitchCommand, params: &HouseParams) -> (HouseState, bool) {
    let mut next = *state;
    match (cmd.target, state.compressor) {
        (SwitchTarget::NoChange, _) => (next, true),
        (SwitchTarget::On, Compressor::On | Compressor::LockedOn { .. }) => (next, true),
        (SwitchTarget::Off, Compressor::Off | Compressor::LockedOff { .. }) => (next, true),
        (SwitchTarget::On, Compressor::LockedOff { .. }) => (next, false),
        (SwitchTarget::Off, Compressor::LockedOn { .. }) => (next, false),
        (SwitchTarget::On, Compressor::Off) => {
            next.compressor = if params.ac.min_on_duration > 0.0 {
                Compressor::LockedOn { remaining: params.ac.min_on_duration }
            } else {
                Compressor::On
            };
            next.time_in_state = 0.0;
            next.cycle_phase_time = 0.0;
            next.on_transitions += 1;
            (next, true)
        }
        (SwitchTarget::Off, Compressor::On) => {
            next.compressor = if params.ac.lockout_duration > 0.0 {
                Compressor::LockedOff { remaining: params.ac.lockout_duration }
            } else {
                Compressor::Off
            };
            next.time_in_state = 0.0;
            next.off_transitions += 1;
            (next, true)
        }
    }
}

/// Advance one house by `dt`: physics, sensor lag, lockout countdown, then
/// the thermostat.
pub fn step_house(state: &HouseState, params: &HouseParams, ambient: f64, dt: f64) -> Result<HouseState, ThermalError> {
    let mut next = *state;
    let mut thermal = state.thermal;
    thermal.ambient = ambient;
    next.thermal = step_thermal(&thermal, &params.thermal, &params.ac, &params.heat, state.compressor.is_on(), dt)?;

    let reading = thermometer_reading(&next.thermal, &params.thermal);
    next.measured = if params.sensor_lag_tau > 0.0 {
        reading + (state.measured - reading) * (-dt / params.sensor_lag_tau).exp()
    } else {
        reading
    };

    next.time_in_state += dt;
    next.cycle_phase_time += dt;
    next.compressor = match state.compressor {
        Compressor::LockedOff { remaining } if remaining - dt <= 1e-9 => Compressor::Off,
        Compressor::LockedOff { remaining } => Compressor::LockedOff { remaining: remaining - dt },
        Compressor::LockedOn { remaining } if remaining - dt <= 1e-9 => Compressor::On,
        Compressor::LockedOn { remaining } => Compressor::LockedOn { remaining: remaining - dt },
        c => c,
    };

    let (next, _) = apply_command(&next, thermostat_decision(&next, params), params);
    Ok(next)
}

/// Sub-step current spike at compressor start. Recorded for stress
/// accounting; it is not part of the integrated energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InrushEvent {
    pub peak_w: f64,
    pub duration_s: f64,
}

impl InrushEvent {
    /// Extra energy of a triangular spike above the running power (J).
    pub fn excess_energy(&self, running_power: f64) -> f64 {
        0.5 * (self.peak_w - running_power) * self.duration_s
    }
}

/// Electric power drawn right now, plus an inrush record if the compressor
/// has just started.
pub fn instantaneous_power(state: &HouseState, params: &HouseParams) -> (f64, Option<InrushEvent>) {
    if !state.compressor.is_on() {
        return (0.0, None);
    }
    // A diverged state was already reported by the step that produced it.
    let power = ac_power(&state.thermal, &params.ac, true).unwrap_or(0.0);
    let event = (state.cycle_phase_time < params.ac.inrush_duration.max(f64::MIN_POSITIVE))
        .then_some(InrushEvent { peak_w: params.ac.inrush_multiple * power, duration_s: params.ac.inrush_duration });
    (power, event)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::*;

    fn params() -> HouseParams {
        HouseParams {
            id: HouseId(1),
            thermal: nominal_thermal(),
            ac: nominal_ac(),
            heat: nominal_heat(NOMINAL_HEAT_GAIN),
            setpoint: SETPOINT,
            deadband_halfwidth: DEADBAND_HALFWIDTH,
            sensor_lag_tau: SENSOR_LAG_TAU,
        }
    }

    fn with(measured: f64, compressor: Compressor) -> HouseState {
        let mut s = HouseState::at_rest(&params(), SETPOINT, NOMINAL_AMBIENT);
        s.measured = measured;
        s.compressor = compressor;
        s
    }

    #[test]
    fn id_round_trips_through_text() {
        let id = HouseId(42);
        assert_eq!(id.to_string(), "h00042");
        assert_eq!("h00042".parse::<HouseId>().unwrap(), id);
        assert!("x12".parse::<HouseId>().is_err());
    }

    #[test]
    fn thermostat_inside_band_does_nothing() {
        let d = thermostat_decision(&with(SETPOINT, Compressor::Off), &params());
        assert_eq!(d.target, SwitchTarget::NoChange);
    }

    #[test]
    fn thermostat_turns_on_above_band() {
        let d = thermostat_decision(&with(22.51, Compressor::Off), &params());
        assert_eq!(d.target, SwitchTarget::On);
        assert_eq!(d.source, CommandSource::Thermostat);
    }

    #[test]
    fn thermostat_waits_out_lockout() {
        let d = thermostat_decision(&with(22.51, Compressor::LockedOff { remaining: 60.0 }), &params());
        assert_eq!(d.target, SwitchTarget::NoChange);
    }

    #[test]
    fn on_command_resets_phase() {
        let p = params();
        let (s, ok) = apply_command(&with(22.0, Compressor::Off), SwitchCommand::aggregator(SwitchTarget::On), &p);
        assert!(ok);
        assert_eq!(s.compressor, Compressor::On);
        assert_eq!(s.cycle_phase_time, 0.0);
        assert_eq!(s.on_transitions, 1);
    }

    #[test]
    fn on_command_rejected_in_lockout() {
        let p = params();
        let before = with(22.0, Compressor::LockedOff { remaining: 30.0 });
        let (s, ok) = apply_command(&before, SwitchCommand::aggregator(SwitchTarget::On), &p);
        assert!(!ok);
        assert_eq!(s, before);
    }

    #[test]
    fn off_command_starts_lockout() {
        let p = params();
        let (s, ok) = apply_command(&with(22.0, Compressor::On), SwitchCommand::aggregator(SwitchTarget::Off), &p);
        assert!(ok);
        assert_eq!(s.compressor, Compressor::LockedOff { remaining: 180.0 });
    }

    #[test]
    fn min_on_time_blocks_early_off() {
        let mut p = params();
        p.ac.min_on_duration = 60.0;
        let (s, _) = apply_command(&with(22.0, Compressor::Off), SwitchCommand::aggregator(SwitchTarget::On), &p);
        assert_eq!(s.compressor, Compressor::LockedOn { remaining: 60.0 });
        let (_, ok) = apply_command(&s, SwitchCommand::aggregator(SwitchTarget::Off), &p);
        assert!(!ok);
    }

    #[test]
    fn zero_lag_sensor_reads_thermometer() {
        let mut p = params();
        p.sensor_lag_tau = 0.0;
        let s = with(10.0, Compressor::Off);
        let n = step_house(&s, &p, NOMINAL_AMBIENT, 1.0).unwrap();
        assert_eq!(n.measured, thermometer_reading(&n.thermal, &p.thermal));
    }

    #[test]
    fn lockout_counts_down_to_off() {
        let p = params();
        let mut s = with(22.0, Compressor::LockedOff { remaining: 3.0 });
        s = step_house(&s, &p, NOMINAL_AMBIENT, 1.0).unwrap();
        assert_eq!(s.compressor, Compressor::LockedOff { remaining: 2.0 });
        s = step_house(&s, &p, NOMINAL_AMBIENT, 1.0).unwrap();
        s = step_house(&s, &p, NOMINAL_AMBIENT, 1.0).unwrap();
        assert_eq!(s.compressor, Compressor::Off);
    }

    #[test]
    fn power_and_inrush() {
        let p = params();
        assert_eq!(instantaneous_power(&with(22.0, Compressor::Off), &p), (0.0, None));
        let (s, _) = apply_command(&with(22.0, Compressor::Off), SwitchCommand::aggregator(SwitchTarget::On), &p);
        let (w, ev) = instantaneous_power(&s, &p);
        let ev = ev.expect("inrush on first sample");
        assert!(w > p.ac.friction_power);
        assert!((ev.peak_w / w - p.ac.inrush_multiple).abs() < 1e-12);
        let s = step_house(&s, &p, NOMINAL_AMBIENT, 1.0).unwrap();
        assert!(instantaneous_power(&s, &p).1.is_none());
    }
}
