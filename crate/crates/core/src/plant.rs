//! The plant side of the aggregator boundary: a fleet, the device-side
//! agents that raise packet requests, feasibility filtering of incoming
//! commands and the applied-command log.
//!
//! One control step runs as: the plant publishes a [`Measurement`], the
//! aggregator answers with commands, commands due by now are
//! [`delivered`](Plant::deliver), and [`advance`](Plant::advance) applies
//! them, lets device agents act and integrates the fleet.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::pem::PemConfig;
use crate::fleet::{house_rng, nominal_on_power, Fleet, FleetError, TelemetryFrame};
use crate::house::{CommandSource, Compressor, HouseId, SwitchCommand, SwitchTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestKind {
    On,
    Off,
}

/// A device asking the aggregator for permission to switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub kind: RequestKind,
    /// Running device asking to extend its current packet.
    pub renewal: bool,
    /// Power the grant would add or remove (W).
    pub power_w: f64,
}

/// Telemetry for one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceReport {
    pub id: HouseId,
    /// Lagged sensor temperature (°C).
    pub temp_c: f64,
    pub power_w: f64,
    pub compressor: Compressor,
    /// Seconds since the compressor last switched.
    pub age_s: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    /// Expected running power (W).
    pub rated_w: f64,
    /// Outcome of an aggregator command applied during the previous
    /// interval, if there was one.
    pub accepted: Option<bool>,
    pub request: Option<Request>,
    /// Set by the decoder when a field failed validation.
    pub corrupt: bool,
}

impl DeviceReport {
    /// Position of the temperature in the deadband, 0 at the lower edge.
    pub fn band_position(&self) -> f64 {
        (self.temp_c - self.t_lo) / (self.t_hi - self.t_lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub seq: u64,
    pub time: f64,
    pub devices: Vec<DeviceReport>,
    /// The previous step ran without a command from the aggregator.
    pub missed_command: bool,
}

impl Measurement {
    pub fn aggregate_power(&self) -> f64 {
        self.devices.iter().filter(|d| !d.corrupt).map(|d| d.power_w).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceCommand {
    pub id: HouseId,
    pub target: SwitchTarget,
}

/// How devices cooperate with the aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DeviceProtocol {
    /// Devices follow direct switch commands.
    Direct,
    /// Devices request fixed-length energy packets.
    Packetized(PemConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedCommand {
    pub time: f64,
    pub id: HouseId,
    pub target: SwitchTarget,
    pub source: CommandSource,
    pub accepted: bool,
    pub state_before: Compressor,
}

#[derive(Debug, Clone, Copy, Default)]
struct Agent {
    packet_until: Option<f64>,
    request: Option<Request>,
}

const REQUEST_STREAM: u64 = 3;

pub struct Plant {
    pub fleet: Fleet,
    pub ambient: f64,
    pub control_dt: f64,
    pub physics_dt: f64,
    protocol: DeviceProtocol,
    agents: Vec<Agent>,
    rngs: Vec<ChaCha8Rng>,
    rated: Vec<f64>,
    queued: Vec<Option<(u64, SwitchTarget)>>,
    last_seq: Vec<Option<u64>>,
    accepted: Vec<Option<bool>>,
    stale_discarded: u64,
    log: Option<Vec<AppliedCommand>>,
    frame_seq: u64,
    missed_command: bool,
    commands_this_step: bool,
}

impl Plant {
    pub fn new(fleet: Fleet, ambient: f64, control_dt: f64, physics_dt: f64, seed: u64) -> Self {
        let n = fleet.len();
        let rated = fleet.params.iter().map(|p| nominal_on_power(p, ambient).unwrap_or(0.0)).collect();
        Self {
            rngs: (0..n).map(|i| house_rng(seed, i, REQUEST_STREAM)).collect(),
            fleet,
            ambient,
            control_dt,
            physics_dt,
            protocol: DeviceProtocol::Direct,
            agents: vec![Agent::default(); n],
            rated,
            queued: vec![None; n],
            last_seq: vec![None; n],
            accepted: vec![None; n],
            stale_discarded: 0,
            log: None,
            frame_seq: 0,
            missed_command: false,
            commands_this_step: false,
        }
    }

    pub fn set_protocol(&mut self, protocol: DeviceProtocol) {
        self.protocol = protocol;
        self.agents.iter_mut().for_each(|a| *a = Agent::default());
        if let DeviceProtocol::Packetized(_) = protocol {
            self.generate_requests();
        }
    }

    pub fn protocol(&self) -> DeviceProtocol {
        self.protocol
    }

    /// Start keeping a log of every applied command.
    pub fn enable_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn log(&self) -> &[AppliedCommand] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn time(&self) -> f64 {
        self.fleet.state.sim_time
    }

    pub fn len(&self) -> usize {
        self.fleet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fleet.is_empty()
    }

    pub fn stale_discarded(&self) -> u64 {
        self.stale_discarded
    }

    /// Frames published so far.
    pub fn frames_published(&self) -> u64 {
        self.frame_seq
    }

    pub fn index_of(&self, id: HouseId) -> Option<usize> {
        // Fleets number houses 1..=n in order; fall back to a scan otherwise.
        let guess = (id.0 as usize).wrapping_sub(1);
        if self.fleet.params.get(guess).is_some_and(|p| p.id == id) {
            return Some(guess);
        }
        self.fleet.params.iter().position(|p| p.id == id)
    }

    /// Telemetry for the current instant. Each call consumes a frame number.
    pub fn measurement(&mut self) -> Measurement {
        let devices = self
            .fleet
            .params
            .iter()
            .zip(&self.fleet.state.houses)
            .enumerate()
            .map(|(i, (p, s))| {
                let db = p.deadband();
                DeviceReport {
                    id: p.id,
                    temp_c: s.measured,
                    power_w: crate::house::instantaneous_power(s, p).0,
                    compressor: s.compressor,
                    age_s: s.time_in_state,
                    t_lo: db.lower,
                    t_hi: db.upper,
                    rated_w: self.rated[i],
                    accepted: self.accepted[i],
                    request: self.agents[i].request,
                    corrupt: false,
                }
            })
            .collect();
        let m = Measurement { seq: self.frame_seq, time: self.time(), devices, missed_command: self.missed_command };
        self.frame_seq += 1;
        m
    }

    /// Queue commands that have arrived. Commands carrying a sequence
    /// number older than the newest one already seen for a device are
    /// discarded as stale; among commands for the same device in one step
    /// the newest wins. Unknown ids are ignored and returned.
    pub fn deliver(&mut self, seq: u64, commands: &[DeviceCommand]) -> Vec<HouseId> {
        self.commands_this_step = true;
        let mut unknown = Vec::new();
        for c in commands {
            let Some(i) = self.index_of(c.id) else {
                unknown.push(c.id);
                continue;
            };
            if self.last_seq[i].is_some_and(|last| seq < last) {
                self.stale_discarded += 1;
                continue;
            }
            self.last_seq[i] = Some(seq);
            if c.target != SwitchTarget::NoChange {
                self.queued[i] = Some((seq, c.target));
            }
        }
        unknown
    }

    /// Mark that the aggregator answered this step even if it had nothing
    /// to send.
    pub fn acknowledge(&mut self) {
        self.commands_this_step = true;
    }

    /// Apply queued commands, run device agents and integrate one control
    /// interval.
    pub fn advance(&mut self) -> Result<TelemetryFrame, FleetError> {
        let n = self.len();
        let t = self.time();
        let mut cmds = vec![SwitchCommand::NONE; n];
        let mut from_aggregator = vec![false; n];
        for i in 0..n {
            if let Some((_, target)) = self.queued[i].take() {
                cmds[i] = SwitchCommand::aggregator(target);
                from_aggregator[i] = true;
            } else if let DeviceProtocol::Packetized(_) = self.protocol {
                // A running device whose packet lapsed without a renewal
                // grant stops on its own.
                let a = &self.agents[i];
                if a.request.is_some_and(|r| r.renewal) && a.packet_until.is_some_and(|u| u <= t + 1e-9) {
                    cmds[i] = SwitchCommand { target: SwitchTarget::Off, source: CommandSource::Thermostat };
                }
            }
        }
        let before: Vec<Compressor> = self.fleet.state.houses.iter().map(|s| s.compressor).collect();
        let frame = self.fleet.step(self.ambient, &cmds, self.control_dt, self.physics_dt)?;
        self.accepted.iter_mut().for_each(|a| *a = None);

        for i in 0..n {
            let Some(ok) = frame.accepted[i] else { continue };
            if from_aggregator[i] {
                self.accepted[i] = Some(ok);
            }
            if let Some(log) = &mut self.log {
                log.push(AppliedCommand {
                    time: t,
                    id: self.fleet.params[i].id,
                    target: cmds[i].target,
                    source: cmds[i].source,
                    accepted: ok,
                    state_before: before[i],
                });
            }
        }
        if let DeviceProtocol::Packetized(cfg) = self.protocol {
            for i in 0..n {
                let a = &mut self.agents[i];
                if from_aggregator[i] && frame.accepted[i] == Some(true) {
                    a.packet_until = match cmds[i].target {
                        SwitchTarget::On => Some(t + cfg.epoch_length),
                        _ => None,
                    };
                }
                if !self.fleet.state.houses[i].compressor.is_on() {
                    a.packet_until = None;
                }
            }
            self.generate_requests();
        }
        self.missed_command = !self.commands_this_step;
        self.commands_this_step = false;
        Ok(frame)
    }

    fn generate_requests(&mut self) {
        let DeviceProtocol::Packetized(cfg) = self.protocol else { return };
        let t = self.time();
        for i in 0..self.len() {
            let p = &self.fleet.params[i];
            let s = &self.fleet.state.houses[i];
            let db = p.deadband();
            let x = db.position(s.measured);
            let a = &mut self.agents[i];
            let rng = &mut self.rngs[i];
            // Draw unconditionally so each device's stream advances once per
            // step whatever it ends up doing.
            let u: f64 = rng.random();
            a.request = match s.compressor {
                Compressor::Off => (u < cfg.request_probability(x, self.control_dt)).then_some(Request {
                    kind: RequestKind::On,
                    renewal: false,
                    power_w: self.rated[i],
                }),
                Compressor::On | Compressor::LockedOn { .. } => {
                    let power = crate::house::instantaneous_power(s, p).0;
                    if a.packet_until.is_some_and(|until| until <= t + 1e-9) {
                        Some(Request { kind: RequestKind::On, renewal: true, power_w: power })
                    } else if cfg.allow_turn_off_requests
                        && matches!(s.compressor, Compressor::On)
                        && u < cfg.off_request_probability(x, self.control_dt)
                    {
                        Some(Request { kind: RequestKind::Off, renewal: false, power_w: power })
                    } else {
                        None
                    }
                }
                Compressor::LockedOff { .. } => None,
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::NOMINAL_AMBIENT;
    use crate::fleet::FleetSpec;

    fn plant(n: usize) -> Plant {
        let fleet = Fleet::from_spec(&FleetSpec::nominal(n, 11), NOMINAL_AMBIENT).unwrap();
        Plant::new(fleet, NOMINAL_AMBIENT, 2.0, 1.0, 5)
    }

    #[test]
    fn stale_commands_are_discarded() {
        let mut p = plant(3);
        let id = HouseId(1);
        p.deliver(5, &[DeviceCommand { id, target: SwitchTarget::Off }]);
        p.deliver(4, &[DeviceCommand { id, target: SwitchTarget::On }]);
        assert_eq!(p.stale_discarded(), 1);
        assert_eq!(p.queued[0], Some((5, SwitchTarget::Off)));
    }

    #[test]
    fn locked_devices_reject_on_and_report_it() {
        let mut p = plant(3);
        p.fleet.state.houses[0].compressor = Compressor::LockedOff { remaining: 100.0 };
        p.enable_log();
        p.deliver(0, &[DeviceCommand { id: HouseId(1), target: SwitchTarget::On }]);
        p.advance().unwrap();
        let m = p.measurement();
        assert_eq!(m.devices[0].accepted, Some(false));
        assert!(p
            .log()
            .iter()
            .all(|c| !(c.accepted && c.target == SwitchTarget::On && c.state_before.is_locked_off())));
    }

    #[test]
    fn silent_aggregator_sets_missed_flag() {
        let mut p = plant(2);
        p.advance().unwrap();
        assert!(p.measurement().missed_command);
        p.acknowledge();
        p.advance().unwrap();
        assert!(!p.measurement().missed_command);
    }

    #[test]
    fn packet_lapses_without_renewal() {
        let mut p = plant(1);
        let cfg = PemConfig { epoch_length: 4.0, ..PemConfig::default() };
        p.set_protocol(DeviceProtocol::Packetized(cfg));
        let h = &mut p.fleet.state.houses[0];
        h.compressor = Compressor::Off;
        h.measured = 22.2;
        p.deliver(0, &[DeviceCommand { id: HouseId(1), target: SwitchTarget::On }]);
        p.advance().unwrap();
        assert!(p.fleet.state.houses[0].compressor.is_on());
        p.advance().unwrap();
        // Packet expired at t = 4: the device now asks to renew.
        let req = p.measurement().devices[0].request.unwrap();
        assert!(req.renewal);
        p.advance().unwrap();
        assert!(!p.fleet.state.houses[0].compressor.is_on());
    }
}
