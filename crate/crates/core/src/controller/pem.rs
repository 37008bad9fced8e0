//! Packetized energy management.
//!
//! Devices ask for permission to run for a fixed epoch. Requests arrive
//! more often the closer a device is to the edge of its deadband. The
//! aggregator grants requests greedily against the reference and silently
//! denies the rest. A running device can also ask to stop early, and a
//! device whose packet ends asks for a renewal.

use serde::{Deserialize, Serialize};

use super::{CommandBatch, Controller, Observation, PendingCommands};
use crate::house::{HouseId, SwitchTarget};
use crate::plant::{DeviceCommand, DeviceReport, RequestKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PemConfig {
    /// Length of one energy packet (s).
    pub epoch_length: f64,
    /// Mean time to request at the middle of the deadband (s).
    pub mean_time_to_request: f64,
    pub allow_turn_off_requests: bool,
    /// Outstanding grants are forgotten after this long (s).
    pub pending_timeout: f64,
}

impl Default for PemConfig {
    fn default() -> Self {
        Self { epoch_length: 300.0, mean_time_to_request: 300.0, allow_turn_off_requests: true, pending_timeout: 30.0 }
    }
}

fn hazard_probability(odds: f64, mttr: f64, dt: f64) -> f64 {
    if odds.is_infinite() {
        return 1.0;
    }
    (1.0 - (-odds.max(0.0) / mttr * dt).exp()).clamp(0.0, 1.0)
}

impl PemConfig {
    /// Chance that an idle device at deadband position `x` (0 cold edge,
    /// 1 hot edge) asks to run within a step of `dt`.
    pub fn request_probability(&self, x: f64, dt: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            hazard_probability(x / (1.0 - x), self.mean_time_to_request, dt)
        }
    }

    /// Chance that a running device asks to stop early.
    pub fn off_request_probability(&self, x: f64, dt: f64) -> f64 {
        self.request_probability(1.0 - x, dt)
    }
}

/// One request as the aggregator sees it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingRequest {
    pub id: HouseId,
    pub kind: RequestKind,
    pub renewal: bool,
    pub power_w: f64,
    /// Deadband position, used to rank requests.
    pub position: f64,
}

/// Outcome of one grant round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GrantDecision {
    pub granted: Vec<PendingRequest>,
    pub denied: Vec<PendingRequest>,
    /// Power expected after the granted requests take effect (W).
    pub projected: f64,
}

/// Greedy grant round.
///
/// `projected` is the power expected next step if no request is granted,
/// so running devices asking for renewal are not counted in it. Renewals
/// go first, then fresh On requests from the warmest device down, each
/// granted while it keeps the projection at or below `reference`. When the
/// projection sits above `reference`, Off requests are granted coldest
/// first while the projection stays at or above it.
pub fn pem_step(requests: &[PendingRequest], projected: f64, reference: f64) -> GrantDecision {
    let mut ons: Vec<&PendingRequest> = requests.iter().filter(|r| r.kind == RequestKind::On).collect();
    ons.sort_by(|a, b| b.renewal.cmp(&a.renewal).then(b.position.total_cmp(&a.position)));
    let mut offs: Vec<&PendingRequest> = requests.iter().filter(|r| r.kind == RequestKind::Off).collect();
    offs.sort_by(|a, b| a.position.total_cmp(&b.position));

    let mut out = GrantDecision { projected, ..GrantDecision::default() };
    for r in ons {
        if out.projected + r.power_w <= reference {
            out.projected += r.power_w;
            out.granted.push(*r);
        } else {
            out.denied.push(*r);
        }
    }
    for r in offs {
        if out.projected - r.power_w >= reference {
            out.projected -= r.power_w;
            out.granted.push(*r);
        } else {
            out.denied.push(*r);
        }
    }
    out
}

pub struct PemController {
    cfg: PemConfig,
    pending: PendingCommands,
}

impl PemController {
    pub fn new(cfg: PemConfig) -> Self {
        Self { cfg, pending: PendingCommands::new(cfg.pending_timeout) }
    }

    pub fn config(&self) -> &PemConfig {
        &self.cfg
    }
}

fn as_request(d: &DeviceReport) -> Option<PendingRequest> {
    let r = d.request?;
    Some(PendingRequest { id: d.id, kind: r.kind, renewal: r.renewal, power_w: r.power_w, position: d.band_position() })
}

impl Controller for PemController {
    fn name(&self) -> &'static str {
        "PEM"
    }

    fn step(&mut self, obs: &Observation) -> CommandBatch {
        self.pending.refresh(obs);
        let requests: Vec<PendingRequest> =
            obs.devices.iter().filter(|d| !d.corrupt && !self.pending.contains(d.id)).filter_map(as_request).collect();
        // Renewing devices stop unless granted.
        let renewing: f64 = requests.iter().filter(|r| r.renewal).map(|r| r.power_w).sum();
        let projected = obs.aggregate_power() - renewing + self.pending.expected_change();
        let decision = pem_step(&requests, projected, obs.reference);

        let mut commands = Vec::with_capacity(decision.granted.len());
        for r in &decision.granted {
            let target = match r.kind {
                RequestKind::On => SwitchTarget::On,
                RequestKind::Off => SwitchTarget::Off,
            };
            if !r.renewal {
                self.pending.insert(r.id, target, obs.time, r.power_w);
            }
            commands.push(DeviceCommand { id: r.id, target });
        }
        let gap = obs.reference - decision.projected;
        let unused = |k: RequestKind| decision.denied.iter().any(|r| r.kind == k);
        // Starved: the gap remains and no request in that direction was left.
        let saturated =
            requests.is_empty() || (gap > 0.0 && !unused(RequestKind::On)) || (gap < 0.0 && !unused(RequestKind::Off));
        let effort = if requests.is_empty() { 0.0 } else { decision.granted.len() as f64 / requests.len() as f64 };
        CommandBatch { commands, saturated, effort }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn on(id: u32, position: f64) -> PendingRequest {
        PendingRequest { id: HouseId(id), kind: RequestKind::On, renewal: false, power_w: 2600.0, position }
    }

    #[test]
    fn greedy_fill_grants_whole_packets_only() {
        let reqs: Vec<_> = (0..20).map(|i| on(i, 0.5)).collect();
        let d = pem_step(&reqs, 100_000.0, 100_000.0 + 5.0 * 2600.0 + 1000.0);
        assert_eq!(d.granted.len(), 5);
        assert_eq!(d.denied.len(), 15);
    }

    #[test]
    fn warmest_requests_first() {
        let reqs = vec![on(1, 0.2), on(2, 0.9), on(3, 0.5)];
        let d = pem_step(&reqs, 0.0, 2600.0);
        assert_eq!(d.granted[0].id, HouseId(2));
    }

    #[test]
    fn off_requests_only_when_above_reference() {
        let off = PendingRequest { kind: RequestKind::Off, ..on(1, 0.3) };
        assert!(pem_step(&[off], 10_000.0, 10_000.0).granted.is_empty());
        assert_eq!(pem_step(&[off], 20_000.0, 10_000.0).granted.len(), 1);
    }

    #[test]
    fn request_probability_rises_towards_hot_edge() {
        let cfg = PemConfig::default();
        assert_eq!(cfg.request_probability(0.0, 2.0), 0.0);
        assert_eq!(cfg.request_probability(1.0, 2.0), 1.0);
        let mut prev = 0.0;
        for k in 1..100 {
            let p = cfg.request_probability(k as f64 / 100.0, 2.0);
            assert!(p > prev && p < 1.0);
            prev = p;
        }
        assert!(cfg.off_request_probability(0.2, 2.0) > cfg.off_request_probability(0.8, 2.0));
    }
}
