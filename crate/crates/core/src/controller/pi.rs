//! PI feedback on the aggregate tracking error.
//!
//! The control effort is a power change in watts. It is turned into a count
//! of devices, which are picked uniformly at random from those that may
//! switch in the needed direction.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CommandBatch, Controller, Observation, PendingCommands};
use crate::house::{Compressor, SwitchTarget};
use crate::plant::DeviceCommand;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PiConfig {
    /// Share of the current error corrected per step.
    pub kp: f64,
    /// Integral gain (1/s).
    pub ki: f64,
    /// Bound on the error integral (W·s).
    pub anti_windup_limit: f64,
    /// Devices closer than this fraction of the deadband to the edge they
    /// would be switched towards are not eligible.
    pub eligibility_margin: f64,
    /// Outstanding commands are forgotten after this long (s).
    pub pending_timeout: f64,
}

impl Default for PiConfig {
    fn default() -> Self {
        Self { kp: 0.5, ki: 0.002, anti_windup_limit: 5.0e6, eligibility_margin: 0.1, pending_timeout: 30.0 }
    }
}

/// Integrator state of [`pi_step`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PiState {
    pub integral: f64,
}

/// One PI update: returns `kp·e + ki·∫e` with the integral clamped to
/// `±anti_windup_limit`.
pub fn pi_step(cfg: &PiConfig, error: f64, state: &mut PiState, dt: f64) -> f64 {
    state.integral = (state.integral + error * dt).clamp(-cfg.anti_windup_limit, cfg.anti_windup_limit);
    cfg.kp * error + cfg.ki * state.integral
}

pub struct PiController {
    cfg: PiConfig,
    state: PiState,
    rng: ChaCha8Rng,
    pending: PendingCommands,
}

impl PiController {
    pub fn new(cfg: PiConfig, seed: u64) -> Self {
        let pending = PendingCommands::new(cfg.pending_timeout);
        Self { cfg, state: PiState::default(), rng: ChaCha8Rng::seed_from_u64(seed), pending }
    }

    pub fn integral(&self) -> f64 {
        self.state.integral
    }
}

impl Controller for PiController {
    fn name(&self) -> &'static str {
        "PI"
    }

    fn step(&mut self, obs: &Observation) -> CommandBatch {
        self.pending.refresh(obs);
        let error = obs.reference - obs.aggregate_power();
        let u = pi_step(&self.cfg, error, &mut self.state, obs.dt);
        if u == 0.0 {
            return CommandBatch::default();
        }
        let unit = obs.mean_running_power().unwrap_or(1.0).max(1.0);
        let m = self.cfg.eligibility_margin;
        let (target, eligible): (SwitchTarget, Vec<usize>) = if u > 0.0 {
            let e = obs
                .devices
                .iter()
                .enumerate()
                .filter(|(_, d)| {
                    !d.corrupt
                        && matches!(d.compressor, Compressor::Off)
                        && d.band_position() >= m
                        && !self.pending.contains(d.id)
                })
                .map(|(i, _)| i)
                .collect();
            (SwitchTarget::On, e)
        } else {
            let e = obs
                .devices
                .iter()
                .enumerate()
                .filter(|(_, d)| {
                    !d.corrupt
                        && matches!(d.compressor, Compressor::On)
                        && d.band_position() <= 1.0 - m
                        && !self.pending.contains(d.id)
                })
                .map(|(i, _)| i)
                .collect();
            (SwitchTarget::Off, e)
        };
        let wanted = (u.abs() / unit).round() as usize;
        let k = wanted.min(eligible.len());
        let mut commands = Vec::with_capacity(k);
        for j in sample(&mut self.rng, eligible.len(), k) {
            let d = &obs.devices[eligible[j]];
            let power = if target == SwitchTarget::On { d.rated_w } else { d.power_w };
            self.pending.insert(d.id, target, obs.time, power);
            commands.push(DeviceCommand { id: d.id, target });
        }
        let fraction = if eligible.is_empty() { 0.0 } else { k as f64 / eligible.len() as f64 };
        CommandBatch { commands, saturated: wanted > eligible.len(), effort: fraction.copysign(u) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_error_zero_effort() {
        let cfg = PiConfig::default();
        let mut s = PiState::default();
        assert_eq!(pi_step(&cfg, 0.0, &mut s, 2.0), 0.0);
    }

    #[test]
    fn integral_action_grows_until_clamped() {
        let cfg = PiConfig { kp: 0.1, ki: 0.01, anti_windup_limit: 100.0, ..PiConfig::default() };
        let mut s = PiState::default();
        let mut prev = f64::NEG_INFINITY;
        let mut outputs = Vec::new();
        for _ in 0..20 {
            let u = pi_step(&cfg, 10.0, &mut s, 2.0);
            outputs.push(u);
            assert!(u >= prev);
            prev = u;
        }
        assert!(outputs[1] > outputs[0]);
        assert_eq!(s.integral, 100.0);
        assert_eq!(outputs[19], outputs[18]);
    }
}
