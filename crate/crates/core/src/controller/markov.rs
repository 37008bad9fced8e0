//! Model-based probabilistic broadcast control.
//!
//! Devices are grouped into bins by temperature position in the deadband
//! and compressor state, plus bins for locked-out devices and optionally for
//! devices that switched within the last few steps (the sensor has not yet
//! caught up with them). A transition matrix over those bins, estimated from
//! uncontrolled telemetry, predicts the next-step power. The shortfall is
//! turned into a switching probability broadcast to every device in the
//! eligible bins.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CommandBatch, Controller, Observation, PendingCommands};
use crate::house::{Compressor, SwitchTarget};
use crate::plant::{DeviceCommand, DeviceReport};

/// Row-stochastic square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub n: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        (0..n).for_each(|i| data[i * n + i] = 1.0);
        Self { n, data }
    }

    /// Normalise transition counts row by row. Rows with no observations
    /// become self-loops.
    pub fn from_counts(n: usize, counts: &[f64]) -> Self {
        assert_eq!(counts.len(), n * n);
        let mut data = counts.to_vec();
        for i in 0..n {
            let row = &mut data[i * n..(i + 1) * n];
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|v| *v /= total);
            } else {
                row.iter_mut().for_each(|v| *v = 0.0);
                row[i] = 1.0;
            }
        }
        Self { n, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        (0..self.n).all(|i| {
            let r = self.row(i);
            r.iter().all(|&v| v >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() <= tol
        })
    }

    /// Occupancy one step later: `x · M`.
    pub fn propagate(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += xi * m;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkovConfig {
    /// Temperature bins per compressor state.
    pub n_temp_bins: usize,
    /// Bins spanning the lockout period.
    pub n_lock_bins: usize,
    /// Longest lockout expected (s); sizes the lock bins.
    pub lockout_duration: f64,
    /// Hold recently switched devices in extra bins for this many steps.
    pub use_delayed_dynamics: bool,
    pub delay_steps: usize,
    /// Learned from baseline telemetry when absent.
    pub transition_matrix: Option<TransitionMatrix>,
    /// Learned when absent.
    pub power_model: Option<PowerModel>,
    /// Outstanding commands are forgotten after this long (s).
    pub pending_timeout: f64,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        Self {
            n_temp_bins: 20,
            n_lock_bins: 6,
            lockout_duration: 180.0,
            use_delayed_dynamics: true,
            delay_steps: 6,
            transition_matrix: None,
            power_model: None,
            pending_timeout: 30.0,
        }
    }
}

impl MarkovConfig {
    fn delay_bins(&self) -> usize {
        if self.use_delayed_dynamics {
            self.delay_steps
        } else {
            0
        }
    }

    pub fn n_bins(&self) -> usize {
        2 * self.n_temp_bins + self.n_lock_bins + 2 * self.delay_bins()
    }
}

/// Bin bookkeeping shared by estimation and control.
#[derive(Debug, Clone)]
pub struct BinLayout {
    nt: usize,
    nl: usize,
    nd: usize,
    lock_width: f64,
}

/// What a bin holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    OffTemp(usize),
    OnTemp(usize),
    Locked(usize),
    OffRecent(usize),
    OnRecent(usize),
}

impl BinLayout {
    pub fn new(cfg: &MarkovConfig) -> Self {
        Self {
            nt: cfg.n_temp_bins,
            nl: cfg.n_lock_bins,
            nd: cfg.delay_bins(),
            lock_width: cfg.lockout_duration / cfg.n_lock_bins.max(1) as f64,
        }
    }

    pub fn len(&self) -> usize {
        2 * self.nt + self.nl + 2 * self.nd
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, kind: BinKind) -> usize {
        match kind {
            BinKind::OffTemp(k) => k,
            BinKind::OnTemp(k) => self.nt + k,
            BinKind::Locked(k) => 2 * self.nt + k,
            BinKind::OffRecent(k) => 2 * self.nt + self.nl + k,
            BinKind::OnRecent(k) => 2 * self.nt + self.nl + self.nd + k,
        }
    }

    pub fn kind(&self, i: usize) -> BinKind {
        let (nt, nl, nd) = (self.nt, self.nl, self.nd);
        if i < nt {
            BinKind::OffTemp(i)
        } else if i < 2 * nt {
            BinKind::OnTemp(i - nt)
        } else if i < 2 * nt + nl {
            BinKind::Locked(i - 2 * nt)
        } else if i < 2 * nt + nl + nd {
            BinKind::OffRecent(i - 2 * nt - nl)
        } else {
            BinKind::OnRecent(i - 2 * nt - nl - nd)
        }
    }

    pub fn is_on(&self, i: usize) -> bool {
        matches!(self.kind(i), BinKind::OnTemp(_) | BinKind::OnRecent(_))
    }

    fn temp_bin(&self, d: &DeviceReport) -> usize {
        let x = d.band_position();
        ((x * self.nt as f64).floor().max(0.0) as usize).min(self.nt - 1)
    }

    pub fn bin_of(&self, d: &DeviceReport, dt: f64) -> usize {
        let recent = (d.age_s / dt).floor();
        match d.compressor {
            Compressor::LockedOff { remaining } => {
                let k = ((remaining / self.lock_width).floor().max(0.0) as usize).min(self.nl.saturating_sub(1));
                self.index(BinKind::Locked(k))
            }
            Compressor::On | Compressor::LockedOn { .. } => {
                if recent < self.nd as f64 {
                    self.index(BinKind::OnRecent(recent as usize))
                } else {
                    self.index(BinKind::OnTemp(self.temp_bin(d)))
                }
            }
            Compressor::Off => {
                if recent < self.nd as f64 {
                    self.index(BinKind::OffRecent(recent as usize))
                } else {
                    self.index(BinKind::OffTemp(self.temp_bin(d)))
                }
            }
        }
    }
}

/// Per-bin switching probabilities for one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    /// Signed share of eligible capacity to switch: positive turns devices
    /// on, negative turns them off. Clamped to [-1, 1].
    pub u: f64,
    /// Predicted next-step power without intervention (W).
    pub predicted: f64,
    /// Probability applied to every device in each bin.
    pub probability: Vec<f64>,
    pub saturated: bool,
}

/// Per-bin power behaviour in units of each device's rated power. A
/// compressor keeps ramping for minutes after it starts, so a device's own
/// reading predicts its next one better than any bin average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    /// Mean draw of a device in the bin.
    pub level: Vec<f64>,
    /// Mean one-step change of a device in the bin that keeps running.
    pub drift: Vec<f64>,
}

impl PowerModel {
    /// Every running device draws its rated power.
    pub fn flat(layout: &BinLayout) -> Self {
        Self {
            level: (0..layout.len()).map(|i| if layout.is_on(i) { 1.0 } else { 0.0 }).collect(),
            drift: vec![0.0; layout.len()],
        }
    }
}

/// Rated and present power held in each bin (W).
#[derive(Debug, Clone, PartialEq)]
pub struct BinLoad {
    pub rated: Vec<f64>,
    pub power: Vec<f64>,
}

/// Predicted aggregate power after one step without intervention. Running
/// devices that stay on carry their present draw plus the bin drift; devices
/// that start are credited the level of the bin they land in.
pub fn predict_power(matrix: &TransitionMatrix, layout: &BinLayout, load: &BinLoad, model: &PowerModel) -> f64 {
    let mut total = 0.0;
    for b in 0..layout.len() {
        let row = matrix.row(b);
        if layout.is_on(b) {
            let stay: f64 = (0..layout.len()).filter(|&j| layout.is_on(j)).map(|j| row[j]).sum();
            total += stay * (load.power[b] + load.rated[b] * model.drift[b]);
        } else if load.rated[b] > 0.0 {
            let start: f64 = (0..layout.len()).filter(|&j| layout.is_on(j)).map(|j| row[j] * model.level[j]).sum();
            total += load.rated[b] * start;
        }
    }
    total
}

/// Bins whose devices may be switched towards `target`.
pub fn eligible(layout: &BinLayout, i: usize, target: SwitchTarget) -> bool {
    matches!(
        (target, layout.kind(i)),
        (SwitchTarget::On, BinKind::OffTemp(_) | BinKind::OffRecent(_))
            | (SwitchTarget::Off, BinKind::OnTemp(_) | BinKind::OnRecent(_))
    )
}

/// Switching probability per bin that closes the gap between `reference`
/// and the `predicted` power. `capacity[b]` is the power that switching
/// every free device in bin `b` would move (W).
pub fn markov_step(layout: &BinLayout, capacity: &[f64], predicted: f64, reference: f64) -> Broadcast {
    let gap = reference - predicted;
    let target = if gap >= 0.0 { SwitchTarget::On } else { SwitchTarget::Off };
    let total: f64 = capacity.iter().enumerate().filter(|(i, _)| eligible(layout, *i, target)).map(|(_, c)| c).sum();
    let (u, saturated) = if gap == 0.0 {
        (0.0, false)
    } else if total <= 0.0 {
        (0.0, true)
    } else {
        let raw = gap / total;
        (raw.clamp(-1.0, 1.0), raw.abs() > 1.0)
    };
    let probability = (0..layout.len()).map(|i| if eligible(layout, i, target) { u.abs() } else { 0.0 }).collect();
    Broadcast { u, predicted, probability, saturated }
}

pub struct MarkovController {
    cfg: MarkovConfig,
    layout: BinLayout,
    counts: Vec<f64>,
    previous: Option<(Vec<usize>, Vec<f64>)>,
    level_sum: Vec<f64>,
    level_n: Vec<f64>,
    drift_sum: Vec<f64>,
    drift_n: Vec<f64>,
    rng: ChaCha8Rng,
    pending: PendingCommands,
}

impl MarkovController {
    pub fn new(cfg: MarkovConfig, seed: u64) -> Self {
        let layout = BinLayout::new(&cfg);
        let n = layout.len();
        let pending = PendingCommands::new(cfg.pending_timeout);
        Self {
            cfg,
            layout,
            counts: vec![0.0; n * n],
            previous: None,
            level_sum: vec![0.0; n],
            level_n: vec![0.0; n],
            drift_sum: vec![0.0; n],
            drift_n: vec![0.0; n],
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending,
        }
    }

    pub fn layout(&self) -> &BinLayout {
        &self.layout
    }

    pub fn config(&self) -> &MarkovConfig {
        &self.cfg
    }

    pub fn matrix(&self) -> Option<&TransitionMatrix> {
        self.cfg.transition_matrix.as_ref()
    }

    fn bins(&self, obs: &Observation) -> Vec<usize> {
        obs.devices.iter().map(|d| self.layout.bin_of(d, obs.dt)).collect()
    }

    fn load(&self, bins: &[usize], obs: &Observation) -> BinLoad {
        let n = self.layout.len();
        let mut load = BinLoad { rated: vec![0.0; n], power: vec![0.0; n] };
        for (d, &b) in obs.devices.iter().zip(bins) {
            if !d.corrupt {
                load.rated[b] += d.rated_w;
                load.power[b] += d.power_w;
            }
        }
        load
    }

    fn power_model(&self) -> PowerModel {
        self.cfg.power_model.clone().unwrap_or_else(|| PowerModel::flat(&self.layout))
    }

    /// Fraction of rated power a device draws one step after switching on.
    fn on_gain(&self, model: &PowerModel) -> f64 {
        if self.layout.nd >= 2 {
            model.level[self.layout.index(BinKind::OnRecent(1))]
        } else {
            1.0
        }
    }

    /// Predicted next-step aggregate power from the current telemetry.
    pub fn predict(&self, obs: &Observation) -> Option<f64> {
        let m = self.cfg.transition_matrix.as_ref()?;
        let bins = self.bins(obs);
        Some(predict_power(m, &self.layout, &self.load(&bins, obs), &self.power_model()))
    }
}

impl Controller for MarkovController {
    fn name(&self) -> &'static str {
        "Markov"
    }

    fn observe_baseline(&mut self, obs: &Observation) {
        let bins = self.bins(obs);
        let n = self.layout.len();
        let ratio: Vec<f64> =
            obs.devices.iter().map(|d| if d.rated_w > 0.0 { d.power_w / d.rated_w } else { f64::NAN }).collect();
        if let Some((prev_bins, prev_ratio)) = &self.previous {
            for (i, d) in obs.devices.iter().enumerate() {
                if d.corrupt {
                    continue;
                }
                let (a, b) = (prev_bins[i], bins[i]);
                self.counts[a * n + b] += 1.0;
                let change = ratio[i] - prev_ratio[i];
                if self.layout.is_on(a) && self.layout.is_on(b) && change.is_finite() {
                    self.drift_sum[a] += change;
                    self.drift_n[a] += 1.0;
                }
            }
        }
        for (i, d) in obs.devices.iter().enumerate() {
            if !d.corrupt && ratio[i].is_finite() {
                self.level_sum[bins[i]] += ratio[i];
                self.level_n[bins[i]] += 1.0;
            }
        }
        self.previous = Some((bins, ratio));
    }

    fn finish_baseline(&mut self) {
        if self.cfg.transition_matrix.is_none() {
            self.cfg.transition_matrix = Some(TransitionMatrix::from_counts(self.layout.len(), &self.counts));
        }
        if self.cfg.power_model.is_none() {
            let mut m = PowerModel::flat(&self.layout);
            for i in 0..self.layout.len() {
                if self.level_n[i] > 0.0 {
                    m.level[i] = self.level_sum[i] / self.level_n[i];
                }
                if self.drift_n[i] > 0.0 {
                    m.drift[i] = self.drift_sum[i] / self.drift_n[i];
                }
            }
            self.cfg.power_model = Some(m);
        }
        self.previous = None;
    }

    fn step(&mut self, obs: &Observation) -> CommandBatch {
        self.pending.refresh(obs);
        let matrix =
            self.cfg.transition_matrix.clone().unwrap_or_else(|| TransitionMatrix::identity(self.layout.len()));
        let model = self.power_model();
        let gain = self.on_gain(&model);
        let bins = self.bins(obs);
        // Outstanding commands are assumed to land within the step.
        let predicted =
            predict_power(&matrix, &self.layout, &self.load(&bins, obs), &model) + self.pending.expected_change();
        let mut capacity = vec![0.0; self.layout.len()];
        for (d, &b) in obs.devices.iter().zip(&bins) {
            if d.corrupt || self.pending.contains(d.id) {
                continue;
            }
            capacity[b] += if self.layout.is_on(b) { d.power_w } else { gain * d.rated_w };
        }
        let b = markov_step(&self.layout, &capacity, predicted, obs.reference);

        let mut commands = Vec::new();
        let target = if b.u > 0.0 { SwitchTarget::On } else { SwitchTarget::Off };
        if b.u != 0.0 {
            for (d, &bin) in obs.devices.iter().zip(&bins) {
                let p = b.probability[bin];
                // One draw per device keeps the random stream aligned.
                let r: f64 = self.rng.random();
                if p > 0.0 && r < p && !d.corrupt && !self.pending.contains(d.id) {
                    let power = if target == SwitchTarget::On { gain * d.rated_w } else { d.power_w };
                    self.pending.insert(d.id, target, obs.time, power);
                    commands.push(DeviceCommand { id: d.id, target });
                }
            }
        }
        CommandBatch { commands, saturated: b.saturated, effort: b.u }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_normalise_to_stochastic_rows() {
        let m = TransitionMatrix::from_counts(3, &[1.0, 3.0, 0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 4.0]);
        assert!(m.is_row_stochastic(1e-12));
        assert_eq!(m.row(0), &[0.25, 0.75, 0.0]);
        assert_eq!(m.row(1), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn uniform_occupancy_stays_uniform_under_doubly_stochastic_matrix() {
        let m = TransitionMatrix { n: 3, data: vec![0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5] };
        let x = vec![1.0 / 3.0; 3];
        for (a, b) in m.propagate(&x).iter().zip(&x) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn no_gap_no_broadcast() {
        let layout = BinLayout::new(&MarkovConfig::default());
        let capacity = vec![1000.0; layout.len()];
        let b = markov_step(&layout, &capacity, 5000.0, 5000.0);
        assert_eq!(b.u, 0.0);
        assert!(b.probability.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn broadcast_is_clamped_and_flags_saturation() {
        let layout = BinLayout::new(&MarkovConfig::default());
        let capacity = vec![100.0; layout.len()];
        let b = markov_step(&layout, &capacity, 0.0, 1e9);
        assert_eq!(b.u, 1.0);
        assert!(b.saturated);
        assert!(b.probability.iter().all(|p| (0.0..=1.0).contains(p)));
        let none = markov_step(&layout, &vec![0.0; layout.len()], 0.0, 1e3);
        assert!(none.saturated);
        assert_eq!(none.u, 0.0);
    }
}
