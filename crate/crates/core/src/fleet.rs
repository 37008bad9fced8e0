//! Heterogeneous house populations stepped in lock-step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{self, NOMINAL_AMBIENT};
use crate::house::{
    apply_command, instantaneous_power, step_house, Compressor, HouseId, HouseParams, HouseState, InrushEvent,
    SwitchCommand, SwitchTarget,
};
use crate::thermal::{steady_on_power, ThermalError};

/// Which side of the plant boundary a house lives on. Controllers never see
/// this tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    LocalVirtual,
    RemotePlant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub n_houses: usize,
    pub nominal: HouseParams,
    /// Each varied parameter is drawn uniformly from nominal × [1 - h, 1 + h].
    pub heterogeneity_fraction: f64,
    pub rng_seed: u64,
    /// Fleet-mean running power the population is scaled to (W).
    pub avg_on_power_target: f64,
    /// Outdoor temperature at which `avg_on_power_target` is met.
    pub reference_ambient: f64,
    /// The last `n_remote` houses are tagged as remote plant.
    pub n_remote: usize,
}

impl FleetSpec {
    pub fn nominal(n_houses: usize, rng_seed: u64) -> Self {
        Self {
            n_houses,
            nominal: calibration::nominal_house(),
            heterogeneity_fraction: 0.2,
            rng_seed,
            avg_on_power_target: 2600.0,
            reference_ambient: NOMINAL_AMBIENT,
            n_remote: 20.min(n_houses),
        }
    }

    pub fn validate(&self) -> Result<(), FleetError> {
        if self.n_houses == 0 {
            return Err(FleetError::InvalidSpec("n_houses must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.heterogeneity_fraction) {
            return Err(FleetError::InvalidSpec("heterogeneity_fraction must lie in [0, 1)".into()));
        }
        if self.n_remote > self.n_houses {
            return Err(FleetError::InvalidSpec("n_remote exceeds n_houses".into()));
        }
        if !(self.avg_on_power_target > 0.0) {
            return Err(FleetError::InvalidSpec("avg_on_power_target must be > 0".into()));
        }
        self.nominal.validate().map_err(|e| FleetError::InvalidSpec(e.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FleetError {
    #[error("invalid fleet spec: {0}")]
    InvalidSpec(String),
    #[error("house {house} failed at t = {sim_time} s: {source}")]
    Physics { house: HouseId, sim_time: f64, source: ThermalError },
    #[error("expected {expected} commands, got {got}")]
    CommandCount { expected: usize, got: usize },
}

/// Independent per-house random stream derived from the master seed, so
/// adding houses never reshuffles existing ones.
pub fn house_rng(seed: u64, index: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index as u64);
    rng
}

const PARAM_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;

fn vary(rng: &mut ChaCha8Rng, v: f64, h: f64) -> f64 {
    if h == 0.0 {
        v
    } else {
        v * rng.random_range(1.0 - h..=1.0 + h)
    }
}

fn perturbed(nominal: &HouseParams, h: f64, rng: &mut ChaCha8Rng) -> HouseParams {
    let mut p = *nominal;
    let t = &mut p.thermal;
    t.water_capacity = vary(rng, t.water_capacity, h);
    t.air_capacity = vary(rng, t.air_capacity, h);
    t.evaporator_capacity = vary(rng, t.evaporator_capacity, h);
    t.condenser_capacity = vary(rng, t.condenser_capacity, h);
    t.water_air_conductance = vary(rng, t.water_air_conductance, h);
    t.evaporator_conductance = vary(rng, t.evaporator_conductance, h);
    t.condenser_conductance = vary(rng, t.condenser_conductance, h);
    t.wall_conductance = vary(rng, t.wall_conductance, h);
    t.thermometer_water_fraction = vary(rng, t.thermometer_water_fraction, h).clamp(0.0, 1.0);
    let ac = &mut p.ac;
    ac.pumped_heat_prefactor = vary(rng, ac.pumped_heat_prefactor, h);
    ac.loss_factor = vary(rng, ac.loss_factor, h).max(1.0);
    ac.friction_power = vary(rng, ac.friction_power, h);
    p.heat.water_injection = vary(rng, p.heat.water_injection, h);
    p.heat.fixed_load = vary(rng, p.heat.fixed_load, h);
    p
}

/// Multiply every extensive quantity by `s`. Temperatures evolve exactly as
/// before; only the power scale changes.
pub fn scale_house(p: &mut HouseParams, s: f64) {
    let t = &mut p.thermal;
    t.water_capacity *= s;
    t.air_capacity *= s;
    t.evaporator_capacity *= s;
    t.condenser_capacity *= s;
    t.water_air_conductance *= s;
    t.evaporator_conductance *= s;
    t.condenser_conductance *= s;
    t.wall_conductance *= s;
    p.ac.pumped_heat_prefactor *= s;
    p.ac.friction_power *= s;
    p.heat.water_injection *= s;
    p.heat.air_injection *= s;
    p.heat.fixed_load *= s;
}

/// Running power of a house with its room held at the setpoint.
pub fn nominal_on_power(p: &HouseParams, ambient: f64) -> Result<f64, ThermalError> {
    steady_on_power(&p.thermal, &p.ac, p.setpoint, ambient)
}

/// Draw a heterogeneous population and scale it so its mean running power
/// matches the target. One common scale factor is applied to every house.
pub fn generate_fleet(spec: &FleetSpec) -> Result<Vec<HouseParams>, FleetError> {
    spec.validate()?;
    let mut houses: Vec<HouseParams> = (0..spec.n_houses)
        .map(|i| {
            let mut rng = house_rng(spec.rng_seed, i, PARAM_STREAM);
            let mut p = perturbed(&spec.nominal, spec.heterogeneity_fraction, &mut rng);
            p.id = HouseId(i as u32 + 1);
            p
        })
        .collect();
    let mut total = 0.0;
    for p in &houses {
        total += nominal_on_power(p, spec.reference_ambient).map_err(|e| FleetError::Physics {
            house: p.id,
            sim_time: 0.0,
            source: e,
        })?;
    }
    let s = spec.avg_on_power_target / (total / houses.len() as f64);
    for p in &mut houses {
        scale_house(p, s);
    }
    Ok(houses)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub on: usize,
    pub off: usize,
    pub locked: usize,
}

impl Counts {
    pub fn tally<'a>(states: impl IntoIterator<Item = &'a HouseState>) -> Self {
        let mut c = Counts::default();
        for s in states {
            match s.compressor {
                Compressor::On | Compressor::LockedOn { .. } => c.on += 1,
                Compressor::Off => c.off += 1,
                Compressor::LockedOff { .. } => c.locked += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.on + self.off + self.locked
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetState {
    pub houses: Vec<HouseState>,
    pub sim_time: f64,
    pub aggregate_power: f64,
    pub counts: Counts,
}

/// Per-house snapshot at the end of a control interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub sim_time: f64,
    pub power: Vec<f64>,
    pub measured: Vec<f64>,
    pub compressor: Vec<Compressor>,
    /// Outcome of the aggregator command applied at the start of the
    /// interval; `None` where no command was sent.
    pub accepted: Vec<Option<bool>>,
    /// Number of off-to-on transitions during the interval.
    pub starts: Vec<u32>,
    /// Inrush records for houses that started during the interval.
    pub inrush: Vec<Option<InrushEvent>>,
    pub aggregate_power: f64,
    pub counts: Counts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyncDirection {
    AllOn,
    AllOff,
}

/// A population of houses and their current state.
#[derive(Debug, Clone)]
pub struct Fleet {
    pub params: Vec<HouseParams>,
    pub partition: Vec<Partition>,
    pub state: FleetState,
}

impl Fleet {
    /// Build a fleet with randomised initial conditions spread across the
    /// deadband so that it does not start synchronised.
    pub fn from_spec(spec: &FleetSpec, ambient: f64) -> Result<Self, FleetError> {
        let params = generate_fleet(spec)?;
        let houses = params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut rng = house_rng(spec.rng_seed, i, INIT_STREAM);
                random_initial_state(p, ambient, &mut rng)
            })
            .collect();
        let partition = (0..spec.n_houses)
            .map(|i| if i >= spec.n_houses - spec.n_remote { Partition::RemotePlant } else { Partition::LocalVirtual })
            .collect();
        Ok(Self::new(params, partition, houses))
    }

    pub fn new(params: Vec<HouseParams>, partition: Vec<Partition>, houses: Vec<HouseState>) -> Self {
        assert_eq!(params.len(), houses.len());
        assert_eq!(params.len(), partition.len());
        let aggregate_power = params.iter().zip(&houses).map(|(p, s)| instantaneous_power(s, p).0).sum();
        let counts = Counts::tally(&houses);
        Self { params, partition, state: FleetState { houses, sim_time: 0.0, aggregate_power, counts } }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = HouseId> + '_ {
        self.params.iter().map(|p| p.id)
    }

    /// Apply one command per house, then integrate `control_dt` seconds in
    /// physics steps of at most `physics_dt`.
    pub fn step(
        &mut self,
        ambient: f64,
        commands: &[SwitchCommand],
        control_dt: f64,
        physics_dt: f64,
    ) -> Result<TelemetryFrame, FleetError> {
        let n = self.len();
        if commands.len() != n {
            return Err(FleetError::CommandCount { expected: n, got: commands.len() });
        }
        let substeps = (control_dt / physics_dt).ceil().max(1.0) as usize;
        let h = control_dt / substeps as f64;
        let t0 = self.state.sim_time;

        // Per house: new state, command acceptance, starts during the step.
        type Stepped = Result<(HouseState, Option<bool>, u32), FleetError>;
        let results: Vec<Stepped> = self
            .state
            .houses
            .par_iter()
            .zip(self.params.par_iter())
            .zip(commands.par_iter())
            .with_min_len(32)
            .map(|((s, p), cmd)| {
                let starts_before = s.on_transitions;
                let (mut s, ok) = apply_command(s, *cmd, p);
                let accepted = (cmd.target != SwitchTarget::NoChange).then_some(ok);
                for k in 0..substeps {
                    s = step_house(&s, p, ambient, h).map_err(|e| FleetError::Physics {
                        house: p.id,
                        sim_time: t0 + k as f64 * h,
                        source: e,
                    })?;
                }
                Ok((s, accepted, (s.on_transitions - starts_before) as u32))
            })
            .collect();

        let mut accepted = Vec::with_capacity(n);
        let mut starts = Vec::with_capacity(n);
        for (i, r) in results.into_iter().enumerate() {
            let (s, a, st) = r?;
            self.state.houses[i] = s;
            accepted.push(a);
            starts.push(st);
        }
        self.state.sim_time = t0 + control_dt;

        let mut power = Vec::with_capacity(n);
        let mut inrush = Vec::with_capacity(n);
        for ((s, p), &st) in self.state.houses.iter().zip(&self.params).zip(&starts) {
            let (w, _) = instantaneous_power(s, p);
            power.push(w);
            inrush.push(
                (st > 0).then_some(InrushEvent { peak_w: p.ac.inrush_multiple * w, duration_s: p.ac.inrush_duration }),
            );
        }
        let aggregate_power = power.iter().sum();
        let counts = Counts::tally(&self.state.houses);
        self.state.aggregate_power = aggregate_power;
        self.state.counts = counts;
        Ok(TelemetryFrame {
            sim_time: self.state.sim_time,
            measured: self.state.houses.iter().map(|s| s.measured).collect(),
            compressor: self.state.houses.iter().map(|s| s.compressor).collect(),
            power,
            accepted,
            starts,
            inrush,
            aggregate_power,
            counts,
        })
    }

    /// Free-run with no aggregator commands.
    pub fn step_free(&mut self, ambient: f64, control_dt: f64, physics_dt: f64) -> Result<TelemetryFrame, FleetError> {
        let cmds = vec![SwitchCommand::NONE; self.len()];
        self.step(ambient, &cmds, control_dt, physics_dt)
    }

    /// Command every house towards one compressor state at each control
    /// step for `duration` seconds. Returns the number of commands issued.
    ///
    /// Houses keep their thermostat and lockout, so holding everything on
    /// parks the population near the cold edge of the deadband, which is
    /// how a synchronised start is produced.
    pub fn hold_all(
        &mut self,
        direction: SyncDirection,
        ambient: f64,
        control_dt: f64,
        physics_dt: f64,
        duration: f64,
    ) -> Result<usize, FleetError> {
        let target = match direction {
            SyncDirection::AllOn => SwitchTarget::On,
            SyncDirection::AllOff => SwitchTarget::Off,
        };
        let steps = (duration / control_dt).round() as usize;
        let mut issued = 0;
        for _ in 0..steps {
            let cmds: Vec<SwitchCommand> = self
                .state
                .houses
                .iter()
                .map(|s| {
                    let needed = match direction {
                        SyncDirection::AllOn => matches!(s.compressor, Compressor::Off),
                        SyncDirection::AllOff => matches!(s.compressor, Compressor::On),
                    };
                    if needed {
                        issued += 1;
                        SwitchCommand::aggregator(target)
                    } else {
                        SwitchCommand::NONE
                    }
                })
                .collect();
            self.step(ambient, &cmds, control_dt, physics_dt)?;
        }
        Ok(issued)
    }
}

/// Temperature uniform over the deadband, compressor on with a probability
/// equal to a rough duty-cycle guess, internal nodes near their quasi-steady
/// offsets.
pub fn random_initial_state(p: &HouseParams, ambient: f64, rng: &mut ChaCha8Rng) -> HouseState {
    let db = p.deadband();
    let temp = rng.random_range(db.lower..=db.upper);
    let heat = p.heat.total() + p.thermal.wall_conductance * (ambient - p.setpoint);
    let capacity = nominal_on_power(p, ambient).map(|w| w * 3.0).unwrap_or(1.0);
    let duty = (heat / capacity).clamp(0.05, 0.95);
    let on = rng.random_bool(duty);
    let mut s = HouseState::at_rest(p, temp, ambient);
    let water_offset = p.heat.to_water() / p.thermal.water_air_conductance;
    let f = p.thermal.thermometer_water_fraction;
    // Thermometer reads `temp` with water sitting `water_offset` above air.
    s.thermal.air = temp - f * water_offset;
    s.thermal.water = s.thermal.air + water_offset;
    s.thermal.evaporator = s.thermal.air;
    s.measured = temp;
    if on {
        s.compressor = Compressor::On;
        s.cycle_phase_time = rng.random_range(0.0..600.0);
    } else if rng.random_bool(0.3) {
        s.compressor = Compressor::LockedOff { remaining: rng.random_range(0.0..p.ac.lockout_duration.max(1.0)) };
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_heterogeneity_gives_identical_houses() {
        let mut spec = FleetSpec::nominal(10, 7);
        spec.heterogeneity_fraction = 0.0;
        let f = generate_fleet(&spec).unwrap();
        for p in &f[1..] {
            assert_eq!(p.thermal, f[0].thermal);
            assert_eq!(p.ac, f[0].ac);
        }
    }

    #[test]
    fn same_seed_same_fleet() {
        let spec = FleetSpec::nominal(50, 99);
        assert_eq!(generate_fleet(&spec).unwrap(), generate_fleet(&spec).unwrap());
    }

    #[test]
    fn growing_fleet_keeps_prefix_draws() {
        let mut a = FleetSpec::nominal(10, 5);
        a.avg_on_power_target = 1.0;
        let mut b = a;
        b.n_houses = 20;
        let fa = generate_fleet(&a).unwrap();
        let fb = generate_fleet(&b).unwrap();
        // Only the common scale factor differs.
        let r = fb[0].thermal.water_capacity / fa[0].thermal.water_capacity;
        for (x, y) in fa.iter().zip(&fb) {
            assert!((y.thermal.wall_conductance / x.thermal.wall_conductance - r).abs() < 1e-12);
            assert_eq!(x.thermal.thermometer_water_fraction, y.thermal.thermometer_water_fraction);
        }
    }

    #[test]
    fn mean_on_power_hits_target() {
        let spec = FleetSpec::nominal(200, 3);
        let f = generate_fleet(&spec).unwrap();
        let mean: f64 =
            f.iter().map(|p| nominal_on_power(p, spec.reference_ambient).unwrap()).sum::<f64>() / f.len() as f64;
        assert!((mean / spec.avg_on_power_target - 1.0).abs() < 1e-9);
    }

    #[test]
    fn all_off_at_zero_input_draws_nothing() {
        let mut spec = FleetSpec::nominal(5, 1);
        spec.nominal.heat.water_injection = 0.0;
        spec.nominal.heat.fixed_load = 0.0;
        let params = generate_fleet(&spec).unwrap();
        let houses = params.iter().map(|p| HouseState::at_rest(p, 20.0, 20.0)).collect();
        let mut fleet = Fleet::new(params, vec![Partition::LocalVirtual; 5], houses);
        let frame = fleet.step_free(20.0, 2.0, 1.0).unwrap();
        assert_eq!(frame.aggregate_power, 0.0);
        assert_eq!(frame.counts.total(), 5);
    }

    #[test]
    fn wrong_command_count_is_rejected() {
        let mut fleet = Fleet::from_spec(&FleetSpec::nominal(4, 1), NOMINAL_AMBIENT).unwrap();
        let err = fleet.step(NOMINAL_AMBIENT, &[SwitchCommand::NONE], 2.0, 1.0).unwrap_err();
        assert_eq!(err, FleetError::CommandCount { expected: 4, got: 1 });
    }

    #[test]
    fn holding_running_houses_on_needs_no_commands() {
        let mut spec = FleetSpec::nominal(6, 2);
        spec.n_remote = 0;
        let params = generate_fleet(&spec).unwrap();
        let houses = params
            .iter()
            .map(|p| {
                let mut s = HouseState::at_rest(p, 22.0, NOMINAL_AMBIENT);
                s.compressor = Compressor::On;
                s
            })
            .collect();
        let mut fleet = Fleet::new(params, vec![Partition::LocalVirtual; 6], houses);
        let n = fleet.hold_all(SyncDirection::AllOn, NOMINAL_AMBIENT, 2.0, 1.0, 10.0).unwrap();
        assert_eq!(n, 0);
    }
}
