//! Extended equivalent-thermal-parameter (ETP) model of a single-zone house
//! cooled by a single-speed air conditioner.
//!
//! Four lumped nodes are tracked: the water tank (standing in for the solid
//! heat capacity of a house), the room air, the cold heat exchanger
//! (evaporator) and the hot heat exchanger (condenser):
//!
//! ```text
//! C_w dT_w/dt = H_m (T_a - T_w) + Q_w
//! C_a dT_a/dt = U_a (T_amb - T_a) + H_m (T_w - T_a) + Q_a + H_1 (T_1 - T_a)
//! C_1 dT_1/dt = H_1 (T_a - T_1) - Q_c
//! C_2 dT_2/dt = H_2 (T_amb - T_2) + Q_c + W_ac
//! ```
//!
//! The air conditioner is a Carnot heat pump with extra losses. The heat it
//! pumps depends on refrigerant vapour density at the evaporator,
//! `Q_c = A exp(-L/(R T_1)) / T_1`, and the electric power it draws is
//! `W_ac = gamma Q_c (T_2 - T_1) / T_1 + W_fric`. Both use absolute
//! temperature; state is kept in degrees Celsius.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::rk4_step;

/// Offset between the Celsius and Kelvin scales.
pub const KELVIN_OFFSET: f64 = 273.15;

/// Evaporator temperatures outside this band (°C) are treated as an
/// integration blow-up.
pub const EVAPORATOR_BAND: (f64, f64) = (-50.0, 60.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermalError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("evaporator temperature {0:.3} °C left the physical band; the integration diverged")]
    ModelDivergence(f64),
    #[error("thermal state became non-finite")]
    NonFinite,
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("the air conditioner cannot pull the thermometer down to {lower:.3} °C (on-state equilibrium {equilibrium:.3} °C)")]
    NeverOff { lower: f64, equilibrium: f64 },
    #[error("the thermometer never warms to {upper:.3} °C (off-state equilibrium {equilibrium:.3} °C)")]
    NeverOn { upper: f64, equilibrium: f64 },
    #[error("no steady limit cycle after {0} cycles")]
    NoConvergence(usize),
}

/// Heat capacities and conductances of the house and air conditioner
/// heat exchangers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalParams {
    /// Water (solid mass) heat capacity, J/°C.
    pub water_capacity: f64,
    /// Room air heat capacity, J/°C.
    pub air_capacity: f64,
    /// Evaporator heat capacity, J/°C.
    pub evaporator_capacity: f64,
    /// Condenser heat capacity, J/°C.
    pub condenser_capacity: f64,
    /// Water to air heat transfer coefficient, W/°C.
    pub water_air_conductance: f64,
    /// Air to evaporator heat transfer coefficient, W/°C.
    pub evaporator_conductance: f64,
    /// Condenser to outdoor heat transfer coefficient, W/°C.
    pub condenser_conductance: f64,
    /// Envelope conductance, W/°C.
    pub wall_conductance: f64,
    /// How strongly the thermometer is coupled to the water rather than the
    /// mixed air. 0 reads the air, 1 reads the water.
    pub thermometer_water_fraction: f64,
}

impl ThermalParams {
    pub fn validate(&self) -> Result<(), ThermalError> {
        let positive = [
            ("water_capacity", self.water_capacity),
            ("air_capacity", self.air_capacity),
            ("evaporator_capacity", self.evaporator_capacity),
            ("condenser_capacity", self.condenser_capacity),
            ("water_air_conductance", self.water_air_conductance),
            ("evaporator_conductance", self.evaporator_conductance),
            ("condenser_conductance", self.condenser_conductance),
            ("wall_conductance", self.wall_conductance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ThermalError::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        let f = self.thermometer_water_fraction;
        if !(0.0..=1.0).contains(&f) {
            return Err(ThermalError::InvalidParams(format!("thermometer_water_fraction must lie in [0, 1], got {f}")));
        }
        Ok(())
    }
}

/// Lossy Carnot air-conditioner parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcParams {
    /// Pumped-heat prefactor `A` (W·K). Absorbs compressor displacement, the
    /// refrigerant gas constant and the vapour-pressure amplitude.
    pub pumped_heat_prefactor: f64,
    /// Latent heat over the refrigerant gas constant, `L/R` (K).
    pub latent_heat_over_gas_constant: f64,
    /// Carnot loss factor `gamma` (>= 1).
    pub loss_factor: f64,
    /// Constant friction loss while running (W).
    pub friction_power: f64,
    /// Peak inrush power as a multiple of the running power.
    pub inrush_multiple: f64,
    /// Duration of the inrush transient (s).
    pub inrush_duration: f64,
    /// Minimum off time after the compressor stops (s).
    pub lockout_duration: f64,
    /// Minimum on time after the compressor starts (s). Zero disables it.
    pub min_on_duration: f64,
}

impl AcParams {
    pub fn validate(&self) -> Result<(), ThermalError> {
        let bad = |msg: String| Err(ThermalError::InvalidParams(msg));
        if !(self.pumped_heat_prefactor > 0.0) {
            return bad(format!("pumped_heat_prefactor must be > 0, got {}", self.pumped_heat_prefactor));
        }
        if !(self.latent_heat_over_gas_constant > 0.0) {
            return bad(format!(
                "latent_heat_over_gas_constant must be > 0, got {}",
                self.latent_heat_over_gas_constant
            ));
        }
        if !(self.loss_factor >= 1.0) {
            return bad(format!("loss_factor must be >= 1, got {}", self.loss_factor));
        }
        if !(self.friction_power >= 0.0) {
            return bad(format!("friction_power must be >= 0, got {}", self.friction_power));
        }
        if !(self.inrush_multiple >= 1.0) {
            return bad(format!("inrush_multiple must be >= 1, got {}", self.inrush_multiple));
        }
        if !(self.inrush_duration >= 0.0 && self.lockout_duration >= 0.0 && self.min_on_duration >= 0.0) {
            return bad("durations must be >= 0".into());
        }
        Ok(())
    }
}

/// Node temperatures (°C) plus the outdoor temperature driving them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    pub water: f64,
    pub air: f64,
    pub evaporator: f64,
    pub condenser: f64,
    pub ambient: f64,
}

impl ThermalState {
    /// Every node at the outdoor temperature.
    pub fn uniform(ambient: f64) -> Self {
        Self { water: ambient, air: ambient, evaporator: ambient, condenser: ambient, ambient }
    }

    fn is_finite(&self) -> bool {
        self.water.is_finite() && self.air.is_finite() && self.evaporator.is_finite() && self.condenser.is_finite()
    }
}

/// Internal heat sources (W).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatInputs {
    /// Programmable water-heater injection.
    pub water_injection: f64,
    /// Direct injection into the air node.
    pub air_injection: f64,
    /// Constant duct-fan and pump load.
    pub fixed_load: f64,
    /// Share of `fixed_load` that goes to the air node; the rest heats the water.
    pub fixed_air_fraction: f64,
}

impl HeatInputs {
    pub fn new(water_injection: f64, fixed_load: f64) -> Self {
        Self { water_injection, air_injection: 0.0, fixed_load, fixed_air_fraction: 0.0 }
    }

    pub fn validate(&self) -> Result<(), ThermalError> {
        if !(self.water_injection >= 0.0 && self.air_injection >= 0.0 && self.fixed_load >= 0.0) {
            return Err(ThermalError::InvalidParams("heat inputs must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.fixed_air_fraction) {
            return Err(ThermalError::InvalidParams("fixed_air_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Heat delivered to the water node.
    pub fn to_water(&self) -> f64 {
        self.water_injection + (1.0 - self.fixed_air_fraction) * self.fixed_load
    }

    /// Heat delivered to the air node.
    pub fn to_air(&self) -> f64 {
        self.air_injection + self.fixed_air_fraction * self.fixed_load
    }

    pub fn total(&self) -> f64 {
        self.water_injection + self.air_injection + self.fixed_load
    }
}

fn check_evaporator(t1: f64) -> Result<(), ThermalError> {
    if !t1.is_finite() {
        return Err(ThermalError::NonFinite);
    }
    if t1 < EVAPORATOR_BAND.0 || t1 > EVAPORATOR_BAND.1 {
        return Err(ThermalError::ModelDivergence(t1));
    }
    Ok(())
}

/// Unchecked `A exp(-L/(R T_1)) / T_1` with `T_1` in °C.
#[inline]
fn pumped_heat(evaporator: f64, ac: &AcParams) -> f64 {
    let k = evaporator + KELVIN_OFFSET;
    ac.pumped_heat_prefactor * (-ac.latent_heat_over_gas_constant / k).exp() / k
}

#[inline]
fn electric_power(evaporator: f64, condenser: f64, pumped: f64, ac: &AcParams) -> f64 {
    ac.loss_factor * pumped * (condenser - evaporator) / (evaporator + KELVIN_OFFSET) + ac.friction_power
}

/// Heat removed from the evaporator (W). Zero while the compressor is off.
pub fn carnot_cooling_rate(state: &ThermalState, ac: &AcParams, on: bool) -> Result<f64, ThermalError> {
    check_evaporator(state.evaporator)?;
    Ok(if on { pumped_heat(state.evaporator, ac) } else { 0.0 })
}

/// Electric power drawn by the compressor (W). Zero while off.
pub fn ac_power(state: &ThermalState, ac: &AcParams, on: bool) -> Result<f64, ThermalError> {
    let q = carnot_cooling_rate(state, ac, on)?;
    Ok(if on { electric_power(state.evaporator, state.condenser, q, ac) } else { 0.0 })
}

/// Temperature seen by the thermostat: a mix of air and water temperature.
pub fn thermometer_reading(state: &ThermalState, params: &ThermalParams) -> f64 {
    let f = params.thermometer_water_fraction;
    (1.0 - f) * state.air + f * state.water
}

/// Node temperatures plus three running integrals: heat entering the
/// conditioned space (internal sources and wall leak), heat pumped out by the
/// evaporator, and electric energy.
type Augmented = [f64; 7];

struct Rhs<'a> {
    params: &'a ThermalParams,
    ac: &'a AcParams,
    to_water: f64,
    to_air: f64,
    ambient: f64,
    on: bool,
}

impl Rhs<'_> {
    #[inline]
    fn eval(&self, y: &Augmented) -> Augmented {
        let p = self.params;
        let [tw, ta, t1, t2, ..] = *y;
        let (qc, w) = if self.on {
            let q = pumped_heat(t1, self.ac);
            (q, electric_power(t1, t2, q, self.ac))
        } else {
            (0.0, 0.0)
        };
        let wall = p.wall_conductance * (self.ambient - ta);
        [
            (p.water_air_conductance * (ta - tw) + self.to_water) / p.water_capacity,
            (wall + p.water_air_conductance * (tw - ta) + self.to_air + p.evaporator_conductance * (t1 - ta))
                / p.air_capacity,
            (p.evaporator_conductance * (ta - t1) - qc) / p.evaporator_capacity,
            (p.condenser_conductance * (self.ambient - t2) + qc + w) / p.condenser_capacity,
            self.to_water + self.to_air + wall,
            qc,
            w,
        ]
    }
}

fn augment(s: &ThermalState) -> Augmented {
    [s.water, s.air, s.evaporator, s.condenser, 0.0, 0.0, 0.0]
}

fn unaugment(y: &Augmented, ambient: f64) -> ThermalState {
    ThermalState { water: y[0], air: y[1], evaporator: y[2], condenser: y[3], ambient }
}

fn rk4_augmented(y: &Augmented, rhs: &Rhs<'_>, dt: f64) -> Result<Augmented, ThermalError> {
    let out = rk4_step(y, dt, |y| rhs.eval(y));
    if out.iter().any(|v| !v.is_finite()) {
        return Err(ThermalError::NonFinite);
    }
    // The Carnot expressions are only evaluated while running; an idle
    // evaporator simply follows the room air.
    if rhs.on {
        check_evaporator(out[2])?;
    }
    Ok(out)
}

/// Advance the four node temperatures by `dt` seconds with one RK4 step.
pub fn step_thermal(
    state: &ThermalState,
    params: &ThermalParams,
    ac: &AcParams,
    inputs: &HeatInputs,
    on: bool,
    dt: f64,
) -> Result<ThermalState, ThermalError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ThermalError::InvalidStep(dt));
    }
    if !state.is_finite() {
        return Err(ThermalError::NonFinite);
    }
    if on {
        check_evaporator(state.evaporator)?;
    }
    let rhs = Rhs { params, ac, to_water: inputs.to_water(), to_air: inputs.to_air(), ambient: state.ambient, on };
    let y = rk4_augmented(&augment(state), &rhs, dt)?;
    Ok(unaugment(&y, state.ambient))
}

/// Steady state with the compressor off.
pub fn off_equilibrium(params: &ThermalParams, inputs: &HeatInputs, ambient: f64) -> ThermalState {
    let air = ambient + inputs.total() / params.wall_conductance;
    ThermalState {
        water: air + inputs.to_water() / params.water_air_conductance,
        air,
        evaporator: air,
        condenser: ambient,
        ambient,
    }
}

/// Steady state with the compressor running continuously.
///
/// Setting the derivatives to zero reduces the system to one monotone
/// equation in the evaporator temperature, solved by bisection.
pub fn on_equilibrium(
    params: &ThermalParams,
    ac: &AcParams,
    inputs: &HeatInputs,
    ambient: f64,
) -> Result<ThermalState, ThermalError> {
    let q_in = inputs.to_water() + inputs.to_air();
    let air_of = |t1: f64| t1 + pumped_heat(t1, ac) / params.evaporator_conductance;
    let residual = |t1: f64| params.wall_conductance * (ambient - air_of(t1)) + q_in - pumped_heat(t1, ac);
    let (mut lo, mut hi) = EVAPORATOR_BAND;
    if residual(hi) > 0.0 {
        return Err(ThermalError::ModelDivergence(hi));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    let t1 = 0.5 * (lo + hi);
    let air = air_of(t1);
    let k1 = t1 + KELVIN_OFFSET;
    let qc = pumped_heat(t1, ac);
    let g = ac.loss_factor * qc / k1;
    let h2 = params.condenser_conductance;
    let condenser = (h2 * ambient + qc - g * t1 + ac.friction_power) / (h2 - g);
    Ok(ThermalState {
        water: air + inputs.to_water() / params.water_air_conductance,
        air,
        evaporator: t1,
        condenser,
        ambient,
    })
}

/// Running power once the heat exchangers have settled, with the room air
/// held at `air_temp`.
pub fn steady_on_power(
    params: &ThermalParams,
    ac: &AcParams,
    air_temp: f64,
    ambient: f64,
) -> Result<f64, ThermalError> {
    // H_1 (T_a - T_1) = Q_c(T_1); the left side falls and the right rises in T_1.
    let residual = |t1: f64| params.evaporator_conductance * (air_temp - t1) - pumped_heat(t1, ac);
    let (mut lo, mut hi) = (EVAPORATOR_BAND.0, air_temp);
    if residual(lo) < 0.0 {
        return Err(ThermalError::ModelDivergence(lo));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t1 = 0.5 * (lo + hi);
    let qc = pumped_heat(t1, ac);
    let g = ac.loss_factor * qc / (t1 + KELVIN_OFFSET);
    let h2 = params.condenser_conductance;
    let t2 = (h2 * ambient + qc - g * t1 + ac.friction_power) / (h2 - g);
    Ok(electric_power(t1, t2, qc, ac))
}

/// Thermostat switching thresholds (°C).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deadband {
    pub lower: f64,
    pub upper: f64,
}

impl Deadband {
    pub fn around(setpoint: f64, halfwidth: f64) -> Self {
        Self { lower: setpoint - halfwidth, upper: setpoint + halfwidth }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Position of `temp` in the band: 0 at the lower edge, 1 at the upper.
    pub fn position(&self, temp: f64) -> f64 {
        (temp - self.lower) / self.width()
    }
}

/// Knobs for [`cycle_durations`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleOptions {
    /// Integration step (s).
    pub dt: f64,
    /// Width to which threshold crossings are bisected (s).
    pub event_resolution: f64,
    /// Relative change between consecutive cycles that counts as converged.
    pub convergence_tolerance: f64,
    pub max_cycles: usize,
    /// Longest single on or off phase before giving up (s).
    pub max_phase_duration: f64,
}

impl Default for CycleOptions {
    fn default() -> Self {
        Self {
            dt: 1.0,
            event_resolution: 0.01,
            convergence_tolerance: 0.005,
            max_cycles: 200,
            max_phase_duration: 30.0 * 86_400.0,
        }
    }
}

/// Steady limit cycle of a house under an ideal deadband thermostat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleReport {
    pub on_time: f64,
    pub off_time: f64,
    /// Number of full cycles simulated before convergence.
    pub cycles: usize,
    /// Heat entering the conditioned space over the last full cycle (J),
    /// internal sources plus wall leak.
    pub heat_in: f64,
    /// Heat pumped out by the evaporator over the last full cycle (J).
    pub heat_removed: f64,
    /// Mean electric power over the last on phase (W).
    pub mean_on_power: f64,
}

impl CycleReport {
    pub fn period(&self) -> f64 {
        self.on_time + self.off_time
    }

    pub fn duty_cycle(&self) -> f64 {
        self.on_time / self.period()
    }

    /// `|heat_in - heat_removed| / heat_removed`.
    pub fn energy_imbalance(&self) -> f64 {
        (self.heat_in - self.heat_removed).abs() / self.heat_removed
    }
}

/// Simulate the on/off limit cycle of a house whose thermostat reads the
/// (unlagged) thermometer, until consecutive cycles agree.
///
/// Threshold crossings are localised by bisection inside the step so cycle
/// lengths are not quantised to the integration step.
pub fn cycle_durations(
    params: &ThermalParams,
    ac: &AcParams,
    inputs: &HeatInputs,
    deadband: Deadband,
    ambient: f64,
    opts: &CycleOptions,
) -> Result<CycleReport, ThermalError> {
    params.validate()?;
    ac.validate()?;
    inputs.validate()?;
    if !(opts.dt > 0.0) {
        return Err(ThermalError::InvalidStep(opts.dt));
    }

    let off_eq = off_equilibrium(params, inputs, ambient);
    let off_reading = thermometer_reading(&off_eq, params);
    if off_reading <= deadband.upper {
        return Err(ThermalError::NeverOn { upper: deadband.upper, equilibrium: off_reading });
    }
    let on_eq = on_equilibrium(params, ac, inputs, ambient)?;
    let on_reading = thermometer_reading(&on_eq, params);
    if on_reading >= deadband.lower {
        return Err(ThermalError::NeverOff { lower: deadband.lower, equilibrium: on_reading });
    }

    let start = ThermalState {
        water: deadband.upper,
        air: deadband.upper,
        evaporator: deadband.upper,
        condenser: ambient,
        ambient,
    };
    let mut y = augment(&start);
    let reading = |y: &Augmented| {
        let f = params.thermometer_water_fraction;
        (1.0 - f) * y[1] + f * y[0]
    };
    let rhs_for = |on: bool| Rhs { params, ac, to_water: inputs.to_water(), to_air: inputs.to_air(), ambient, on };

    let mut on = true;
    let mut history: Vec<(f64, f64)> = Vec::new();
    let mut current_on: Option<f64> = None;
    // Integrals at the start of the current cycle.
    let mut cycle_mark = y;
    let mut on_start_elec = 0.0;
    let mut on_energy = 0.0;

    for _ in 0..(2 * opts.max_cycles + 2) {
        let rhs = rhs_for(on);
        let crossed = |y: &Augmented| if on { reading(y) <= deadband.lower } else { reading(y) >= deadband.upper };
        let mut elapsed = 0.0;
        loop {
            let next = rk4_augmented(&y, &rhs, opts.dt)?;
            if crossed(&next) {
                // Bisect on the sub-step length from the current point.
                let (mut lo, mut hi) = (0.0, opts.dt);
                let mut hit = next;
                while hi - lo > opts.event_resolution {
                    let mid = 0.5 * (lo + hi);
                    let trial = rk4_augmented(&y, &rhs, mid)?;
                    if crossed(&trial) {
                        hi = mid;
                        hit = trial;
                    } else {
                        lo = mid;
                    }
                }
                elapsed += hi;
                y = hit;
                break;
            }
            y = next;
            elapsed += opts.dt;
            if elapsed > opts.max_phase_duration {
                return Err(ThermalError::NoConvergence(history.len()));
            }
        }

        if on {
            current_on = Some(elapsed);
            on_energy = y[6] - on_start_elec;
        } else if let Some(on_time) = current_on.take() {
            history.push((on_time, elapsed));
            let n = history.len();
            let heat_in = y[4] - cycle_mark[4];
            let heat_removed = y[5] - cycle_mark[5];
            cycle_mark = y;
            if n >= 3 {
                let (a_on, a_off) = history[n - 2];
                let (b_on, b_off) = history[n - 1];
                let rel = |a: f64, b: f64| (a - b).abs() / b;
                if rel(a_on, b_on) < opts.convergence_tolerance && rel(a_off, b_off) < opts.convergence_tolerance {
                    return Ok(CycleReport {
                        on_time: b_on,
                        off_time: b_off,
                        cycles: n,
                        heat_in,
                        heat_removed,
                        mean_on_power: on_energy / b_on,
                    });
                }
            }
            if n >= opts.max_cycles {
                return Err(ThermalError::NoConvergence(n));
            }
        }
        if !on {
            on_start_elec = y[6];
        }
        on = !on;
    }
    Err(ThermalError::NoConvergence(history.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{nominal_ac, nominal_heat, nominal_thermal, NOMINAL_AMBIENT, NOMINAL_HEAT_GAIN};

    fn state(t1: f64, t2: f64) -> ThermalState {
        ThermalState { water: 23.0, air: 22.0, evaporator: t1, condenser: t2, ambient: 32.0 }
    }

    #[test]
    fn off_compressor_pumps_nothing() {
        let ac = nominal_ac();
        assert_eq!(carnot_cooling_rate(&state(10.0, 40.0), &ac, false).unwrap(), 0.0);
        assert_eq!(ac_power(&state(10.0, 40.0), &ac, false).unwrap(), 0.0);
    }

    #[test]
    fn cooling_rate_rises_with_evaporator_temperature() {
        let ac = nominal_ac();
        let cold = carnot_cooling_rate(&state(5.0, 40.0), &ac, true).unwrap();
        let warm = carnot_cooling_rate(&state(10.0, 40.0), &ac, true).unwrap();
        assert!(warm > cold);
    }

    #[test]
    fn equal_exchanger_temperatures_leave_only_friction() {
        let ac = nominal_ac();
        let w = ac_power(&state(12.0, 12.0), &ac, true).unwrap();
        assert!((w - ac.friction_power).abs() < 1e-12);
    }

    #[test]
    fn out_of_band_evaporator_is_divergence() {
        let ac = nominal_ac();
        assert!(matches!(carnot_cooling_rate(&state(75.0, 40.0), &ac, true), Err(ThermalError::ModelDivergence(_))));
        assert!(matches!(carnot_cooling_rate(&state(f64::NAN, 40.0), &ac, true), Err(ThermalError::NonFinite)));
    }

    #[test]
    fn thermometer_mixes_air_and_water() {
        let mut p = nominal_thermal();
        let s = ThermalState { water: 30.0, air: 22.0, evaporator: 20.0, condenser: 30.0, ambient: 30.0 };
        p.thermometer_water_fraction = 0.0;
        assert_eq!(thermometer_reading(&s, &p), 22.0);
        p.thermometer_water_fraction = 1.0;
        assert_eq!(thermometer_reading(&s, &p), 30.0);
        p.thermometer_water_fraction = 0.5;
        assert_eq!(thermometer_reading(&s, &p), 26.0);
    }

    #[test]
    fn zero_input_ambient_state_is_a_fixed_point() {
        let (p, ac) = (nominal_thermal(), nominal_ac());
        let s = ThermalState::uniform(27.0);
        let inputs = HeatInputs::new(0.0, 0.0);
        let next = step_thermal(&s, &p, &ac, &inputs, false, 1.0).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn off_steady_state_offsets_match_conductances() {
        let (p, ac) = (nominal_thermal(), nominal_ac());
        let inputs = nominal_heat(NOMINAL_HEAT_GAIN);
        let mut s = ThermalState::uniform(NOMINAL_AMBIENT);
        // Slowest mode is about C_w / U_a; integrate well past it.
        for _ in 0..(40 * 86_400) {
            s = step_thermal(&s, &p, &ac, &inputs, false, 20.0).unwrap();
            if (s.air - NOMINAL_AMBIENT - inputs.total() / p.wall_conductance).abs() < 1e-9 {
                break;
            }
        }
        assert!((s.air - s.ambient - inputs.total() / p.wall_conductance).abs() < 1e-6);
        assert!((s.water - s.air - inputs.to_water() / p.water_air_conductance).abs() < 1e-6);
    }

    #[test]
    fn analytic_equilibria_are_stationary() {
        let (p, ac) = (nominal_thermal(), nominal_ac());
        let inputs = nominal_heat(NOMINAL_HEAT_GAIN);
        let off = off_equilibrium(&p, &inputs, NOMINAL_AMBIENT);
        let next = step_thermal(&off, &p, &ac, &inputs, false, 1.0).unwrap();
        for (a, b) in [(off.water, next.water), (off.air, next.air), (off.evaporator, next.evaporator)] {
            assert!((a - b).abs() < 1e-6);
        }
        let on = on_equilibrium(&p, &ac, &inputs, NOMINAL_AMBIENT).unwrap();
        let next = step_thermal(&on, &p, &ac, &inputs, true, 1.0).unwrap();
        for (a, b) in [
            (on.water, next.water),
            (on.air, next.air),
            (on.evaporator, next.evaporator),
            (on.condenser, next.condenser),
        ] {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_bad_steps() {
        let (p, ac) = (nominal_thermal(), nominal_ac());
        let s = ThermalState::uniform(25.0);
        let inputs = HeatInputs::new(0.0, 0.0);
        assert!(matches!(step_thermal(&s, &p, &ac, &inputs, false, 0.0), Err(ThermalError::InvalidStep(_))));
        let mut bad = s;
        bad.air = f64::INFINITY;
        assert!(matches!(step_thermal(&bad, &p, &ac, &inputs, false, 1.0), Err(ThermalError::NonFinite)));
    }

    #[test]
    fn nominal_cycle_is_minutes_long_and_balances_energy() {
        let (p, ac) = (nominal_thermal(), nominal_ac());
        let db = Deadband::around(22.0, 0.5);
        let r =
            cycle_durations(&p, &ac, &nominal_heat(NOMINAL_HEAT_GAIN), db, NOMINAL_AMBIENT, &CycleOptions::default())
                .unwrap();
        assert!(r.on_time > 180.0 && r.off_time > 180.0, "{r:?}");
        assert!(r.period() < 3600.0);
        assert!(r.energy_imbalance() < 0.01, "{r:?}");
    }

    #[test]
    fn cycle_errors_at_both_extremes() {
        let (p, ac) = (nominal_thermal(), nominal_ac());
        let db = Deadband::around(22.0, 0.5);
        let opts = CycleOptions::default();
        let cold = cycle_durations(&p, &ac, &HeatInputs::new(0.0, 0.0), db, 22.0, &opts);
        assert!(matches!(cold, Err(ThermalError::NeverOn { .. })));
        let hot = cycle_durations(&p, &ac, &HeatInputs::new(3000.0, 125.0), db, 35.0, &opts);
        assert!(matches!(hot, Err(ThermalError::NeverOff { .. })));
    }

    #[test]
    fn higher_ambient_raises_steady_power() {
        let (p, ac) = (nominal_thermal(), nominal_ac());
        let lo = steady_on_power(&p, &ac, 22.0, 30.0).unwrap();
        let hi = steady_on_power(&p, &ac, 22.0, 31.0).unwrap();
        assert!(hi > lo);
    }
}
