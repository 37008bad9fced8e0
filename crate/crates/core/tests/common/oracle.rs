//! Reference integrator for the four-node house, written from the model
//! equations without touching the crate's integrator. Used as a test oracle.

#![allow(dead_code)]

use acfleet_core::calibration::{nominal_ac, nominal_heat, nominal_thermal, DEADBAND_HALFWIDTH, SETPOINT};
use acfleet_core::thermal::{AcParams, Deadband, HeatInputs, ThermalParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K0: f64 = 273.15;

/// One randomised house and its operating conditions.
#[derive(Debug, Clone, Copy)]
pub struct Case {
    pub thermal: ThermalParams,
    pub ac: AcParams,
    pub heat: HeatInputs,
    pub deadband: Deadband,
    pub ambient: f64,
}

/// `[water, air, evaporator, condenser]`.
type Y = [f64; 4];

fn derivative(c: &Case, y: &Y, on: bool) -> (Y, f64, f64) {
    let p = &c.thermal;
    let [tw, ta, t1, t2] = *y;
    let (qc, w) = if on {
        let k = t1 + K0;
        let qc = c.ac.pumped_heat_prefactor * (-c.ac.latent_heat_over_gas_constant / k).exp() / k;
        (qc, c.ac.loss_factor * qc * (t2 - t1) / k + c.ac.friction_power)
    } else {
        (0.0, 0.0)
    };
    let q_w = c.heat.water_injection + (1.0 - c.heat.fixed_air_fraction) * c.heat.fixed_load;
    let q_a = c.heat.air_injection + c.heat.fixed_air_fraction * c.heat.fixed_load;
    let leak = p.wall_conductance * (c.ambient - ta);
    let d = [
        (p.water_air_conductance * (ta - tw) + q_w) / p.water_capacity,
        (leak + p.water_air_conductance * (tw - ta) + p.evaporator_conductance * (t1 - ta) + q_a) / p.air_capacity,
        (p.evaporator_conductance * (ta - t1) - qc) / p.evaporator_capacity,
        (p.condenser_conductance * (c.ambient - t2) + qc + w) / p.condenser_capacity,
    ];
    (d, q_w + q_a + leak, qc)
}

fn rk4(c: &Case, y: &Y, on: bool, h: f64) -> Y {
    let add = |a: &Y, b: &Y, s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2], a[3] + s * b[3]];
    let k1 = derivative(c, y, on).0;
    let k2 = derivative(c, &add(y, &k1, h / 2.0), on).0;
    let k3 = derivative(c, &add(y, &k2, h / 2.0), on).0;
    let k4 = derivative(c, &add(y, &k3, h), on).0;
    let mut out = *y;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn reading(c: &Case, y: &Y) -> f64 {
    let f = c.thermal.thermometer_water_fraction;
    (1.0 - f) * y[1] + f * y[0]
}

/// Converged limit cycle from the oracle.
#[derive(Debug, Clone, Copy)]
pub struct OracleCycle {
    pub on_time: f64,
    pub off_time: f64,
    /// Heat into the room and heat pumped out over the last cycle (J).
    pub heat_in: f64,
    pub heat_removed: f64,
}

/// Integrate with step `h`, switching at the deadband edges, until two
/// consecutive cycles agree to `tol`. Crossing times are linearly
/// interpolated inside the step.
pub fn limit_cycle(c: &Case, h: f64, tol: f64, max_cycles: usize) -> Option<OracleCycle> {
    let mut y: Y = [c.deadband.upper, c.deadband.upper, c.deadband.upper, c.ambient];
    let mut on = true;
    let mut phase = 0.0;
    let mut heat_in = 0.0;
    let mut heat_removed = 0.0;
    let mut on_time = None;
    let mut last: Option<OracleCycle> = None;
    for _ in 0..2 * max_cycles {
        loop {
            let (_, qin0, qc0) = derivative(c, &y, on);
            let next = rk4(c, &y, on, h);
            let (_, qin1, qc1) = derivative(c, &next, on);
            let (r0, r1) = (reading(c, &y), reading(c, &next));
            let target = if on { c.deadband.lower } else { c.deadband.upper };
            let crossed = if on { r1 <= target } else { r1 >= target };
            let frac = if crossed { ((target - r0) / (r1 - r0)).clamp(0.0, 1.0) } else { 1.0 };
            heat_in += frac * h * 0.5 * (qin0 + qin1);
            heat_removed += frac * h * 0.5 * (qc0 + qc1);
            phase += frac * h;
            y = next;
            if crossed {
                break;
            }
            if phase > 1e6 {
                return None;
            }
        }
        if on {
            on_time = Some(phase);
        } else {
            let cycle = OracleCycle { on_time: on_time.take()?, off_time: phase, heat_in, heat_removed };
            if let Some(prev) = last {
                let rel = |a: f64, b: f64| (a - b).abs() / b;
                if rel(prev.on_time, cycle.on_time) < tol && rel(prev.off_time, cycle.off_time) < tol {
                    return Some(cycle);
                }
            }
            last = Some(cycle);
            heat_in = 0.0;
            heat_removed = 0.0;
        }
        on = !on;
        phase = 0.0;
    }
    None
}

/// Nominal house with every capacity and conductance scaled by an
/// independent uniform factor in [0.8, 1.2], plus randomised thermometer
/// placement, heat gain, loss factor and outdoor temperature.
pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let mut s = || rng.random_range(0.8..1.2);
    let mut t = nominal_thermal();
    t.water_capacity *= s();
    t.air_capacity *= s();
    t.evaporator_capacity *= s();
    t.condenser_capacity *= s();
    t.water_air_conductance *= s();
    t.evaporator_conductance *= s();
    t.condenser_conductance *= s();
    t.wall_conductance *= s();
    let mut ac = nominal_ac();
    ac.pumped_heat_prefactor *= rng.random_range(0.9..1.1);
    ac.loss_factor = rng.random_range(1.0..1.3);
    ac.friction_power = rng.random_range(200.0..300.0);
    t.thermometer_water_fraction = rng.random_range(0.2..0.8);
    Case {
        thermal: t,
        ac,
        heat: nominal_heat(rng.random_range(150.0..450.0)),
        deadband: Deadband::around(SETPOINT, DEADBAND_HALFWIDTH),
        ambient: rng.random_range(30.0..36.0),
    }
}

/// `n` random cases whose cycles exist and are under `max_period` long.
pub fn random_cases(seed: u64, n: usize, max_period: f64) -> Vec<Case> {
    use acfleet_core::thermal::{cycle_durations, CycleOptions};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let c = random_case(&mut rng);
        if let Ok(r) = cycle_durations(&c.thermal, &c.ac, &c.heat, c.deadband, c.ambient, &CycleOptions::default()) {
            if r.period() < max_period {
                out.push(c);
            }
        }
    }
    out
}
