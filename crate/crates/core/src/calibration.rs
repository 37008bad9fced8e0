//! Default parameters for a small window air conditioner in a lab-scale house,
//! and the fitting routines that produce them.
//!
//! Three anchors pin the defaults: about 5 W/°C of envelope leak, a
//! 5000 BTU/h (≈1465 W) nameplate cooling rate, and cycles lasting minutes to
//! tens of minutes for 200–375 W of programmed heat.

use crate::house::{HouseId, HouseParams};
use crate::thermal::{
    steady_on_power, AcParams, CycleOptions, CycleReport, Deadband, HeatInputs, ThermalError, ThermalParams,
    KELVIN_OFFSET,
};

/// 5000 BTU/h expressed in watts.
pub const NAMEPLATE_COOLING_W: f64 = 1465.0;
/// Programmed heat gain approximating nominal outdoor conditions (W).
pub const NOMINAL_HEAT_GAIN: f64 = 200.0;
/// Programmed heat gain approximating extreme outdoor conditions (W).
pub const EXTREME_HEAT_GAIN: f64 = 375.0;
/// 90 °F.
pub const NOMINAL_AMBIENT: f64 = 32.2;
/// 100 °F.
pub const EXTREME_AMBIENT: f64 = 37.8;
/// Duct fan plus circulation pump load (W).
pub const FIXED_LOAD_W: f64 = 125.0;
pub const SETPOINT: f64 = 22.0;
pub const DEADBAND_HALFWIDTH: f64 = 0.5;
/// Air mixing time constant of the room, folded into the sensor (s).
pub const SENSOR_LAG_TAU: f64 = 12.0;
/// Lab-measured increase of running power per °C of outdoor temperature.
pub const AMBIENT_POWER_TARGET: f64 = 0.0136;

/// R410A saturation pressure (kPa) against temperature (°C).
pub const R410A_SATURATION: [(f64, f64); 7] =
    [(-20.0, 400.0), (-10.0, 573.0), (0.0, 799.0), (10.0, 1088.0), (20.0, 1445.0), (30.0, 1888.0), (40.0, 2419.0)];

/// Fit `ln p = c - (L/R) / T` by least squares and return `L/R` in kelvin.
pub fn fit_latent_over_gas_constant(table: &[(f64, f64)]) -> f64 {
    let n = table.len() as f64;
    let xs: Vec<f64> = table.iter().map(|(t, _)| 1.0 / (t + KELVIN_OFFSET)).collect();
    let ys: Vec<f64> = table.iter().map(|(_, p)| p.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    -sxy / sxx
}

/// Prefactor `A` making `A exp(-L/(R T_1)) / T_1` equal `cooling` at an
/// evaporator temperature of `evaporator` °C.
pub fn calibrate_prefactor(cooling: f64, evaporator: f64, latent_over_gas: f64) -> f64 {
    let k = evaporator + KELVIN_OFFSET;
    cooling * k / (-latent_over_gas / k).exp()
}

pub fn nominal_thermal() -> ThermalParams {
    ThermalParams {
        // About 20 gallons of water.
        water_capacity: 317e3,
        air_capacity: 80e3,
        evaporator_capacity: 4e3,
        condenser_capacity: 6e3,
        water_air_conductance: 600.0,
        evaporator_conductance: 110.0,
        condenser_conductance: 110.0,
        wall_conductance: 5.0,
        thermometer_water_fraction: 0.6,
    }
}

/// Evaporator temperature at which the nameplate rating is matched: room air
/// at the setpoint with the full nameplate flow crossing the evaporator.
pub fn nameplate_evaporator_temp(params: &ThermalParams) -> f64 {
    SETPOINT - NAMEPLATE_COOLING_W / params.evaporator_conductance
}

pub fn nominal_ac() -> AcParams {
    let lr = fit_latent_over_gas_constant(&R410A_SATURATION);
    AcParams {
        pumped_heat_prefactor: calibrate_prefactor(
            NAMEPLATE_COOLING_W,
            nameplate_evaporator_temp(&nominal_thermal()),
            lr,
        ),
        latent_heat_over_gas_constant: lr,
        loss_factor: 1.1,
        friction_power: 250.0,
        inrush_multiple: 5.5,
        inrush_duration: 0.1,
        lockout_duration: 180.0,
        min_on_duration: 0.0,
    }
}

/// Programmed water injection plus the fixed fan and pump load on the water node.
pub fn nominal_heat(water_injection: f64) -> HeatInputs {
    HeatInputs::new(water_injection, FIXED_LOAD_W)
}

pub fn nominal_deadband() -> Deadband {
    Deadband::around(SETPOINT, DEADBAND_HALFWIDTH)
}

/// A single house with every default applied.
pub fn nominal_house() -> HouseParams {
    HouseParams {
        id: HouseId(0),
        thermal: nominal_thermal(),
        ac: nominal_ac(),
        heat: nominal_heat(NOMINAL_HEAT_GAIN),
        setpoint: SETPOINT,
        deadband_halfwidth: DEADBAND_HALFWIDTH,
        sensor_lag_tau: SENSOR_LAG_TAU,
    }
}

/// Fractional change of steady running power per °C of outdoor temperature,
/// by central difference around `ambient` with room air at the setpoint.
pub fn ambient_power_coefficient(params: &ThermalParams, ac: &AcParams, ambient: f64) -> Result<f64, ThermalError> {
    let lo = steady_on_power(params, ac, SETPOINT, ambient - 1.0)?;
    let hi = steady_on_power(params, ac, SETPOINT, ambient + 1.0)?;
    let mid = steady_on_power(params, ac, SETPOINT, ambient)?;
    Ok((hi - lo) / (2.0 * mid))
}

/// Summary of the calibrated defaults, printed by the `calibrate` command.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CalibrationSummary {
    pub latent_over_gas_constant_k: f64,
    pub pumped_heat_prefactor: f64,
    pub nameplate_evaporator_c: f64,
    pub ambient_power_coefficient: f64,
    pub nominal_cycle: CycleReport,
    pub extreme_cycle: CycleReport,
}

pub fn summarize(params: &ThermalParams, ac: &AcParams) -> Result<CalibrationSummary, ThermalError> {
    let opts = CycleOptions::default();
    let db = nominal_deadband();
    Ok(CalibrationSummary {
        latent_over_gas_constant_k: ac.latent_heat_over_gas_constant,
        pumped_heat_prefactor: ac.pumped_heat_prefactor,
        nameplate_evaporator_c: nameplate_evaporator_temp(params),
        ambient_power_coefficient: ambient_power_coefficient(params, ac, NOMINAL_AMBIENT)?,
        nominal_cycle: crate::thermal::cycle_durations(
            params,
            ac,
            &nominal_heat(NOMINAL_HEAT_GAIN),
            db,
            NOMINAL_AMBIENT,
            &opts,
        )?,
        extreme_cycle: crate::thermal::cycle_durations(
            params,
            ac,
            &nominal_heat(EXTREME_HEAT_GAIN),
            db,
            EXTREME_AMBIENT,
            &opts,
        )?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermal::{carnot_cooling_rate, ThermalState};

    #[test]
    fn vapour_pressure_fit_is_in_refrigerant_range() {
        let lr = fit_latent_over_gas_constant(&R410A_SATURATION);
        assert!((2200.0..2600.0).contains(&lr), "{lr}");
        // The fitted curve should reproduce the table to within a few percent.
        let (t0, p0) = R410A_SATURATION[3];
        for (t, p) in R410A_SATURATION {
            let model = p0 * (-lr * (1.0 / (t + KELVIN_OFFSET) - 1.0 / (t0 + KELVIN_OFFSET))).exp();
            assert!((model / p - 1.0).abs() < 0.06, "{t}: {model} vs {p}");
        }
    }

    #[test]
    fn nameplate_rate_at_operating_point() {
        let p = nominal_thermal();
        let ac = nominal_ac();
        let t1 = nameplate_evaporator_temp(&p);
        let s = ThermalState { water: 22.0, air: 22.0, evaporator: t1, condenser: 40.0, ambient: 32.2 };
        let q = carnot_cooling_rate(&s, &ac, true).unwrap();
        assert!((q - NAMEPLATE_COOLING_W).abs() < 1e-6);
    }

    #[test]
    fn defaults_validate() {
        nominal_thermal().validate().unwrap();
        nominal_ac().validate().unwrap();
        nominal_heat(NOMINAL_HEAT_GAIN).validate().unwrap();
    }

    #[test]
    fn ambient_coefficient_near_lab_value() {
        let c = ambient_power_coefficient(&nominal_thermal(), &nominal_ac(), NOMINAL_AMBIENT).unwrap();
        assert!((c - AMBIENT_POWER_TARGET).abs() < 0.003, "{c}");
    }
}
