mod common;

use acfleet_core::calibration::{
    ambient_power_coefficient, nominal_ac, nominal_deadband, nominal_heat, nominal_thermal, NOMINAL_AMBIENT,
    NOMINAL_HEAT_GAIN,
};
use acfleet_core::thermal::{
    ac_power, carnot_cooling_rate, cycle_durations, off_equilibrium, on_equilibrium, steady_on_power, step_thermal,
    CycleOptions, HeatInputs, ThermalError, ThermalState,
};
use common::oracle::{limit_cycle, random_cases};
use proptest::prelude::*;

fn tight() -> CycleOptions {
    CycleOptions { convergence_tolerance: 1e-4, ..CycleOptions::default() }
}

#[test]
fn cycle_lengths_match_fine_step_oracle() {
    for (i, c) in random_cases(20240601, 20, 4000.0).iter().enumerate() {
        let got = cycle_durations(&c.thermal, &c.ac, &c.heat, c.deadband, c.ambient, &tight()).unwrap();
        let want = limit_cycle(c, 0.01, 1e-4, 200).expect("oracle converges");
        let on = (got.on_time - want.on_time).abs() / want.on_time;
        let off = (got.off_time - want.off_time).abs() / want.off_time;
        assert!(on < 0.01 && off < 0.01, "set {i}: {got:?} vs {want:?}");
    }
}

#[test]
fn oracle_cycle_balances_energy() {
    for c in random_cases(7, 3, 4000.0) {
        let o = limit_cycle(&c, 0.01, 1e-4, 200).unwrap();
        assert!((o.heat_in - o.heat_removed).abs() / o.heat_removed < 0.01, "{o:?}");
    }
}

#[test]
fn equilibria_are_stationary_for_random_houses() {
    for c in random_cases(99, 20, f64::INFINITY) {
        let off = off_equilibrium(&c.thermal, &c.heat, c.ambient);
        let next = step_thermal(&off, &c.thermal, &c.ac, &c.heat, false, 1.0).unwrap();
        for (a, b) in [
            (off.water, next.water),
            (off.air, next.air),
            (off.evaporator, next.evaporator),
            (off.condenser, next.condenser),
        ] {
            assert!((a - b).abs() < 1e-6, "off: {a} -> {b}");
        }
        let on = on_equilibrium(&c.thermal, &c.ac, &c.heat, c.ambient).unwrap();
        let next = step_thermal(&on, &c.thermal, &c.ac, &c.heat, true, 1.0).unwrap();
        for (a, b) in [
            (on.water, next.water),
            (on.air, next.air),
            (on.evaporator, next.evaporator),
            (on.condenser, next.condenser),
        ] {
            assert!((a - b).abs() < 1e-6, "on: {a} -> {b}");
        }
    }
}

#[test]
fn cycles_balance_energy() {
    for c in random_cases(3, 20, f64::INFINITY) {
        let r = cycle_durations(&c.thermal, &c.ac, &c.heat, c.deadband, c.ambient, &tight()).unwrap();
        assert!(r.energy_imbalance() < 0.01, "{r:?}");
    }
}

/// Indoor test room: outdoor air at the setpoint, so the heat gain alone
/// sets the duty cycle.
#[test]
fn cycle_length_against_heat_gain_is_u_shaped() {
    let (p, ac, db) = (nominal_thermal(), nominal_ac(), nominal_deadband());
    let ambient = db.lower + 0.5;
    let opts = CycleOptions::default();
    assert!(matches!(
        cycle_durations(&p, &ac, &HeatInputs::new(0.0, 0.0), db, ambient, &opts),
        Err(ThermalError::NeverOn { .. })
    ));
    assert!(matches!(
        cycle_durations(&p, &ac, &HeatInputs::new(2000.0, 0.0), db, ambient, &opts),
        Err(ThermalError::NeverOff { .. })
    ));
    let gains: Vec<f64> = (1..=14).map(|k| 100.0 * k as f64).collect();
    let reports: Vec<_> = gains
        .iter()
        .map(|&q| cycle_durations(&p, &ac, &HeatInputs::new(q, 0.0), db, ambient, &opts).unwrap())
        .collect();
    let periods: Vec<f64> = reports.iter().map(|r| r.period()).collect();
    let (imin, _) = periods.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    assert!(imin > 0 && imin < periods.len() - 1, "{periods:?}");
    let duty = reports[imin].duty_cycle();
    assert!((0.35..0.65).contains(&duty), "minimum at duty {duty}");
    // Falls to the minimum, rises after it.
    assert!(periods[..=imin].windows(2).all(|w| w[1] < w[0]), "{periods:?}");
    assert!(periods[imin..].windows(2).all(|w| w[1] > w[0]), "{periods:?}");
    // Both ends stretch far beyond the minimum.
    assert!(periods[0] > 3.0 * periods[imin] && periods[periods.len() - 1] > 3.0 * periods[imin]);
}

#[test]
fn cycle_lengthens_as_thermometer_moves_to_the_water() {
    let (mut p, ac, db) = (nominal_thermal(), nominal_ac(), nominal_deadband());
    let heat = nominal_heat(NOMINAL_HEAT_GAIN);
    let mut last = 0.0;
    for k in 0..10 {
        p.thermometer_water_fraction = k as f64 / 9.0;
        let r = cycle_durations(&p, &ac, &heat, db, NOMINAL_AMBIENT, &CycleOptions::default()).unwrap();
        assert!(r.period() > last, "f = {}: {} after {last}", p.thermometer_water_fraction, r.period());
        last = r.period();
    }
}

#[test]
fn ambient_power_sweep_stays_in_field_range() {
    let (p, ac) = (nominal_thermal(), nominal_ac());
    for t in [28.0, 30.0, 32.2, 34.0, 36.0, 37.8] {
        let c = ambient_power_coefficient(&p, &ac, t).unwrap();
        assert!((0.010..=0.022).contains(&c), "{t} °C: {c}");
        // Independent finite difference over a 4 °C span.
        let w0 = steady_on_power(&p, &ac, 22.0, t - 2.0).unwrap();
        let w1 = steady_on_power(&p, &ac, 22.0, t + 2.0).unwrap();
        let slope = (w1 - w0) / 4.0 / steady_on_power(&p, &ac, 22.0, t).unwrap();
        assert!((slope - c).abs() < 1e-3, "{slope} vs {c}");
    }
}

#[test]
fn running_power_rises_through_an_on_cycle() {
    let (p, ac) = (nominal_thermal(), nominal_ac());
    let heat = nominal_heat(NOMINAL_HEAT_GAIN);
    let mut s =
        ThermalState { water: 22.5, air: 22.5, evaporator: 22.5, condenser: NOMINAL_AMBIENT, ambient: NOMINAL_AMBIENT };
    let mut powers = Vec::new();
    for _ in 0..280 {
        s = step_thermal(&s, &p, &ac, &heat, true, 1.0).unwrap();
        powers.push(ac_power(&s, &ac, true).unwrap());
    }
    // After the start-up transient the draw keeps creeping up.
    assert!(powers[60..].windows(2).all(|w| w[1] >= w[0] - 1e-9));
    assert!(powers[279] > powers[60]);
}

proptest! {
    #[test]
    fn cooling_rate_increases_with_evaporator_temperature(a in -40.0f64..55.0, b in -40.0f64..55.0) {
        prop_assume!(a < b);
        let ac = nominal_ac();
        let s = |t1: f64| ThermalState { water: 22.0, air: 22.0, evaporator: t1, condenser: 40.0, ambient: 32.0 };
        let qa = carnot_cooling_rate(&s(a), &ac, true).unwrap();
        let qb = carnot_cooling_rate(&s(b), &ac, true).unwrap();
        prop_assert!(qb > qa && qa > 0.0);
    }

    #[test]
    fn power_exceeds_friction_when_condenser_is_warmer(t1 in -10.0f64..20.0, lift in 0.1f64..40.0) {
        let ac = nominal_ac();
        let s = ThermalState { water: 22.0, air: 22.0, evaporator: t1, condenser: t1 + lift, ambient: 32.0 };
        prop_assert!(ac_power(&s, &ac, true).unwrap() > ac.friction_power);
        prop_assert_eq!(ac_power(&s, &ac, false).unwrap(), 0.0);
    }

    #[test]
    fn idle_house_relaxes_toward_off_equilibrium(start in 15.0f64..40.0) {
        let (p, ac) = (nominal_thermal(), nominal_ac());
        let heat = nominal_heat(NOMINAL_HEAT_GAIN);
        let eq = off_equilibrium(&p, &heat, NOMINAL_AMBIENT);
        let mut s = ThermalState::uniform(NOMINAL_AMBIENT);
        s.air = start;
        s.water = start;
        let d0 = (s.air - eq.air).abs();
        for _ in 0..3600 {
            s = step_thermal(&s, &p, &ac, &heat, false, 10.0).unwrap();
        }
        prop_assert!((s.air - eq.air).abs() <= d0 + 1e-9);
    }
}
