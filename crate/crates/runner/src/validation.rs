//! Open-loop scenarios run on a small fleet with no controller in the loop.
//!
//! Each preset drives or releases the population in a fixed pattern and
//! checks a qualitative property of the aggregate response. Thresholds were
//! set once against the default seed and are kept as regressions.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use acfleet_core::calibration::{self, EXTREME_HEAT_GAIN, NOMINAL_AMBIENT, NOMINAL_HEAT_GAIN};
use acfleet_core::channel::{ChannelModel, Link};
use acfleet_core::fleet::{nominal_on_power, Fleet, FleetSpec, SyncDirection};
use acfleet_core::house::{SwitchCommand, SwitchTarget};
use acfleet_core::thermal::{cycle_durations, CycleOptions};
use serde::Serialize;

use crate::RunError;

/// Houses per scenario.
pub const FLEET_SIZE: usize = 200;
const DT: f64 = 2.0;
const PHYSICS_DT: f64 = 1.0;
const WARMUP_S: f64 = 1800.0;
const HOLD_S: f64 = 1800.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ValidationPreset {
    /// Six hours of free running.
    Exp1,
    /// Force synchronisation, then release.
    Exp2,
    /// Switch everything on and off over a range of periods.
    Exp3,
    /// Release two halves of a synchronised fleet half a cycle apart.
    Exp4,
    /// Desynchronisation speed against parameter spread.
    Exp5,
    /// Low and high duty-cycle populations.
    Exp6,
    /// Forced switching through fixed and randomised delays.
    Exp7,
}

impl ValidationPreset {
    pub const ALL: [ValidationPreset; 7] = [
        ValidationPreset::Exp1,
        ValidationPreset::Exp2,
        ValidationPreset::Exp3,
        ValidationPreset::Exp4,
        ValidationPreset::Exp5,
        ValidationPreset::Exp6,
        ValidationPreset::Exp7,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ValidationPreset::Exp1 => "exp1",
            ValidationPreset::Exp2 => "exp2",
            ValidationPreset::Exp3 => "exp3",
            ValidationPreset::Exp4 => "exp4",
            ValidationPreset::Exp5 => "exp5",
            ValidationPreset::Exp6 => "exp6",
            ValidationPreset::Exp7 => "exp7",
        }
    }
}

impl std::str::FromStr for ValidationPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown validation preset {s:?} (exp1 ... exp7)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub preset: ValidationPreset,
    pub seed: u64,
    pub natural_period_s: f64,
    pub checks: Vec<Check>,
    /// Named scalar results behind the checks.
    pub measurements: BTreeMap<String, f64>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Aggregate power and running count after each control step.
#[derive(Debug, Clone, Copy)]
struct Sample {
    power: f64,
    on: usize,
}

fn build_fleet(heterogeneity: f64, heat_gain: f64, seed: u64) -> Result<Fleet, RunError> {
    let mut spec = FleetSpec::nominal(FLEET_SIZE, seed);
    spec.heterogeneity_fraction = heterogeneity;
    spec.nominal.heat = calibration::nominal_heat(heat_gain);
    spec.n_remote = 0;
    let mut fleet = Fleet::from_spec(&spec, NOMINAL_AMBIENT)?;
    run_free(&mut fleet, WARMUP_S)?;
    Ok(fleet)
}

/// Limit-cycle period of the fleet's nominal house.
pub fn natural_period(heat_gain: f64) -> Result<f64, RunError> {
    let mut spec = FleetSpec::nominal(1, 0);
    spec.heterogeneity_fraction = 0.0;
    spec.nominal.heat = calibration::nominal_heat(heat_gain);
    let fleet = Fleet::from_spec(&spec, NOMINAL_AMBIENT)?;
    let p = &fleet.params[0];
    let c = cycle_durations(&p.thermal, &p.ac, &p.heat, p.deadband(), NOMINAL_AMBIENT, &CycleOptions::default())
        .map_err(|e| RunError::Config(format!("natural cycle: {e}")))?;
    Ok(c.period())
}

fn steps(seconds: f64) -> usize {
    (seconds / DT).round() as usize
}

fn run_free(fleet: &mut Fleet, seconds: f64) -> Result<Vec<Sample>, RunError> {
    let mut out = Vec::with_capacity(steps(seconds));
    for _ in 0..steps(seconds) {
        let f = fleet.step_free(NOMINAL_AMBIENT, DT, PHYSICS_DT)?;
        out.push(Sample { power: f.aggregate_power, on: f.counts.on });
    }
    Ok(out)
}

/// Peak-to-peak aggregate power in consecutive windows.
fn envelopes(series: &[Sample], window: usize) -> Vec<f64> {
    series
        .chunks_exact(window.max(1))
        .map(|w| {
            let (lo, hi) =
                w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.power), hi.max(s.power)));
            hi - lo
        })
        .collect()
}

/// Amplitude of the component of `x` at `period`, over the longest whole
/// number of periods available.
fn harmonic(x: &[f64], period: f64) -> f64 {
    let per = (period / DT).round() as usize;
    let n = x.len().checked_div(per).map_or(0, |k| k * per);
    if n == 0 {
        return 0.0;
    }
    let (mut re, mut im) = (0.0, 0.0);
    for (k, v) in x[..n].iter().enumerate() {
        let phase = TAU * k as f64 * DT / period;
        re += v * phase.cos();
        im -= v * phase.sin();
    }
    2.0 * (re * re + im * im).sqrt() / n as f64
}

fn rated_total(fleet: &Fleet) -> f64 {
    fleet.params.iter().map(|p| nominal_on_power(p, NOMINAL_AMBIENT).unwrap_or(0.0)).sum()
}

fn mean(x: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = x.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n.max(1) as f64
}

/// Force a synchronised start, release, and return peak-to-peak amplitude
/// per natural period after release.
fn release_envelopes(heterogeneity: f64, seed: u64, period: f64, cycles: usize) -> Result<Vec<f64>, RunError> {
    let mut fleet = build_fleet(heterogeneity, NOMINAL_HEAT_GAIN, seed)?;
    fleet.hold_all(SyncDirection::AllOn, NOMINAL_AMBIENT, DT, PHYSICS_DT, HOLD_S)?;
    let after = run_free(&mut fleet, (steps(period) * cycles) as f64 * DT)?;
    Ok(envelopes(&after, steps(period)))
}

/// First cycle index in `1..=within` whose amplitude is at most half the
/// first cycle's.
fn halving_cycle(env: &[f64], within: usize) -> Option<usize> {
    (1..=within.min(env.len().saturating_sub(1))).find(|&j| env[j] <= 0.5 * env[0])
}

/// Square-wave forcing: every half period one broadcast sends all houses
/// the new target through `link`. Returns the response amplitude at the
/// forcing period as a fraction of the fleet's rated power.
fn forced_response(fleet: &Fleet, period: f64, link_model: ChannelModel) -> Result<f64, RunError> {
    let mut fleet = fleet.clone();
    let mut link: Link<(usize, SwitchTarget)> = Link::new(link_model)?;
    let n_periods = (3600.0 / period).ceil().max(3.0) as usize + 1;
    let half = steps(period / 2.0).max(1);
    let mut power = Vec::with_capacity(2 * half * n_periods);
    for k in 0..2 * half * n_periods {
        let t = fleet.state.sim_time;
        if k % half == 0 {
            let target = if (k / half).is_multiple_of(2) { SwitchTarget::On } else { SwitchTarget::Off };
            for i in 0..fleet.len() {
                link.send((i, target), t);
            }
        }
        let mut cmds = vec![SwitchCommand::NONE; fleet.len()];
        for ((i, target), _) in link.receive(t + 1e-9) {
            cmds[i] = SwitchCommand::aggregator(target);
        }
        let f = fleet.step(NOMINAL_AMBIENT, &cmds, DT, PHYSICS_DT)?;
        power.push(f.aggregate_power);
    }
    // The first period is transient.
    Ok(harmonic(&power[2 * half..], 2.0 * half as f64 * DT) / rated_total(&fleet))
}

fn delayed(mean_s: f64, std_s: f64, seed: u64) -> ChannelModel {
    ChannelModel {
        delay_mean: mean_s,
        delay_std: std_s,
        loss_rate_min: 0.0,
        loss_rate_max: 0.0,
        ..ChannelModel::impaired(seed)
    }
}

pub fn run_validation(preset: ValidationPreset, seed: u64) -> Result<ValidationReport, RunError> {
    let period = natural_period(NOMINAL_HEAT_GAIN)?;
    let mut m = BTreeMap::new();
    let mut checks = Vec::new();
    match preset {
        ValidationPreset::Exp1 => {
            let mut fleet = build_fleet(0.2, NOMINAL_HEAT_GAIN, seed)?;
            const BINS: usize = 10;
            let mut hist = [0usize; BINS];
            let mut series = Vec::with_capacity(steps(6.0 * 3600.0));
            for k in 0..steps(6.0 * 3600.0) {
                let f = fleet.step_free(NOMINAL_AMBIENT, DT, PHYSICS_DT)?;
                series.push(Sample { power: f.aggregate_power, on: f.counts.on });
                // One snapshot every 30 s.
                if k % 15 == 0 {
                    for (p, temp) in fleet.params.iter().zip(&f.measured) {
                        let x = p.deadband().position(*temp).clamp(0.0, 1.0);
                        hist[((x * BINS as f64) as usize).min(BINS - 1)] += 1;
                    }
                }
            }
            let centre = hist[BINS / 2 - 1].max(hist[BINS / 2]);
            for (i, h) in hist.iter().enumerate() {
                m.insert(format!("histogram_bin_{i}"), *h as f64);
            }
            checks.push(Check::new(
                "temperature occupancy is bimodal",
                hist[0] > centre && hist[BINS - 1] > centre,
                format!("edges {} / {}, centre {}", hist[0], hist[BINS - 1], centre),
            ));
            // Independent devices: var = n d (1 - d) running powers squared.
            let n = fleet.len() as f64;
            let duty = mean(series.iter().map(|s| s.on as f64)) / n;
            let running = mean(series.iter().map(|s| s.power)) / (duty * n);
            let expected = running * (n * duty * (1.0 - duty)).sqrt();
            let avg = mean(series.iter().map(|s| s.power));
            let std = mean(series.iter().map(|s| (s.power - avg).powi(2))).sqrt();
            m.insert("duty_cycle".into(), duty);
            m.insert("aggregate_std_ratio".into(), std / expected);
            checks.push(Check::new(
                "no synchronisation alarm",
                std / expected < 3.0,
                format!("aggregate std {:.2} x the independent-device level", std / expected),
            ));
        }
        ValidationPreset::Exp2 => {
            let het = release_envelopes(0.2, seed, period, 8)?;
            let hom = release_envelopes(0.0, seed, period, 8)?;
            for (j, (a, b)) in het.iter().zip(&hom).enumerate() {
                m.insert(format!("envelope_heterogeneous_{j}"), *a);
                m.insert(format!("envelope_homogeneous_{j}"), *b);
            }
            let halved = halving_cycle(&het, 3);
            checks.push(Check::new(
                "heterogeneous fleet halves its envelope within 3 cycles",
                halved.is_some(),
                format!(
                    "halved by cycle {}, ratios {:?}",
                    halved.map_or("none".to_string(), |c| c.to_string()),
                    ratios(&het, 4)
                ),
            ));
            let persists = hom.len() > 5 && (1..=5).all(|j| hom[j] >= 0.5 * hom[0]);
            checks.push(Check::new(
                "homogeneous fleet oscillates for at least 5 cycles",
                persists,
                format!("ratios {:?}", ratios(&hom, 6)),
            ));
        }
        ValidationPreset::Exp3 => {
            let fleet = build_fleet(0.2, NOMINAL_HEAT_GAIN, seed)?;
            let periods = [60.0, 120.0, 240.0, 480.0, 960.0, 1920.0];
            let mut gains = Vec::new();
            for &p in &periods {
                let g = forced_response(&fleet, p, ChannelModel::perfect())?;
                m.insert(format!("gain_period_{p:.0}s"), g);
                gains.push(g);
            }
            let peak = gains.iter().cloned().fold(0.0, f64::max);
            checks.push(Check::new(
                "response falls at periods shorter than the lockout allows",
                gains[0] < 0.5 * peak && gains[0] < gains[1] && gains[1] < gains[2],
                format!("gains {:?}", rounded(&gains)),
            ));
        }
        ValidationPreset::Exp4 => {
            let mut fleet = build_fleet(0.0, NOMINAL_HEAT_GAIN, seed)?;
            fleet.hold_all(SyncDirection::AllOn, NOMINAL_AMBIENT, DT, PHYSICS_DT, HOLD_S)?;
            let single = fleet.clone();
            // Keep the odd houses pinned on for another half cycle.
            for _ in 0..steps(period / 2.0) {
                let cmds: Vec<SwitchCommand> = (0..fleet.len())
                    .map(|i| if i % 2 == 1 { SwitchCommand::aggregator(SwitchTarget::On) } else { SwitchCommand::NONE })
                    .collect();
                fleet.step(NOMINAL_AMBIENT, &cmds, DT, PHYSICS_DT)?;
            }
            let two: Vec<f64> = run_free(&mut fleet, 2.0 * period)?.iter().map(|s| s.power).collect();
            let mut single = single;
            let one: Vec<f64> = run_free(&mut single, 2.0 * period)?.iter().map(|s| s.power).collect();
            let (f1, f2) = (harmonic(&two, period), harmonic(&two, period / 2.0));
            let (s1, s2) = (harmonic(&one, period), harmonic(&one, period / 2.0));
            m.insert("two_groups_fundamental".into(), f1);
            m.insert("two_groups_second_harmonic".into(), f2);
            m.insert("one_group_fundamental".into(), s1);
            m.insert("one_group_second_harmonic".into(), s2);
            checks.push(Check::new(
                "two released groups oscillate at twice the natural frequency",
                f2 > f1,
                format!("second harmonic {f2:.0} W vs fundamental {f1:.0} W"),
            ));
            checks.push(Check::new(
                "one released group oscillates at the natural frequency",
                s1 > s2,
                format!("fundamental {s1:.0} W vs second harmonic {s2:.0} W"),
            ));
        }
        ValidationPreset::Exp5 => {
            let spreads = [0.0, 0.05, 0.1, 0.2, 0.3];
            let mut decay = Vec::new();
            for &h in &spreads {
                let env = release_envelopes(h, seed, period, 4)?;
                let r = env[3] / env[0];
                m.insert(format!("decay_ratio_h{h:.2}"), r);
                decay.push(r);
            }
            checks.push(Check::new(
                "wider parameter spread desynchronises faster",
                decay[3] < decay[0] && decay[4] < decay[1],
                format!("amplitude after 3 cycles / first cycle: {:?}", rounded(&decay)),
            ));
        }
        ValidationPreset::Exp6 => {
            let gains = [100.0, NOMINAL_HEAT_GAIN, EXTREME_HEAT_GAIN];
            let mut duties = Vec::new();
            let mut ok = true;
            for &g in &gains {
                let mut fleet = build_fleet(0.2, g, seed)?;
                let s = run_free(&mut fleet, 7200.0)?;
                let measured = mean(s.iter().map(|x| x.on as f64)) / fleet.len() as f64;
                let mut spec = FleetSpec::nominal(1, 0);
                spec.heterogeneity_fraction = 0.0;
                spec.nominal.heat = calibration::nominal_heat(g);
                let one = Fleet::from_spec(&spec, NOMINAL_AMBIENT)?;
                let p = &one.params[0];
                let c = cycle_durations(
                    &p.thermal,
                    &p.ac,
                    &p.heat,
                    p.deadband(),
                    NOMINAL_AMBIENT,
                    &CycleOptions::default(),
                )
                .map_err(|e| RunError::Config(format!("cycle at {g} W: {e}")))?;
                m.insert(format!("duty_measured_{g:.0}w"), measured);
                m.insert(format!("duty_nominal_house_{g:.0}w"), c.duty_cycle());
                ok &= (measured - c.duty_cycle()).abs() < 0.05;
                duties.push(measured);
            }
            checks.push(Check::new(
                "duty cycle rises with heat gain",
                duties.windows(2).all(|w| w[1] > w[0]),
                format!("duties {:?}", rounded(&duties)),
            ));
            checks.push(Check::new(
                "fleet duty cycle matches the nominal house within 0.05",
                ok,
                format!("measured {:?}", rounded(&duties)),
            ));
        }
        ValidationPreset::Exp7 => {
            let fleet = build_fleet(0.2, NOMINAL_HEAT_GAIN, seed)?;
            let p = 120.0;
            let none = forced_response(&fleet, p, ChannelModel::perfect())?;
            let fixed = forced_response(&fleet, p, delayed(18.0, 0.0, seed))?;
            let random = forced_response(&fleet, p, delayed(18.0, 15.0, seed))?;
            m.insert("gain_no_delay".into(), none);
            m.insert("gain_fixed_delay".into(), fixed);
            m.insert("gain_random_delay".into(), random);
            checks.push(Check::new(
                "a fixed delay only shifts the response",
                (fixed - none).abs() <= 0.1 * none,
                format!("gain {fixed:.4} vs {none:.4} undelayed"),
            ));
            checks.push(Check::new(
                "randomised delays smear the response",
                random < fixed,
                format!("gain {random:.4} vs {fixed:.4} with a fixed delay"),
            ));
        }
    }
    Ok(ValidationReport { preset, seed, natural_period_s: period, checks, measurements: m })
}

fn ratios(env: &[f64], n: usize) -> Vec<f64> {
    env.iter().take(n).map(|e| (100.0 * e / env[0]).round() / 100.0).collect()
}

fn rounded(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| (v * 1e4).round() / 1e4).collect()
}
