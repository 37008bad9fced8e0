//! One closed-loop run: warm up, measure the baseline, then track.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use acfleet_core::channel::Link;
use acfleet_core::controller::{Controller, Observation};
use acfleet_core::fleet::{Fleet, Partition, TelemetryFrame};
use acfleet_core::grid::{assign_houses, size_ratings, GridMonitor, OverloadReport};
use acfleet_core::house::{CommandSource, HouseId};
use acfleet_core::metrics::{
    fairness_variance, nrmse, pjm_score, FairnessReport, PjmScore, ScoreConfig, TrackingRecord,
};
use acfleet_core::plant::{DeviceCommand, DeviceProtocol, Measurement, Plant};
use acfleet_core::signal::{self, square_wave, synthetic_regd, trace_signal, ReferenceSignal, Trace};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Seeds, SignalKind};
use crate::RunError;

/// Size and count of the random comparison groups for fairness.
pub const FAIRNESS_GROUPS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub controller: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub baseline_power_w: f64,
    pub nrmse: f64,
    pub score: PjmScore,
    pub composite_score: f64,
    pub overload: OverloadReport,
    pub fairness: Option<FairnessReport>,
    /// Off-to-on switches per house per hour during tracking.
    pub switching_rate_remote: f64,
    pub switching_rate_virtual: f64,
    pub commands_sent: u64,
    pub commands_lost: u64,
    pub commands_rejected: u64,
    /// Steps on which the controller could not reach the reference.
    pub saturated_steps: u64,
    /// Aggregator commands applied before tracking began. Always zero.
    pub baseline_commands: u64,
    pub telemetry_path: Option<PathBuf>,
    /// Reference and achieved power, one pair per control step.
    #[serde(skip)]
    pub record: TrackingRecord,
}

impl ExperimentResult {
    /// Everything that must repeat bit-for-bit for the same config and
    /// seeds.
    pub fn same_metrics(&self, other: &Self) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.telemetry_path = None;
        b.telemetry_path = None;
        a == b
    }
}

fn build_signal(cfg: &ExperimentConfig, baseline: f64) -> Result<ReferenceSignal, RunError> {
    let s = &cfg.signal;
    let (dt, duration) = (cfg.timing.control_dt, cfg.timing.duration_s);
    Ok(match &s.kind {
        SignalKind::Constant => ReferenceSignal::constant(baseline, dt, duration),
        SignalKind::Square { period_s } => square_wave(baseline, s.amplitude_fraction, *period_s, duration, dt)?,
        SignalKind::Regd { trace: Some(path), .. } => {
            signal::load_trace(path, baseline, s.amplitude_fraction, dt, Some(duration))?
        }
        SignalKind::Regd { trace: None, synthetic } => {
            let trace: Trace = synthetic_regd(synthetic);
            trace_signal(&trace, baseline, s.amplitude_fraction, dt, Some(duration))
        }
    })
}

fn steps(seconds: f64, dt: f64) -> usize {
    (seconds / dt).round() as usize
}

struct TelemetryWriter {
    w: csv::Writer<BufWriter<File>>,
}

impl TelemetryWriter {
    fn create(path: &Path) -> Result<Self, RunError> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(["t", "house_id", "state", "power_w", "temp_c"])?;
        Ok(Self { w })
    }

    fn frame(&mut self, ids: &[HouseId], f: &TelemetryFrame) -> Result<(), RunError> {
        for (i, id) in ids.iter().enumerate() {
            self.w.write_record([
                f.sim_time.to_string(),
                id.to_string(),
                f.compressor[i].label().to_string(),
                f.power[i].to_string(),
                f.measured[i].to_string(),
            ])?;
        }
        Ok(())
    }
}

/// Run one experiment. Writes `<dir>/<name>.metrics.json` (and telemetry if
/// asked) when an output directory is configured.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, RunError> {
    cfg.validate()?;
    let started = Instant::now();
    let t = cfg.timing;
    let dt = t.control_dt;

    let fleet = Fleet::from_spec(&cfg.fleet_spec(), cfg.ambient_c)?;
    let ids: Vec<HouseId> = fleet.ids().collect();
    let remote: Vec<usize> = (0..fleet.len()).filter(|&i| fleet.partition[i] == Partition::RemotePlant).collect();
    let local: Vec<usize> = (0..fleet.len()).filter(|&i| fleet.partition[i] == Partition::LocalVirtual).collect();
    let mut plant = Plant::new(fleet, cfg.ambient_c, dt, t.physics_dt, cfg.seeds.plant);
    if let Some(pem) = cfg.packetized() {
        plant.set_protocol(DeviceProtocol::Packetized(pem));
    }
    plant.enable_log();
    let mut controller: Box<dyn Controller> = cfg.controller.build(cfg.seeds.controller);
    let mut link: Link<(u64, DeviceCommand)> = Link::new(cfg.channel.model(cfg.seeds.channel))?;
    let mut telemetry_link: Option<Link<Measurement>> =
        cfg.channel.measurement_model(cfg.seeds.channel).map(Link::new).transpose()?;

    for _ in 0..steps(t.warmup_s, dt) {
        plant.measurement();
        plant.advance()?;
    }

    let mut specs = assign_houses(&ids, cfg.grid.n_transformers, cfg.grid.assignment, cfg.seeds.grid)?;
    let mut unit = specs.clone();
    unit.iter_mut().for_each(|s| s.rating = 1.0);
    let sizing = GridMonitor::new(unit, &ids)?;
    let mut peaks = vec![0.0_f64; specs.len()];
    let mut view: Option<Measurement> = None;
    let mut baseline_samples = Vec::with_capacity(steps(t.baseline_s, dt));
    for _ in 0..steps(t.baseline_s, dt) {
        let m = plant.measurement();
        let obs = Observation { time: m.time, dt, reference: f64::NAN, devices: &m.devices };
        controller.observe_baseline(&obs);
        view = Some(m);
        let f = plant.advance()?;
        baseline_samples.push(f.aggregate_power);
        for (p, x) in peaks.iter_mut().zip(sizing.transformer_power(&f.power)?) {
            *p = p.max(x);
        }
    }
    controller.finish_baseline();
    let baseline = signal::baseline_power(&baseline_samples, dt, ScoreConfig::default().min_window)?;
    let reference = build_signal(cfg, baseline)?;
    size_ratings(&mut specs, &peaks, cfg.grid.headroom);
    let mut grid = GridMonitor::new(specs, &ids)?;
    let baseline_commands = plant.log().iter().filter(|c| c.source == CommandSource::Aggregator).count() as u64;

    let mut telemetry = match (&cfg.output.dir, cfg.output.telemetry) {
        (Some(dir), true) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{}.telemetry.csv", cfg.name));
            Some((TelemetryWriter::create(&path)?, path))
        }
        _ => None,
    };

    let transitions_before: Vec<u64> = plant.fleet.state.houses.iter().map(|s| s.on_transitions).collect();
    let n_steps = steps(t.duration_s, dt);
    let mut record = TrackingRecord::new(dt);
    let mut frames = Vec::with_capacity(n_steps);
    let (mut sent, mut rejected, mut saturated) = (0u64, 0u64, 0u64);
    for k in 0..n_steps {
        let m = plant.measurement();
        let now = m.time;
        // The aggregator acts on the newest frame it has received.
        let seen = match telemetry_link.as_mut() {
            Some(tl) => {
                tl.send(m, now);
                for (frame, _) in tl.receive(now + 1e-9) {
                    if view.as_ref().is_none_or(|v| frame.seq > v.seq) {
                        view = Some(frame);
                    }
                }
                view.as_ref().expect("baseline leaves a frame")
            }
            None => view.insert(m),
        };
        let r = reference.samples[k.min(reference.samples.len() - 1)];
        let batch = controller.step(&Observation { time: now, dt, reference: r, devices: &seen.devices });
        let seq = seen.seq;
        saturated += batch.saturated as u64;
        for c in batch.commands {
            link.send((seq, c), now);
            sent += 1;
        }
        // Each command travels on its own and may be late or lost.
        for ((seq, c), _) in link.receive(now + 1e-9) {
            plant.deliver(seq, &[c]);
        }
        plant.acknowledge();
        let f = plant.advance()?;
        rejected += f.accepted.iter().filter(|a| **a == Some(false)).count() as u64;
        let inrush: Vec<Option<f64>> = f.inrush.iter().map(|e| e.map(|e| e.peak_w)).collect();
        grid.update(&f.power, &inrush, dt)?;
        record.push(r, f.aggregate_power);
        if let Some((w, _)) = telemetry.as_mut() {
            w.frame(&ids, &f)?;
        }
        frames.push(f.power);
    }
    if let Some((w, _)) = telemetry.as_mut() {
        w.w.flush()?;
    }

    let hours = t.duration_s / 3600.0;
    let rate = |group: &[usize]| {
        if group.is_empty() {
            return 0.0;
        }
        let total: u64 =
            group.iter().map(|&i| plant.fleet.state.houses[i].on_transitions - transitions_before[i]).sum();
        total as f64 / group.len() as f64 / hours
    };
    let fairness = if remote.len() >= 2 && local.len() >= remote.len() {
        Some(fairness_variance(
            &frames,
            &record.reference,
            &remote,
            &local,
            remote.len(),
            FAIRNESS_GROUPS,
            cfg.seeds.fairness,
        )?)
    } else {
        None
    };
    let score = pjm_score(&record, &ScoreConfig::default())?;
    let result = ExperimentResult {
        name: cfg.name.clone(),
        controller: controller.name().to_string(),
        config_hash: cfg.hash(),
        seeds: cfg.seeds,
        baseline_power_w: baseline,
        nrmse: nrmse(&record)?,
        composite_score: score.composite(),
        score,
        overload: grid.report(),
        fairness,
        switching_rate_remote: rate(&remote),
        switching_rate_virtual: rate(&local),
        commands_sent: sent,
        commands_lost: link.dropped,
        commands_rejected: rejected,
        saturated_steps: saturated,
        baseline_commands,
        telemetry_path: telemetry.map(|(_, p)| p),
        record,
    };
    info!(
        "{} [{}]: NRMSE {:.2}% score {:.3} in {:.1} s",
        result.name,
        result.controller,
        100.0 * result.nrmse,
        result.composite_score,
        started.elapsed().as_secs_f64()
    );
    if let Some(dir) = &cfg.output.dir {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.metrics.json", cfg.name));
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), &result)?;
    }
    Ok(result)
}
