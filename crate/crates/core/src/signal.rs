//! Reference power signals for the aggregation to track.

use std::io::BufRead;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("trace has fewer than two samples")]
    TooShort,
    #[error("baseline window of {have} s is shorter than the required {need} s")]
    InsufficientData { have: f64, need: f64 },
    #[error("invalid signal parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Target aggregate power sampled at a fixed period, starting at t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSignal {
    pub period: f64,
    pub samples: Vec<f64>,
    pub baseline_power: f64,
    pub amplitude_fraction: f64,
}

impl ReferenceSignal {
    /// Constant reference at `baseline`.
    pub fn constant(baseline: f64, period: f64, duration: f64) -> Self {
        let n = (duration / period).round() as usize;
        Self { period, samples: vec![baseline; n], baseline_power: baseline, amplitude_fraction: 0.0 }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.period
    }

    /// Sample in force at time `t` (zero-order hold, clamped at both ends).
    pub fn at(&self, t: f64) -> f64 {
        if self.samples.is_empty() {
            return self.baseline_power;
        }
        let i = (t / self.period + 1e-9).floor().max(0.0) as usize;
        self.samples[i.min(self.samples.len() - 1)]
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }
}

/// Square wave alternating `baseline·(1 ± amplitude_fraction)` every half
/// period, starting high.
pub fn square_wave(
    baseline: f64,
    amplitude_fraction: f64,
    period: f64,
    duration: f64,
    sample_period: f64,
) -> Result<ReferenceSignal, SignalError> {
    if !(period > 0.0 && sample_period > 0.0 && duration >= 0.0) {
        return Err(SignalError::Invalid("period, sample period and duration must be positive".into()));
    }
    let n = (duration / sample_period).round() as usize;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 * sample_period;
            let phase = (t / period).fract();
            let sign = if phase < 0.5 - 1e-12 { 1.0 } else { -1.0 };
            baseline * (1.0 + sign * amplitude_fraction)
        })
        .collect();
    Ok(ReferenceSignal { period: sample_period, samples, baseline_power: baseline, amplitude_fraction })
}

/// A normalised `(time, value)` series as stored in trace files.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Trace {
    /// Read a `time_s,value` CSV. Values must lie in [-1, 1] and times must
    /// strictly increase.
    pub fn read<R: BufRead>(reader: R) -> Result<Self, SignalError> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let text = line.trim();
            if text.is_empty() || (lineno == 1 && text.starts_with("time")) {
                continue;
            }
            let bad = |message: String| SignalError::Malformed { line: lineno, message };
            let mut cols = text.split(',');
            let (Some(t), Some(v), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(bad(format!("expected two columns, got {text:?}")));
            };
            let t: f64 = t.trim().parse().map_err(|_| bad(format!("bad time {t:?}")))?;
            let v: f64 = v.trim().parse().map_err(|_| bad(format!("bad value {v:?}")))?;
            if !t.is_finite() || !v.is_finite() {
                return Err(bad("non-finite field".into()));
            }
            if !(-1.0..=1.0).contains(&v) {
                return Err(bad(format!("value {v} outside [-1, 1]")));
            }
            if let Some(&prev) = times.last() {
                if t <= prev {
                    return Err(bad(format!("time {t} does not increase past {prev}")));
                }
            }
            times.push(t);
            values.push(v);
        }
        if times.len() < 2 {
            return Err(SignalError::TooShort);
        }
        Ok(Self { times, values })
    }

    pub fn write<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time_s,value")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }

    /// Linear interpolation at `t`, measured from the first timestamp and
    /// clamped to the end values.
    pub fn interpolate(&self, t: f64) -> f64 {
        let t = t + self.times[0];
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            return self.values[0];
        }
        if k == self.times.len() {
            return *self.values.last().unwrap();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    pub fn span(&self) -> f64 {
        self.times.last().unwrap() - self.times[0]
    }
}

/// Scale a normalised trace into a power reference, resampled to
/// `sample_period` by linear interpolation. `duration` defaults to the span
/// of the trace; the trace wraps if asked for more.
pub fn trace_signal(
    trace: &Trace,
    baseline: f64,
    amplitude_fraction: f64,
    sample_period: f64,
    duration: Option<f64>,
) -> ReferenceSignal {
    let span = trace.span();
    let duration = duration.unwrap_or(span + sample_period);
    let n = (duration / sample_period).round() as usize;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 * sample_period;
            let t = if t > span { t % (span + sample_period) } else { t };
            baseline * (1.0 + amplitude_fraction * trace.interpolate(t))
        })
        .collect();
    ReferenceSignal { period: sample_period, samples, baseline_power: baseline, amplitude_fraction }
}

/// Read a trace file and scale it; see [`trace_signal`].
pub fn load_trace(
    path: &std::path::Path,
    baseline: f64,
    amplitude_fraction: f64,
    sample_period: f64,
    duration: Option<f64>,
) -> Result<ReferenceSignal, SignalError> {
    let file = std::fs::File::open(path)?;
    let trace = Trace::read(std::io::BufReader::new(file))?;
    Ok(trace_signal(&trace, baseline, amplitude_fraction, sample_period, duration))
}

/// Time-average of uncontrolled aggregate power sampled every `period`
/// seconds. The window must span at least `min_window` seconds.
pub fn baseline_power(samples: &[f64], period: f64, min_window: f64) -> Result<f64, SignalError> {
    let have = samples.len() as f64 * period;
    if samples.is_empty() || have < min_window {
        return Err(SignalError::InsufficientData { have, need: min_window });
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Knobs for the synthetic regulation trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRegD {
    /// Update period (s).
    pub step: f64,
    pub duration: f64,
    /// Time constant of each of the two cascaded low-pass stages (s).
    pub smoothing: f64,
    /// Window of the moving average subtracted to keep the trace
    /// energy-neutral (s).
    pub neutral_window: f64,
    pub seed: u64,
}

impl Default for SyntheticRegD {
    fn default() -> Self {
        Self { step: 2.0, duration: 7200.0, smoothing: 30.0, neutral_window: 600.0, seed: 2024 }
    }
}

/// Band-limited zero-mean trace in [-1, 1]: white noise through two
/// low-pass stages, minus its moving average, then normalised to unit peak.
pub fn synthetic_regd(cfg: &SyntheticRegD) -> Trace {
    let n = (cfg.duration / cfg.step).round() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = (-cfg.step / cfg.smoothing).exp();
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut raw = Vec::with_capacity(n);
    // Let the filters forget their zero start.
    let burn = (5.0 * cfg.smoothing / cfg.step).ceil() as usize;
    for k in 0..(n + burn) {
        let w: f64 = StandardNormal.sample(&mut rng);
        s1 = a * s1 + (1.0 - a) * w;
        s2 = a * s2 + (1.0 - a) * s1;
        if k >= burn {
            raw.push(s2);
        }
    }
    let half = ((cfg.neutral_window / cfg.step) / 2.0).round() as usize;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + raw[i];
    }
    let mut values: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            raw[i] - (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter_mut().for_each(|v| *v -= mean);
    let peak = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        values.iter_mut().for_each(|v| *v = (*v / peak).clamp(-1.0, 1.0));
    }
    Trace { times: (0..n).map(|k| k as f64 * cfg.step).collect(), values }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_amplitude_square_is_flat() {
        let s = square_wave(5.0, 0.0, 600.0, 1200.0, 2.0).unwrap();
        assert!(s.samples.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn square_wave_alternates_every_half_period() {
        let s = square_wave(1e6, 0.3, 600.0, 1200.0, 2.0).unwrap();
        assert_eq!(s.at(0.0), 1.3e6);
        assert_eq!(s.at(298.0), 1.3e6);
        assert_eq!(s.at(300.0), 0.7e6);
        assert_eq!(s.at(600.0), 1.3e6);
        assert!((s.mean() - 1e6).abs() < 1e-6);
    }

    #[test]
    fn trace_scaling() {
        let tr = Trace { times: vec![0.0, 10.0, 20.0], values: vec![0.0, 1.0, 0.0] };
        let s = trace_signal(&tr, 100.0, 0.2, 5.0, None);
        assert_eq!(s.samples[0], 100.0);
        assert!((s.samples[2] - 120.0).abs() < 1e-12);
        assert!((s.samples[1] - 110.0).abs() < 1e-12);
    }

    #[test]
    fn trace_reader_reports_line_numbers() {
        let bad = "time_s,value\n0,0.1\n2,abc\n";
        match Trace::read(bad.as_bytes()) {
            Err(SignalError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let backwards = "time_s,value\n0,0.1\n2,0.2\n1,0.3\n";
        match Trace::read(backwards.as_bytes()) {
            Err(SignalError::Malformed { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trace_round_trips_through_csv() {
        let tr = synthetic_regd(&SyntheticRegD { duration: 200.0, ..Default::default() });
        let mut buf = Vec::new();
        tr.write(&mut buf).unwrap();
        assert_eq!(Trace::read(buf.as_slice()).unwrap(), tr);
    }

    #[test]
    fn baseline_window_guard() {
        assert_eq!(baseline_power(&[7.0; 100], 2.0, 100.0).unwrap(), 7.0);
        assert!(matches!(baseline_power(&[7.0; 10], 2.0, 100.0), Err(SignalError::InsufficientData { .. })));
    }

    #[test]
    fn synthetic_trace_is_bounded_and_neutral() {
        let tr = synthetic_regd(&SyntheticRegD::default());
        assert!(tr.values.iter().all(|v| (-1.0..=1.0).contains(v)));
        let mean = tr.values.iter().sum::<f64>() / tr.values.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!(tr.values.iter().any(|v| (v.abs() - 1.0).abs() < 1e-12));
    }
}
