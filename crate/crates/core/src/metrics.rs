//! Tracking-quality metrics.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("reference and response lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty record")]
    Empty,
    #[error("reference mean is zero; normalisation undefined")]
    ZeroMeanReference,
    #[error("record of {have} samples is shorter than the {need} required for scoring")]
    TooShort { have: usize, need: usize },
    #[error("need at least {need} houses for fairness groups, have {have}")]
    TooFewHouses { have: usize, need: usize },
}

/// Reference and achieved aggregate power at the control period.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingRecord {
    pub period: f64,
    pub reference: Vec<f64>,
    pub achieved: Vec<f64>,
}

impl TrackingRecord {
    pub fn new(period: f64) -> Self {
        Self { period, ..Default::default() }
    }

    pub fn push(&mut self, reference: f64, achieved: f64) {
        self.reference.push(reference);
        self.achieved.push(achieved);
    }

    fn check(&self) -> Result<(), MetricsError> {
        if self.reference.len() != self.achieved.len() {
            return Err(MetricsError::LengthMismatch(self.reference.len(), self.achieved.len()));
        }
        if self.reference.is_empty() {
            return Err(MetricsError::Empty);
        }
        Ok(())
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Root-mean-square tracking error over the reference mean.
pub fn nrmse(rec: &TrackingRecord) -> Result<f64, MetricsError> {
    rec.check()?;
    let m = mean(&rec.reference);
    if m == 0.0 {
        return Err(MetricsError::ZeroMeanReference);
    }
    let mse = rec.reference.iter().zip(&rec.achieved).map(|(r, a)| (a - r) * (a - r)).sum::<f64>()
        / rec.reference.len() as f64;
    Ok(mse.sqrt() / m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// Largest response delay searched (s).
    pub max_delay: f64,
    /// Minimum record length beyond `max_delay` (s).
    pub min_window: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { max_delay: 300.0, min_window: 300.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PjmScore {
    pub correlation: f64,
    pub delay: f64,
    pub precision: f64,
    /// Response delay at which correlation peaked (s).
    pub best_delay_s: f64,
}

impl PjmScore {
    pub fn composite(&self) -> f64 {
        (self.correlation + self.delay + self.precision) / 3.0
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Three-part regulation performance score: peak correlation of the
/// response against the reference over delays up to `max_delay`, a delay
/// score falling linearly to zero at `max_delay`, and precision
/// `1 - mean|error| / mean(reference)`. Each part is clamped to [0, 1].
pub fn pjm_score(rec: &TrackingRecord, cfg: &ScoreConfig) -> Result<PjmScore, MetricsError> {
    rec.check()?;
    let n = rec.reference.len();
    let max_lag = (cfg.max_delay / rec.period).round() as usize;
    let need = max_lag + (cfg.min_window / rec.period).round() as usize;
    if n < need {
        return Err(MetricsError::TooShort { have: n, need });
    }
    let m = mean(&rec.reference);
    if m == 0.0 {
        return Err(MetricsError::ZeroMeanReference);
    }
    if rec.reference == rec.achieved {
        return Ok(PjmScore { correlation: 1.0, delay: 1.0, precision: 1.0, best_delay_s: 0.0 });
    }

    let mut best = (f64::NEG_INFINITY, 0usize);
    for lag in 0..=max_lag {
        let r = &rec.reference[..n - lag];
        let a = &rec.achieved[lag..];
        let c = match pearson(r, a) {
            Some(c) => c,
            None => {
                if r == a {
                    1.0
                } else {
                    0.0
                }
            }
        };
        if c > best.0 + 1e-12 {
            best = (c, lag);
        }
    }
    let correlation = best.0.clamp(0.0, 1.0);
    let delay = if max_lag == 0 { 1.0 } else { (1.0 - best.1 as f64 / max_lag as f64).clamp(0.0, 1.0) };
    let mae = rec.reference.iter().zip(&rec.achieved).map(|(r, a)| (a - r).abs()).sum::<f64>() / n as f64;
    let precision = (1.0 - mae / m.abs()).clamp(0.0, 1.0);
    Ok(PjmScore { correlation, delay, precision, best_delay_s: best.1 as f64 * rec.period })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    /// Normalised tracking-error variance of the remote-plant group.
    pub remote_variance: f64,
    /// The same statistic for each random virtual group.
    pub virtual_variances: Vec<f64>,
    pub virtual_min: f64,
    pub virtual_max: f64,
    pub remote_inside_range: bool,
}

/// Tracking-error variance of a group's power scaled up to fleet size,
/// normalised by the squared reference mean.
pub fn group_variance(frames: &[Vec<f64>], reference: &[f64], members: &[usize]) -> f64 {
    let n_houses = frames.first().map_or(0, Vec::len) as f64;
    let scale = n_houses / members.len() as f64;
    let err: Vec<f64> =
        frames.iter().zip(reference).map(|(f, r)| scale * members.iter().map(|&i| f[i]).sum::<f64>() - r).collect();
    let me = mean(&err);
    let var = err.iter().map(|e| (e - me) * (e - me)).sum::<f64>() / err.len() as f64;
    let m = mean(reference);
    var / (m * m)
}

/// Compare the remote group's tracking variance with `n_groups` random
/// groups of `group_size` houses drawn from `virtual_pool`.
///
/// `frames[k][i]` is the power of house `i` at sample `k`.
pub fn fairness_variance(
    frames: &[Vec<f64>],
    reference: &[f64],
    remote: &[usize],
    virtual_pool: &[usize],
    group_size: usize,
    n_groups: usize,
    seed: u64,
) -> Result<FairnessReport, MetricsError> {
    if frames.len() != reference.len() {
        return Err(MetricsError::LengthMismatch(reference.len(), frames.len()));
    }
    if frames.is_empty() {
        return Err(MetricsError::Empty);
    }
    if virtual_pool.len() < group_size || frames[0].len() < 2 * group_size {
        return Err(MetricsError::TooFewHouses { have: frames[0].len(), need: 2 * group_size });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let virtual_variances: Vec<f64> = (0..n_groups)
        .map(|_| {
            let members: Vec<usize> =
                sample(&mut rng, virtual_pool.len(), group_size).into_iter().map(|k| virtual_pool[k]).collect();
            group_variance(frames, reference, &members)
        })
        .collect();
    let remote_variance = group_variance(frames, reference, remote);
    let virtual_min = virtual_variances.iter().copied().fold(f64::INFINITY, f64::min);
    let virtual_max = virtual_variances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(FairnessReport {
        remote_variance,
        remote_inside_range: virtual_min <= remote_variance && remote_variance <= virtual_max,
        virtual_variances,
        virtual_min,
        virtual_max,
    })
}
