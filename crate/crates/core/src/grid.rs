//! Distribution transformer loading. Active power only: houses are grouped
//! under transformers and each transformer's loading is tracked against its
//! rating.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::house::HouseId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("house {0} is not part of the fleet")]
    UnknownHouse(HouseId),
    #[error("house {0} is assigned to more than one transformer")]
    DuplicateHouse(HouseId),
    #[error("house {0} is not assigned to any transformer")]
    Unassigned(HouseId),
    #[error("frame has {got} houses, expected {expected}")]
    FrameSize { expected: usize, got: usize },
    #[error("invalid grid parameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub id: usize,
    /// 1.0 p.u. (W).
    pub rating: f64,
    pub houses: Vec<HouseId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignmentRule {
    /// Shuffle, then deal round-robin: sizes differ by at most one.
    Uniform,
    /// Each house picks a transformer independently at random.
    Random,
}

/// Partition houses across `n_transformers`. Ratings start at zero; size
/// them with [`size_ratings`].
pub fn assign_houses(
    houses: &[HouseId],
    n_transformers: usize,
    rule: AssignmentRule,
    seed: u64,
) -> Result<Vec<TransformerSpec>, GridError> {
    if n_transformers == 0 {
        return Err(GridError::Invalid("need at least one transformer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs: Vec<TransformerSpec> =
        (0..n_transformers).map(|id| TransformerSpec { id, rating: 0.0, houses: Vec::new() }).collect();
    match rule {
        AssignmentRule::Uniform => {
            let mut order = houses.to_vec();
            order.shuffle(&mut rng);
            for (k, h) in order.into_iter().enumerate() {
                specs[k % n_transformers].houses.push(h);
            }
        }
        AssignmentRule::Random => {
            for &h in houses {
                specs[rng.random_range(0..n_transformers)].houses.push(h);
            }
        }
    }
    for s in &mut specs {
        s.houses.sort();
    }
    Ok(specs)
}

/// Set each rating so that `peak[i]` (observed uncontrolled peak, W) lands
/// at `headroom` p.u. Transformers without load get a nominal 1 W rating.
pub fn size_ratings(specs: &mut [TransformerSpec], peak: &[f64], headroom: f64) {
    for (s, &p) in specs.iter_mut().zip(peak) {
        s.rating = if p > 0.0 { p / headroom } else { 1.0 };
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformerStats {
    pub max_consecutive_overload_s: f64,
    pub peak_loading_pu: f64,
    pub overload_sample_count: u64,
    /// Frames in which two or more houses on this transformer started.
    pub simultaneous_inrush_count: u64,
    pub inrush_events: u64,
    pub peak_inrush_w: f64,
    current_overload_s: f64,
}

impl TransformerStats {
    pub fn current_overload_s(&self) -> f64 {
        self.current_overload_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverloadReport {
    pub transformers: Vec<TransformerStats>,
    /// Longest overload run on any transformer (s).
    pub max_consecutive_overload_s: f64,
    pub peak_loading_pu: f64,
}

/// Running overload accounting over telemetry frames.
#[derive(Debug, Clone)]
pub struct GridMonitor {
    specs: Vec<TransformerSpec>,
    /// Fleet index of each house, per transformer.
    members: Vec<Vec<usize>>,
    stats: Vec<TransformerStats>,
    n_houses: usize,
}

impl GridMonitor {
    /// `fleet_ids[i]` is the id of the house whose power appears at index
    /// `i` of each frame.
    pub fn new(specs: Vec<TransformerSpec>, fleet_ids: &[HouseId]) -> Result<Self, GridError> {
        let index: HashMap<HouseId, usize> = fleet_ids.iter().enumerate().map(|(i, &h)| (h, i)).collect();
        let mut seen = vec![false; fleet_ids.len()];
        let mut members = Vec::with_capacity(specs.len());
        for s in &specs {
            if !(s.rating > 0.0) {
                return Err(GridError::Invalid(format!("transformer {} has rating {}", s.id, s.rating)));
            }
            let mut m = Vec::with_capacity(s.houses.len());
            for h in &s.houses {
                let &i = index.get(h).ok_or(GridError::UnknownHouse(*h))?;
                if std::mem::replace(&mut seen[i], true) {
                    return Err(GridError::DuplicateHouse(*h));
                }
                m.push(i);
            }
            members.push(m);
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(GridError::Unassigned(fleet_ids[i]));
        }
        let stats = vec![TransformerStats::default(); specs.len()];
        Ok(Self { specs, members, stats, n_houses: fleet_ids.len() })
    }

    pub fn specs(&self) -> &[TransformerSpec] {
        &self.specs
    }

    /// Sum of house powers under each transformer (W).
    pub fn transformer_power(&self, power: &[f64]) -> Result<Vec<f64>, GridError> {
        if power.len() != self.n_houses {
            return Err(GridError::FrameSize { expected: self.n_houses, got: power.len() });
        }
        Ok(self.members.iter().map(|m| m.iter().map(|&i| power[i]).sum()).collect())
    }

    /// Fold one frame of length `dt` into the statistics and return the
    /// per-transformer loading in p.u. `inrush_peaks[i]` is the peak of a
    /// start of house `i` during the frame, if any.
    pub fn update(&mut self, power: &[f64], inrush_peaks: &[Option<f64>], dt: f64) -> Result<Vec<f64>, GridError> {
        let per = self.transformer_power(power)?;
        let mut loading = Vec::with_capacity(per.len());
        for ((p, spec), (st, m)) in per.iter().zip(&self.specs).zip(self.stats.iter_mut().zip(&self.members)) {
            let pu = p / spec.rating;
            loading.push(pu);
            st.peak_loading_pu = st.peak_loading_pu.max(pu);
            if pu > 1.0 {
                st.current_overload_s += dt;
                st.overload_sample_count += 1;
                st.max_consecutive_overload_s = st.max_consecutive_overload_s.max(st.current_overload_s);
            } else {
                st.current_overload_s = 0.0;
            }
            let mut starts = 0;
            for &i in m {
                if let Some(peak) = inrush_peaks.get(i).copied().flatten() {
                    starts += 1;
                    st.peak_inrush_w = st.peak_inrush_w.max(peak);
                }
            }
            st.inrush_events += starts;
            if starts >= 2 {
                st.simultaneous_inrush_count += 1;
            }
        }
        Ok(loading)
    }

    pub fn report(&self) -> OverloadReport {
        OverloadReport {
            max_consecutive_overload_s: self.stats.iter().map(|s| s.max_consecutive_overload_s).fold(0.0, f64::max),
            peak_loading_pu: self.stats.iter().map(|s| s.peak_loading_pu).fold(0.0, f64::max),
            transformers: self.stats.clone(),
        }
    }
}
