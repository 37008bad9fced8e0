//! Field-network impairment between aggregator and devices: random delay
//! and packet loss. Payloads are never altered.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelMode {
    Perfect,
    Impaired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub mode: ChannelMode,
    pub delay_mean: f64,
    pub delay_std: f64,
    pub loss_rate_min: f64,
    pub loss_rate_max: f64,
    pub rng_seed: u64,
    /// Draw a fresh loss rate for every message instead of once per run.
    pub redraw_loss_per_message: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid channel model: {0}")]
pub struct ChannelError(String);

impl ChannelModel {
    pub fn perfect() -> Self {
        Self {
            mode: ChannelMode::Perfect,
            delay_mean: 0.0,
            delay_std: 0.0,
            loss_rate_min: 0.0,
            loss_rate_max: 0.0,
            rng_seed: 0,
            redraw_loss_per_message: false,
        }
    }

    /// 18 ± 3 s normally distributed delay and 5–10 % loss.
    pub fn impaired(rng_seed: u64) -> Self {
        Self {
            mode: ChannelMode::Impaired,
            delay_mean: 18.0,
            delay_std: 3.0,
            loss_rate_min: 0.05,
            loss_rate_max: 0.10,
            rng_seed,
            redraw_loss_per_message: false,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(0.0 <= self.loss_rate_min && self.loss_rate_min <= self.loss_rate_max && self.loss_rate_max <= 1.0) {
            return Err(ChannelError("need 0 <= loss_rate_min <= loss_rate_max <= 1".into()));
        }
        if !(self.delay_std >= 0.0 && self.delay_mean.is_finite()) {
            return Err(ChannelError("delay_std must be >= 0 and delay_mean finite".into()));
        }
        Ok(())
    }
}

/// A seeded realisation of a [`ChannelModel`].
#[derive(Debug, Clone)]
pub struct Channel {
    model: ChannelModel,
    rng: ChaCha8Rng,
    delay: Normal<f64>,
    loss_rate: f64,
}

impl Channel {
    pub fn new(model: ChannelModel) -> Result<Self, ChannelError> {
        model.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.rng_seed);
        let loss_rate = draw_loss(&mut rng, &model);
        let delay = Normal::new(model.delay_mean, model.delay_std).map_err(|e| ChannelError(e.to_string()))?;
        Ok(Self { model, rng, delay, loss_rate })
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    /// Loss probability drawn for this run.
    pub fn loss_rate(&self) -> f64 {
        self.loss_rate
    }

    /// Decide the fate of one message: `None` if dropped, otherwise the
    /// delivery time.
    pub fn transmit(&mut self, send_time: f64) -> Option<f64> {
        match self.model.mode {
            ChannelMode::Perfect => Some(send_time),
            ChannelMode::Impaired => {
                let p = if self.model.redraw_loss_per_message {
                    draw_loss(&mut self.rng, &self.model)
                } else {
                    self.loss_rate
                };
                let lost = self.rng.random_bool(p);
                // Always consume the delay draw so the stream does not depend
                // on which messages were lost.
                let d = self.delay.sample(&mut self.rng).max(0.0);
                (!lost).then_some(send_time + d)
            }
        }
    }
}

fn draw_loss(rng: &mut ChaCha8Rng, m: &ChannelModel) -> f64 {
    if m.loss_rate_max > m.loss_rate_min {
        rng.random_range(m.loss_rate_min..=m.loss_rate_max)
    } else {
        m.loss_rate_min
    }
}

struct Pending<M> {
    at: f64,
    order: u64,
    msg: M,
}

impl<M> PartialEq for Pending<M> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<M> Eq for Pending<M> {}
impl<M> PartialOrd for Pending<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<M> Ord for Pending<M> {
    // Reversed so the max-heap pops the earliest delivery first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.total_cmp(&self.at).then_with(|| other.order.cmp(&self.order))
    }
}

/// Messages in flight, released in delivery-time order (ties by send order).
pub struct InFlight<M> {
    heap: BinaryHeap<Pending<M>>,
    sent: u64,
}

impl<M> Default for InFlight<M> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), sent: 0 }
    }
}

impl<M> InFlight<M> {
    pub fn push(&mut self, msg: M, deliver_at: f64) {
        self.heap.push(Pending { at: deliver_at, order: self.sent, msg });
        self.sent += 1;
    }

    /// Everything due at or before `now`.
    pub fn drain_due(&mut self, now: f64) -> Vec<(M, f64)> {
        let mut out = Vec::new();
        while self.heap.peek().is_some_and(|p| p.at <= now + 1e-9) {
            let p = self.heap.pop().unwrap();
            out.push((p.msg, p.at));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// A channel together with its in-flight queue.
pub struct Link<M> {
    pub channel: Channel,
    pub queue: InFlight<M>,
    pub dropped: u64,
    pub delivered: u64,
}

impl<M> Link<M> {
    pub fn new(model: ChannelModel) -> Result<Self, ChannelError> {
        Ok(Self { channel: Channel::new(model)?, queue: InFlight::default(), dropped: 0, delivered: 0 })
    }

    pub fn send(&mut self, msg: M, send_time: f64) {
        match self.channel.transmit(send_time) {
            Some(at) => self.queue.push(msg, at),
            None => self.dropped += 1,
        }
    }

    pub fn receive(&mut self, now: f64) -> Vec<(M, f64)> {
        let out = self.queue.drain_due(now);
        self.delivered += out.len() as u64;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_channel_is_identity() {
        let mut c = Channel::new(ChannelModel::perfect()).unwrap();
        for k in 0..100 {
            assert_eq!(c.transmit(k as f64), Some(k as f64));
        }
    }

    #[test]
    fn total_loss_delivers_nothing() {
        let mut m = ChannelModel::impaired(1);
        m.loss_rate_min = 1.0;
        m.loss_rate_max = 1.0;
        let mut c = Channel::new(m).unwrap();
        assert!((0..1000).all(|k| c.transmit(k as f64).is_none()));
    }

    #[test]
    fn rejects_inverted_loss_band() {
        let mut m = ChannelModel::impaired(1);
        m.loss_rate_min = 0.2;
        m.loss_rate_max = 0.1;
        assert!(Channel::new(m).is_err());
    }

    #[test]
    fn delays_never_negative() {
        let mut m = ChannelModel::impaired(3);
        m.delay_mean = 0.5;
        m.delay_std = 2.0;
        let mut c = Channel::new(m).unwrap();
        for _ in 0..10_000 {
            if let Some(at) = c.transmit(100.0) {
                assert!(at >= 100.0);
            }
        }
    }

    #[test]
    fn queue_releases_in_time_order() {
        let mut q = InFlight::default();
        q.push("late", 5.0);
        q.push("early", 1.0);
        q.push("tie-first", 3.0);
        q.push("tie-second", 3.0);
        assert!(q.drain_due(0.5).is_empty());
        let got: Vec<_> = q.drain_due(10.0).into_iter().map(|(m, _)| m).collect();
        assert_eq!(got, ["early", "tie-first", "tie-second", "late"]);
    }
}
