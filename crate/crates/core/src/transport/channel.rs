//! Lossy, latent point-to-point link with at-most-once delivery.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Drop probability per message, in `[0, 1)`.
    pub loss_probability: f64,
    pub latency_ms: f64,
    /// Half-width of the uniform jitter added to the latency.
    pub jitter_ms: f64,
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { loss_probability: 0.0, latency_ms: 5.0, jitter_ms: 0.0, seed: 0 }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.loss_probability) {
            return Err(Error::InvalidParameter(format!(
                "loss probability must be in [0, 1), got {}",
                self.loss_probability
            )));
        }
        if !(self.latency_ms >= 0.0 && self.latency_ms.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "latency must be >= 0 ms, got {}",
                self.latency_ms
            )));
        }
        if !(self.jitter_ms >= 0.0 && self.jitter_ms.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "jitter must be >= 0 ms, got {}",
                self.jitter_ms
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Dropped,
    /// Delivered at this virtual time, microseconds.
    At(u64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ChannelStats {
    pub sent: u64,
    pub dropped: u64,
}

/// One direction of the simulated network. Each transmission consumes the
/// same number of random draws whether or not it is dropped, so the
/// latency sequence does not depend on the loss pattern.
#[derive(Debug, Clone)]
pub struct Channel {
    config: ChannelConfig,
    rng: ChaCha8Rng,
    /// Loss applies only to sends inside `[start, end)`, microseconds.
    loss_window: Option<(u64, u64)>,
    stats: ChannelStats,
}

impl Channel {
    pub fn new(config: ChannelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            loss_window: None,
            stats: ChannelStats::default(),
        })
    }

    /// Restrict packet loss to sends in `[start_us, end_us)`.
    pub fn with_loss_window(mut self, start_us: u64, end_us: u64) -> Self {
        self.loss_window = Some((start_us, end_us));
        self
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    pub fn transmit(&mut self, send_us: u64) -> Delivery {
        let loss_draw: f64 = self.rng.random();
        let jitter_us = (self.config.jitter_ms * 1000.0).round() as i64;
        let jitter = if jitter_us > 0 {
            self.rng.random_range(-jitter_us..=jitter_us)
        } else {
            let _: u64 = self.rng.random();
            0
        };
        self.stats.sent += 1;
        let lossy = self
            .loss_window
            .is_none_or(|(start, end)| (start..end).contains(&send_us));
        if lossy && loss_draw < self.config.loss_probability {
            self.stats.dropped += 1;
            return Delivery::Dropped;
        }
        let latency_us = (self.config.latency_ms * 1000.0).round() as i64;
        let at = send_us as i64 + latency_us + jitter;
        Delivery::At(at.max(send_us as i64) as u64)
    }
}

/// Send a single message through a fresh channel built from `config`.
pub fn channel_deliver(config: &ChannelConfig, send_us: u64) -> Result<Delivery> {
    Ok(Channel::new(*config)?.transmit(send_us))
}
