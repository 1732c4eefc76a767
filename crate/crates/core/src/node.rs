//! Node-side pieces that do not touch a socket: configuration, the bounded
//! send buffer, reconnect backoff, the sampling schedule and the frame
//! producer that turns sensor readings into classified telemetry.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;

use libm::round;
use rand::Rng;
use thiserror::Error;

use crate::sensor::{adc_to_ppm, AmbientProfile, Sampler, SensorCurve, SensorError};
use crate::wire::{Frame, Telemetry};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("interval_ms must be positive")]
    Interval,
    #[error("time_scale must be >= 1, got {0}")]
    TimeScale(f64),
    #[error("buffer_capacity must be >= 1")]
    BufferCapacity,
    #[error("backoff base {base} ms exceeds cap {cap} ms")]
    Backoff { base: u64, cap: u64 },
    #[error("backoff jitter must lie in [0, 1], got {0}")]
    Jitter(f64),
    #[error(transparent)]
    Sensor(#[from] SensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub node_id: u16,
    /// `host:port` of the ingestion listener.
    pub server_address: String,
    /// Sampling period in simulated milliseconds.
    pub interval_ms: u64,
    /// Simulated seconds per real second.
    pub time_scale: f64,
    pub buffer_capacity: usize,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
    pub backoff_jitter: f64,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            node_id: 1,
            server_address: String::from("127.0.0.1:7474"),
            interval_ms: 1000,
            time_scale: 1.0,
            buffer_capacity: 1024,
            backoff_base_ms: 500,
            backoff_cap_ms: 30_000,
            backoff_jitter: 0.1,
        }
    }
}

impl NodeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.interval_ms == 0 {
            return Err(ConfigError::Interval);
        }
        if !(self.time_scale.is_finite() && self.time_scale >= 1.0) {
            return Err(ConfigError::TimeScale(self.time_scale));
        }
        if self.buffer_capacity == 0 {
            return Err(ConfigError::BufferCapacity);
        }
        if self.backoff_base_ms > self.backoff_cap_ms {
            return Err(ConfigError::Backoff {
                base: self.backoff_base_ms,
                cap: self.backoff_cap_ms,
            });
        }
        if !(0.0..=1.0).contains(&self.backoff_jitter) {
            return Err(ConfigError::Jitter(self.backoff_jitter));
        }
        Ok(())
    }

    /// Number of samples taken over `duration_ms` of simulated time.
    pub fn tick_count(&self, duration_ms: u64) -> u64 {
        duration_ms / self.interval_ms
    }

    /// Simulated offset of tick `k` from the start of the run.
    pub fn tick_sim_ms(&self, k: u64) -> u64 {
        k * self.interval_ms
    }

    /// Real-time offset of tick `k`, in (fractional) milliseconds.
    pub fn tick_real_ms(&self, k: u64) -> f64 {
        self.tick_sim_ms(k) as f64 / self.time_scale
    }
}

/// Reconnect delay for the given attempt: exponential, capped, then jittered.
pub fn backoff_delay<R: Rng + ?Sized>(attempt: u32, config: &NodeConfig, rng: &mut R) -> u64 {
    let exp = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
    let base = config
        .backoff_base_ms
        .saturating_mul(exp)
        .min(config.backoff_cap_ms);
    let jitter = config.backoff_jitter;
    if jitter <= 0.0 {
        return base;
    }
    let factor = rng.random_range((1.0 - jitter)..=(1.0 + jitter));
    round(base as f64 * factor) as u64
}

/// Bounded FIFO of encoded frames that evicts the oldest entry when full.
#[derive(Debug, Clone)]
pub struct SendBuffer {
    frames: VecDeque<Vec<u8>>,
    capacity: usize,
    dropped: u64,
}

impl SendBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "send buffer needs room for one frame");
        SendBuffer {
            frames: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
            dropped: 0,
        }
    }

    /// Queues a frame, returning the evicted one if the buffer was full.
    pub fn push(&mut self, frame: Vec<u8>) -> Option<Vec<u8>> {
        let evicted = if self.frames.len() == self.capacity {
            self.dropped += 1;
            self.frames.pop_front()
        } else {
            None
        };
        self.frames.push_back(frame);
        evicted
    }

    pub fn front(&self) -> Option<&[u8]> {
        self.frames.front().map(Vec::as_slice)
    }

    pub fn pop_front(&mut self) -> Option<Vec<u8>> {
        self.frames.pop_front()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

/// Samples the sensor and wraps each reading in a telemetry frame with the
/// next sequence number.
#[derive(Debug, Clone)]
pub struct FrameProducer {
    node_id: u16,
    sampler: Sampler,
    next_seq: u32,
}

/// A telemetry frame together with the PPM it was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Produced {
    pub frame: Frame,
    pub ppm: f64,
}

impl FrameProducer {
    pub fn new(
        node_id: u16,
        profile: AmbientProfile,
        curve: SensorCurve,
    ) -> Result<Self, SensorError> {
        Ok(FrameProducer {
            node_id,
            sampler: Sampler::new(profile, curve)?,
            next_seq: 0,
        })
    }

    pub fn curve(&self) -> &SensorCurve {
        self.sampler.curve()
    }

    pub fn next_seq(&self) -> u32 {
        self.next_seq
    }

    /// Samples at `t_s` simulated seconds and stamps the frame with `ts_ms`.
    ///
    /// A reading that the forward chain cannot decode (saturated divider)
    /// is returned as an error and does not consume a sequence number.
    pub fn produce(&mut self, t_s: f64, ts_ms: u64) -> Result<Produced, SensorError> {
        let reading = self.sampler.sample(t_s);
        let ppm = adc_to_ppm(reading.raw, self.sampler.curve())?;
        let centi = round(ppm * 100.0);
        if !(0.0..=f64::from(u32::MAX)).contains(&centi) {
            return Err(SensorError::Domain(ppm));
        }
        let payload = Telemetry::classified(reading.raw, centi as u32);
        let frame = Frame::telemetry(self.node_id, self.next_seq, ts_ms, payload);
        self.next_seq = self.next_seq.wrapping_add(1);
        Ok(Produced { frame, ppm })
    }
}
