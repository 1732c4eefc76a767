//! Simulated sensor node: samples on a fixed schedule, classifies each
//! reading locally and streams telemetry frames, buffering while the link is
//! down and reconnecting with capped exponential backoff.

use std::io::{Read, Write};
use std::time::Duration;

use gasduino_core::node::{backoff_delay, ConfigError, FrameProducer, NodeConfig, SendBuffer};
use gasduino_core::sensor::{AmbientProfile, SensorCurve, SensorError};
use gasduino_core::wire::{self, Frame, FrameBody, ACK_LEN};
use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::clock::{sleep_until, Clock, StopSignal};
use crate::transport::Connector;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid node configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid sensor setup: {0}")]
    Sensor(#[from] SensorError),
}

/// Counters reported when a run ends.
///
/// At any quiescent point `sampled == sent + dropped + buffered`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub sampled: u64,
    pub sent: u64,
    pub dropped: u64,
    pub buffered: u64,
    pub reconnects: u64,
    /// Readings the forward chain could not decode; no frame was produced.
    pub sensor_faults: u64,
}

pub struct NodeAgent<K: Connector, C: Clock> {
    config: NodeConfig,
    adc_bits: u8,
    producer: FrameProducer,
    buffer: SendBuffer,
    connector: K,
    link: Option<K::Link>,
    clock: C,
    rng: ChaCha8Rng,
    attempt: u32,
    next_connect: Duration,
    had_failure: bool,
    summary: RunSummary,
}

impl<K: Connector, C: Clock> NodeAgent<K, C> {
    pub fn new(
        config: NodeConfig,
        profile: AmbientProfile,
        curve: SensorCurve,
        connector: K,
        clock: C,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        curve.validate()?;
        let seed = profile.seed() ^ (u64::from(config.node_id) << 32) ^ 0x0062_6163_6b6f_6666;
        Ok(NodeAgent {
            adc_bits: curve.adc_bits,
            producer: FrameProducer::new(config.node_id, profile, curve)?,
            buffer: SendBuffer::new(config.buffer_capacity),
            connector,
            link: None,
            clock,
            rng: ChaCha8Rng::seed_from_u64(seed),
            attempt: 0,
            next_connect: Duration::ZERO,
            had_failure: false,
            summary: RunSummary::default(),
            config,
        })
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            dropped: self.buffer.dropped(),
            buffered: self.buffer.len() as u64,
            ..self.summary
        }
    }

    pub fn connector(&self) -> &K {
        &self.connector
    }

    /// Runs for `duration_ms` of simulated time, or until `stop` is raised
    /// when no duration is given. Always ends with a best-effort flush.
    pub fn run(&mut self, duration_ms: Option<u64>, stop: &StopSignal) -> RunSummary {
        let ticks = duration_ms.map(|d| self.config.tick_count(d));
        let start = self.clock.elapsed();
        let start_epoch = self.clock.epoch_ms();
        let mut k: u64 = 0;
        while ticks.is_none_or(|n| k < n) {
            let due = start + Duration::from_secs_f64(self.config.tick_real_ms(k) / 1000.0);
            if !sleep_until(&self.clock, due, stop) {
                break;
            }
            let sim_ms = self.config.tick_sim_ms(k);
            self.tick(sim_ms as f64 / 1000.0, start_epoch + sim_ms);
            k += 1;
            if stop.is_raised() {
                break;
            }
        }
        self.final_flush();
        self.link = None;
        let summary = self.summary();
        info!(
            "node {} finished: sampled={} sent={} dropped={} buffered={} reconnects={}",
            self.config.node_id,
            summary.sampled,
            summary.sent,
            summary.dropped,
            summary.buffered,
            summary.reconnects
        );
        summary
    }

    /// One sampling step: produce, enqueue, then service the link.
    ///
    /// A due reconnect is attempted before sampling so a recovered link
    /// drains the backlog before the new reading can evict anything.
    pub fn tick(&mut self, t_s: f64, ts_ms: u64) {
        if self.link.is_none() {
            self.service_link();
        }
        match self.producer.produce(t_s, ts_ms) {
            Ok(out) => {
                let bytes = wire::encode(&out.frame, self.adc_bits)
                    .expect("producer frames satisfy the frame invariants");
                self.summary.sampled += 1;
                if self.buffer.push(bytes).is_some() {
                    debug!(
                        "node {}: buffer full, dropped oldest frame",
                        self.config.node_id
                    );
                }
            }
            Err(e) => {
                self.summary.sensor_faults += 1;
                warn!(
                    "node {}: sensor fault at t={t_s}s: {e}",
                    self.config.node_id
                );
            }
        }
        self.service_link();
    }

    fn service_link(&mut self) {
        if self.link.is_none() && self.clock.elapsed() >= self.next_connect {
            self.try_connect();
        }
        if self.link.is_some() {
            self.flush_buffer();
        }
    }

    fn link_failed(&mut self, why: &dyn std::fmt::Display) {
        self.link = None;
        self.had_failure = true;
        let delay = backoff_delay(self.attempt, &self.config, &mut self.rng);
        self.attempt = self.attempt.saturating_add(1);
        self.next_connect = self.clock.elapsed() + Duration::from_millis(delay);
        debug!(
            "node {}: link down ({why}); retry in {delay} ms",
            self.config.node_id
        );
    }

    fn try_connect(&mut self) {
        let result = self
            .connector
            .connect()
            .and_then(|link| self.handshake(link));
        match result {
            Ok(link) => {
                if self.had_failure {
                    self.summary.reconnects += 1;
                }
                self.attempt = 0;
                self.link = Some(link);
                debug!("node {}: connected", self.config.node_id);
            }
            Err(e) => self.link_failed(&e),
        }
    }

    /// Sends Hello carrying the next seq to be delivered and waits for the Ack.
    fn handshake(&mut self, mut link: K::Link) -> std::io::Result<K::Link> {
        let next_seq = match self.buffer.front() {
            Some(bytes) => u32::from_be_bytes(bytes[6..10].try_into().unwrap()),
            None => self.producer.next_seq(),
        };
        let hello = Frame::hello(self.config.node_id, next_seq, self.clock.epoch_ms());
        link.write_all(&wire::encode(&hello, self.adc_bits).expect("hello encodes"))?;
        link.flush()?;
        let mut ack = [0u8; ACK_LEN];
        link.read_exact(&mut ack)?;
        match wire::decode_frame(&ack) {
            Ok((
                Frame {
                    node_id,
                    body: FrameBody::Ack,
                    ..
                },
                _,
            )) if node_id == self.config.node_id => Ok(link),
            Ok((other, _)) => Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("unexpected handshake reply {other:?}"),
            )),
            Err(e) => Err(std::io::Error::new(std::io::ErrorKind::InvalidData, e)),
        }
    }

    fn flush_buffer(&mut self) {
        let Some(link) = self.link.as_mut() else {
            return;
        };
        let mut failure = None;
        while let Some(bytes) = self.buffer.front() {
            if let Err(e) = link.write_all(bytes) {
                failure = Some(e);
                break;
            }
            self.buffer.pop_front();
            self.summary.sent += 1;
        }
        if failure.is_none() {
            if let Err(e) = link.flush() {
                failure = Some(e);
            }
        }
        if let Some(e) = failure {
            self.link_failed(&e);
        }
    }

    fn final_flush(&mut self) {
        if self.buffer.is_empty() {
            return;
        }
        let window = backoff_delay(self.attempt, &self.config, &mut self.rng);
        let deadline = self.clock.elapsed() + Duration::from_millis(window);
        let never = StopSignal::new();
        loop {
            self.service_link();
            if self.buffer.is_empty() || self.clock.elapsed() >= deadline {
                break;
            }
            sleep_until(&self.clock, self.next_connect.min(deadline), &never);
        }
    }
}

/// Builds a [`NodeAgent`] and runs it to completion.
pub fn run<K: Connector, C: Clock>(
    config: NodeConfig,
    profile: AmbientProfile,
    curve: SensorCurve,
    connector: K,
    clock: C,
    duration_ms: Option<u64>,
    stop: &StopSignal,
) -> Result<RunSummary, AgentError> {
    let mut agent = NodeAgent::new(config, profile, curve, connector, clock)?;
    Ok(agent.run(duration_ms, stop))
}
