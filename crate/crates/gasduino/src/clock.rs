//! Time sources for the node agent.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

/// Wall-clock and monotonic time plus the ability to wait.
pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn epoch_ms(&self) -> u64;
    /// Monotonic time since the clock was created.
    fn elapsed(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Clone)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

pub fn now_epoch_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl Clock for SystemClock {
    fn epoch_ms(&self) -> u64 {
        now_epoch_ms()
    }

    fn elapsed(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Virtual clock: `sleep` advances time instantly. Shared between clones.
#[derive(Debug, Clone)]
pub struct ManualClock {
    epoch_base_ms: u64,
    elapsed_us: Arc<AtomicU64>,
}

impl ManualClock {
    pub fn new(epoch_base_ms: u64) -> Self {
        ManualClock {
            epoch_base_ms,
            elapsed_us: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn advance(&self, d: Duration) {
        self.elapsed_us
            .fetch_add(d.as_micros() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn epoch_ms(&self) -> u64 {
        self.epoch_base_ms + self.elapsed_us.load(Ordering::SeqCst) / 1000
    }

    fn elapsed(&self) -> Duration {
        Duration::from_micros(self.elapsed_us.load(Ordering::SeqCst))
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

/// Cooperative stop flag; may be raised from any thread.
#[derive(Debug, Clone, Default)]
pub struct StopSignal(Arc<AtomicBool>);

impl StopSignal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn raise(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_raised(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

const SLEEP_SLICE: Duration = Duration::from_millis(50);

/// Sleeps until `clock.elapsed() >= target`, waking early if `stop` is raised.
/// Returns `false` if interrupted.
pub fn sleep_until(clock: &dyn Clock, target: Duration, stop: &StopSignal) -> bool {
    loop {
        if stop.is_raised() {
            return false;
        }
        let now = clock.elapsed();
        if now >= target {
            return true;
        }
        clock.sleep((target - now).min(SLEEP_SLICE));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manual_clock_advances_on_sleep() {
        let c = ManualClock::new(1_000);
        c.sleep(Duration::from_millis(250));
        assert_eq!(c.elapsed(), Duration::from_millis(250));
        assert_eq!(c.epoch_ms(), 1_250);
        let shared = c.clone();
        shared.advance(Duration::from_secs(1));
        assert_eq!(c.epoch_ms(), 2_250);
    }

    #[test]
    fn sleep_until_respects_stop() {
        let c = ManualClock::new(0);
        let stop = StopSignal::new();
        assert!(sleep_until(&c, Duration::from_secs(3), &stop));
        assert_eq!(c.elapsed(), Duration::from_secs(3));
        stop.raise();
        assert!(!sleep_until(&c, Duration::from_secs(10), &stop));
        assert_eq!(c.elapsed(), Duration::from_secs(3));
    }
}
