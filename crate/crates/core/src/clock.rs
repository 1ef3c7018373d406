//! Clock seam shared by every component.
//!
//! In deterministic mode all components observe one [`SimClock`]; nothing
//! reads wall time. [`WallClock`] backs the real-time mode.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

/// Source of the current time in seconds.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;

    /// Accounts for `dt` seconds spent by the caller (message latency,
    /// processing). Wall clocks advance on their own and ignore this.
    fn advance(&self, dt: f64);
}

/// Monotone simulated clock. Cloning shares the underlying time.
#[derive(Debug, Clone, Default)]
pub struct SimClock {
    bits: Arc<AtomicU64>,
}

impl SimClock {
    pub fn new(start: f64) -> Self {
        Self {
            bits: Arc::new(AtomicU64::new(start.to_bits())),
        }
    }

    /// Moves the clock forward to `t`. Earlier times are ignored so the
    /// clock never runs backwards.
    pub fn advance_to(&self, t: f64) {
        let mut cur = self.bits.load(Ordering::Acquire);
        loop {
            if f64::from_bits(cur) >= t {
                return;
            }
            match self
                .bits
                .compare_exchange(cur, t.to_bits(), Ordering::AcqRel, Ordering::Acquire)
            {
                Ok(_) => return,
                Err(actual) => cur = actual,
            }
        }
    }
}

impl Clock for SimClock {
    fn now(&self) -> f64 {
        f64::from_bits(self.bits.load(Ordering::Acquire))
    }

    fn advance(&self, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        let mut cur = self.bits.load(Ordering::Acquire);
        loop {
            let next = (f64::from_bits(cur) + dt).to_bits();
            match self
                .bits
                .compare_exchange(cur, next, Ordering::AcqRel, Ordering::Acquire)
            {
                Ok(_) => return,
                Err(actual) => cur = actual,
            }
        }
    }
}

/// Seconds elapsed since construction, read from the OS monotonic clock.
#[derive(Debug, Clone)]
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn advance(&self, _dt: f64) {}
}
