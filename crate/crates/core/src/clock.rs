//! Time sources. Episodes measure durations through [`Clock`] so simulated
//! runs can be accelerated and replayed with identical timestamps.

use core::sync::atomic::{AtomicU64, Ordering};

pub trait Clock: Send + Sync {
    /// Seconds since an arbitrary epoch.
    fn now(&self) -> f64;

    /// Accounts for simulated work (an executed waypoint, a model call).
    /// Wall clocks ignore it.
    fn advance(&self, _seconds: f64) {}
}

/// Deterministic clock with microsecond resolution, advanced explicitly.
#[derive(Debug, Default)]
pub struct ManualClock {
    micros: AtomicU64,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(seconds: f64) -> Self {
        let clock = Self::new();
        clock.advance(seconds);
        clock
    }
}

impl Clock for ManualClock {
    fn now(&self) -> f64 {
        self.micros.load(Ordering::SeqCst) as f64 / 1e6
    }

    fn advance(&self, seconds: f64) {
        if seconds > 0.0 && seconds.is_finite() {
            let micros = libm::round(seconds * 1e6) as u64;
            self.micros.fetch_add(micros, Ordering::SeqCst);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manual_clock_accumulates() {
        let c = ManualClock::new();
        c.advance(1.5);
        c.advance(-3.0);
        c.advance(0.25);
        assert_eq!(c.now(), 1.75);
    }
}
