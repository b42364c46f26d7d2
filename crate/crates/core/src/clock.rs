//! A clock that is either the wall clock or a virtual counter.
//!
//! The kernel and the simulated cluster both take time from a [`SimClock`]
//! so that campaigns run in virtual time (instantaneous, deterministic)
//! while latency benchmarks run against the real clock with real sleeps.

use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    /// Time advances only via [`SimClock::advance`] / [`SimClock::sleep`].
    Virtual,
    /// Time is the process monotonic clock; sleeps really sleep.
    Real,
}

#[derive(Debug)]
pub struct SimClock {
    mode: ClockMode,
    virtual_us: AtomicI64,
    origin: Instant,
    origin_us: i64,
    logical: AtomicU64,
}

impl SimClock {
    /// A virtual clock starting at `start_us`.
    pub fn virtual_at(start_us: i64) -> Self {
        SimClock {
            mode: ClockMode::Virtual,
            virtual_us: AtomicI64::new(start_us),
            origin: Instant::now(),
            origin_us: start_us,
            logical: AtomicU64::new(0),
        }
    }

    /// A real-time clock whose `now_us` starts near `start_us`.
    pub fn real_at(start_us: i64) -> Self {
        SimClock {
            mode: ClockMode::Real,
            virtual_us: AtomicI64::new(start_us),
            origin: Instant::now(),
            origin_us: start_us,
            logical: AtomicU64::new(0),
        }
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn now_us(&self) -> i64 {
        match self.mode {
            ClockMode::Virtual => self.virtual_us.load(Ordering::SeqCst),
            ClockMode::Real => self.origin_us + self.origin.elapsed().as_micros() as i64,
        }
    }

    /// Advances a virtual clock; no-op on a real clock (real time cannot be
    /// pushed forward).
    pub fn advance(&self, by: Duration) {
        if self.mode == ClockMode::Virtual {
            self.virtual_us.fetch_add(by.as_micros() as i64, Ordering::SeqCst);
        }
    }

    /// Sleeps in real mode; advances the clock in virtual mode. Virtual
    /// sleeps assume a single time-driving thread — concurrent virtual
    /// sleepers would each push the clock forward.
    pub fn sleep(&self, dur: Duration) {
        match self.mode {
            ClockMode::Virtual => self.advance(dur),
            ClockMode::Real => std::thread::sleep(dur),
        }
    }

    /// Strictly increasing counter for ordering events that may share a
    /// timestamp (virtual time is coarse).
    pub fn tick_logical(&self) -> u64 {
        self.logical.fetch_add(1, Ordering::SeqCst)
    }
}
