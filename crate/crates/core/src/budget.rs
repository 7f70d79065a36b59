//! Time sources and stall detection shared by the engines.
//!
//! Nothing in this crate reads the system clock. Wall-clock budgets go
//! through [`Clock`]; deterministic runs use [`NoClock`] and count
//! executions or solver calls instead.

/// Monotonic millisecond clock.
pub trait Clock {
    fn now_ms(&self) -> u64;
}

/// A clock that never advances, for count-bounded runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_ms(&self) -> u64 {
        0
    }
}

impl<C: Clock + ?Sized> Clock for &C {
    fn now_ms(&self) -> u64 {
        (**self).now_ms()
    }
}

/// What a stall check interval is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Meter {
    /// Engine work units: executions for the fuzzer, solver calls for the
    /// concolic engine.
    Work,
    Millis,
}

/// Stop after `checks` consecutive quiet checks spaced `interval` apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StallSpec {
    pub interval: u64,
    pub checks: u32,
    pub meter: Meter,
}

impl StallSpec {
    pub fn monitor(&self, work_start: u64, clock_start: u64) -> StallMonitor {
        let start = match self.meter {
            Meter::Work => work_start,
            Meter::Millis => clock_start,
        };
        StallMonitor::new(start, self.interval, self.checks)
    }

    pub fn reading(&self, work: u64, clock: &dyn Clock) -> u64 {
        match self.meter {
            Meter::Work => work,
            Meter::Millis => clock.now_ms(),
        }
    }
}

/// Ends a phase after `checks` consecutive progress checks, spaced
/// `interval` units apart, saw no progress. Units are whatever the caller
/// feeds to [`StallMonitor::poll`]: executions, solves or milliseconds.
#[derive(Debug, Clone)]
pub struct StallMonitor {
    interval: u64,
    checks: u32,
    next_check: u64,
    quiet_checks: u32,
    progressed: bool,
}

impl StallMonitor {
    pub fn new(start: u64, interval: u64, checks: u32) -> Self {
        let interval = interval.max(1);
        StallMonitor { interval, checks: checks.max(1), next_check: start + interval, quiet_checks: 0, progressed: false }
    }

    pub fn note_progress(&mut self) {
        self.progressed = true;
    }

    /// Runs any checks due at `now`; true once the stall limit is reached.
    pub fn poll(&mut self, now: u64) -> bool {
        while now >= self.next_check {
            if self.progressed {
                self.quiet_checks = 0;
            } else {
                self.quiet_checks += 1;
            }
            self.progressed = false;
            self.next_check += self.interval;
            if self.quiet_checks >= self.checks {
                return true;
            }
        }
        false
    }

    pub fn quiet_checks(&self) -> u32 {
        self.quiet_checks
    }
}
