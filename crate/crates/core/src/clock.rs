//! Monotonic time source abstraction.

use core::cell::Cell;
use core::time::Duration;

/// A monotonic clock. The std companion crate provides a wall-clock
/// implementation; tests use [`ManualClock`].
pub trait Clock {
    /// Time elapsed since an arbitrary fixed origin.
    fn now(&self) -> Duration;

    /// Smallest duration this clock can distinguish.
    fn resolution(&self) -> Duration {
        Duration::from_nanos(1)
    }
}

impl<C: Clock + ?Sized> Clock for &C {
    fn now(&self) -> Duration {
        (**self).now()
    }
    fn resolution(&self) -> Duration {
        (**self).resolution()
    }
}

/// Measures the wall time of `f` on `clock`.
pub fn timed<C: Clock + ?Sized, R>(clock: &C, f: impl FnOnce() -> R) -> (R, Duration) {
    let start = clock.now();
    let out = f();
    (out, clock.now().saturating_sub(start))
}

/// Deterministic clock that advances by a fixed step on every reading.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: Cell<Duration>,
    step: Duration,
}

impl ManualClock {
    pub fn new(step: Duration) -> Self {
        Self { now: Cell::new(Duration::ZERO), step }
    }

    pub fn advance(&self, by: Duration) {
        self.now.set(self.now.get() + by);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        let t = self.now.get();
        self.now.set(t + self.step);
        t
    }
}
