use std::time::{Duration, Instant};

use lora_serve_core::Clock;

/// Wall clock backed by [`Instant`], reading time since construction.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
    resolution: Duration,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self { origin: Instant::now(), resolution: measure_resolution() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn resolution(&self) -> Duration {
        self.resolution
    }
}

/// Smallest nonzero step observed between consecutive readings.
fn measure_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..16 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_and_fine_grained() {
        let c = MonotonicClock::new();
        let a = c.now();
        let b = c.now();
        assert!(b >= a);
        assert!(c.resolution() > Duration::ZERO);
        assert!(c.resolution() < Duration::from_millis(1));
    }
}
