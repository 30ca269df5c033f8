use core::time::Duration;

use crate::lora::{AdapterId, Mode};

use super::request::{Request, RequestState};

pub const DEFAULT_EWMA_ALPHA: f64 = 0.2;

/// Exponentially weighted running mean of observed durations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ewma {
    alpha: f64,
    mean_ns: Option<f64>,
}

impl Ewma {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, mean_ns: None }
    }

    pub fn observe(&mut self, sample: Duration) {
        let x = sample.as_nanos() as f64;
        self.mean_ns = Some(match self.mean_ns {
            None => x,
            Some(m) => m + self.alpha * (x - m),
        });
    }

    pub fn get(&self) -> Option<Duration> {
        self.mean_ns.map(|m| Duration::from_nanos(libm::round(m) as u64))
    }

    pub fn get_or_zero(&self) -> Duration {
        self.get().unwrap_or(Duration::ZERO)
    }
}

/// Online execution and switch-cost estimates used by credits and θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimates {
    pub exec_unmerged: Ewma,
    pub exec_merged: Ewma,
    pub exec_mixture: Ewma,
    /// Any round, regardless of mode; drives the default θ.
    pub batch: Ewma,
    pub merge: Ewma,
    pub unmerge: Ewma,
    pub delora_setup: Ewma,
}

impl Default for Estimates {
    fn default() -> Self {
        Self::new(DEFAULT_EWMA_ALPHA)
    }
}

impl Estimates {
    pub fn new(alpha: f64) -> Self {
        let e = Ewma::new(alpha);
        Self { exec_unmerged: e, exec_merged: e, exec_mixture: e, batch: e, merge: e, unmerge: e, delora_setup: e }
    }

    pub fn exec_mut(&mut self, mode: Mode) -> &mut Ewma {
        match mode {
            Mode::Unmerged => &mut self.exec_unmerged,
            Mode::Merged(_) => &mut self.exec_merged,
            Mode::Mixture(_) => &mut self.exec_mixture,
        }
    }

    pub fn exec(&self, mode: Mode) -> Duration {
        match mode {
            Mode::Unmerged => self.exec_unmerged,
            Mode::Merged(_) => self.exec_merged,
            Mode::Mixture(_) => self.exec_mixture,
        }
        .get_or_zero()
    }

    /// Cheapest estimated switch from `mode` to any mode that serves
    /// `adapter`; zero when `mode` already serves it.
    pub fn switch_to_serve(&self, mode: Mode, adapter: AdapterId) -> Duration {
        if mode.serves(adapter) {
            return Duration::ZERO;
        }
        let to_mixture = self.delora_setup.get_or_zero();
        let to_unmerged = self.unmerge.get_or_zero();
        let to_merged = to_unmerged + self.merge.get_or_zero();
        to_mixture.min(to_unmerged).min(to_merged)
    }
}

/// `credit = time spent waiting + estimated execution in the current mode +
/// estimated switch cost`. Waiting only accrues while a request is not
/// being executed, so a batched request's credit stops growing.
pub fn update_credits(queue: &mut [Request], now: Duration, mode: Mode, est: &Estimates) {
    let exec = est.exec(mode);
    for r in queue.iter_mut().filter(|r| r.state != RequestState::Done) {
        r.credit = r.waiting_at(now) + exec + est.switch_to_serve(mode, r.adapter);
    }
}
