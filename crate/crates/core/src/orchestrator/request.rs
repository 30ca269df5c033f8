use core::time::Duration;

use crate::lora::{AdapterId, HeadKind};

pub type RequestId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RequestState {
    #[default]
    Queued,
    Running,
    Done,
}

/// One inference job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub id: RequestId,
    pub adapter: AdapterId,
    pub arrival: Duration,
    pub input_len: usize,
    /// Requested decode rounds; see [`Request::effective_output_len`].
    pub output_len: usize,
    pub head: HeadKind,
    pub latency_budget: Option<Duration>,
    /// Starvation credit at the last scheduling decision.
    pub credit: Duration,
    pub state: RequestState,
    pub completion: Option<Duration>,
    /// Waiting time accumulated over finished wait spans.
    pub waited: Duration,
    /// Start of the current wait span; `None` while executing or done.
    pub queued_since: Option<Duration>,
}

impl Request {
    pub fn new(
        id: RequestId,
        adapter: AdapterId,
        arrival: Duration,
        input_len: usize,
        output_len: usize,
        head: HeadKind,
    ) -> Self {
        Self {
            id,
            adapter,
            arrival,
            input_len,
            output_len,
            head,
            latency_budget: None,
            credit: Duration::ZERO,
            state: RequestState::Queued,
            completion: None,
            waited: Duration::ZERO,
            queued_since: Some(arrival),
        }
    }

    pub fn with_budget(mut self, budget: Option<Duration>) -> Self {
        self.latency_budget = budget;
        self
    }

    /// Total waiting time as of `now`.
    pub fn waiting_at(&self, now: Duration) -> Duration {
        self.waited + self.queued_since.map_or(Duration::ZERO, |q| now.saturating_sub(q))
    }

    /// Decode rounds actually executed: one for task-head requests.
    pub fn effective_output_len(&self) -> usize {
        match self.head {
            HeadKind::Task => 1,
            HeadKind::Lm => self.output_len.max(1),
        }
    }

    /// Tokens counted by the average-token-latency metric.
    pub fn token_count(&self) -> usize {
        self.input_len + self.effective_output_len()
    }
}
