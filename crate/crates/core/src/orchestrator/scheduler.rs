use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::time::Duration;

use crate::lora::{AdapterId, Mode};

use super::request::{Request, RequestState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedulerConfig {
    /// Maximum number of requests per decode round.
    pub max_bs: usize,
    /// Starvation threshold.
    pub theta: Duration,
}

impl SchedulerConfig {
    pub fn new(max_bs: usize, theta: Duration) -> Option<Self> {
        (max_bs >= 1 && theta > Duration::ZERO).then_some(Self { max_bs, theta })
    }
}

/// Output of one scheduling decision. `batch` holds indices into the queue
/// slice passed to the scheduler, in execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub mode: Mode,
    pub batch: Vec<usize>,
    pub starving: usize,
}

/// How the serving loop picks modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModePolicy {
    #[default]
    Auto,
    Merged,
    Unmerged,
    Mixture,
}

impl ModePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            ModePolicy::Auto => "auto",
            ModePolicy::Merged => "merged",
            ModePolicy::Unmerged => "unmerged",
            ModePolicy::Mixture => "mixture",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "auto" => ModePolicy::Auto,
            "merged" | "merge" => ModePolicy::Merged,
            "unmerged" | "unmerge" => ModePolicy::Unmerged,
            "mixture" => ModePolicy::Mixture,
            _ => return None,
        })
    }
}

fn active(queue: &[Request]) -> impl Iterator<Item = (usize, &Request)> {
    queue.iter().enumerate().filter(|(_, r)| r.state != RequestState::Done)
}

/// Adapter with the most active requests; ties go to the lowest id.
fn most_queued(queue: &[Request]) -> Option<AdapterId> {
    let mut counts: BTreeMap<AdapterId, usize> = BTreeMap::new();
    for (_, r) in active(queue) {
        *counts.entry(r.adapter).or_default() += 1;
    }
    let mut best: Option<(AdapterId, usize)> = None;
    for (id, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((id, c));
        }
    }
    best.map(|(id, _)| id)
}

/// Starving requests first, then `rest` in arrival order, capped at `max_bs`.
fn fill(starving: &[usize], rest: impl Iterator<Item = usize>, max_bs: usize) -> Vec<usize> {
    let len = max_bs.saturating_sub(starving.len());
    let mut batch: Vec<usize> = starving.iter().copied().take(max_bs).collect();
    batch.extend(rest.filter(|i| !starving.contains(i)).take(len));
    batch
}

/// One scheduling decision over a queue snapshot in arrival order. Pure:
/// the result depends only on the arguments.
pub fn schedule(queue: &[Request], mode: Mode, cfg: &SchedulerConfig) -> Decision {
    let starving: Vec<usize> = active(queue).filter(|(_, r)| r.credit > cfg.theta).map(|(i, _)| i).collect();
    let Some(hot) = most_queued(queue) else {
        return Decision { mode, batch: Vec::new(), starving: 0 };
    };
    let merge_set: Vec<usize> = active(queue).filter(|(_, r)| r.adapter == hot).map(|(i, _)| i).collect();
    let max_bs = cfg.max_bs;
    let n_starve = starving.len();

    let (mode, batch) = if 2 * n_starve <= max_bs && 2 * merge_set.len() > max_bs {
        if starving.is_empty() {
            (Mode::Merged(hot), merge_set.into_iter().take(max_bs).collect())
        } else {
            (Mode::Mixture(hot), fill(&starving, merge_set.into_iter(), max_bs))
        }
    } else {
        (Mode::Unmerged, fill(&starving, active(queue).map(|(i, _)| i), max_bs))
    };
    Decision { mode, batch, starving: n_starve }
}

/// Scheduling decision under `policy`. `Auto` is [`schedule`]; the forced
/// policies pin the mode kind and pick the adapter and batch themselves.
pub fn decide(queue: &[Request], mode: Mode, cfg: &SchedulerConfig, policy: ModePolicy) -> Decision {
    if policy == ModePolicy::Auto {
        return schedule(queue, mode, cfg);
    }
    let starving: Vec<usize> = active(queue).filter(|(_, r)| r.credit > cfg.theta).map(|(i, _)| i).collect();
    let n_starve = starving.len();
    let Some(hot) = most_queued(queue) else {
        return Decision { mode, batch: Vec::new(), starving: 0 };
    };
    // Keep the merged adapter while it still has work so forced modes do
    // not switch on every small shift in queue composition.
    let sticky = mode.merged_adapter().filter(|&a| active(queue).any(|(_, r)| r.adapter == a));
    match policy {
        ModePolicy::Auto => unreachable!(),
        ModePolicy::Unmerged => Decision {
            mode: Mode::Unmerged,
            batch: fill(&starving, active(queue).map(|(i, _)| i), cfg.max_bs),
            starving: n_starve,
        },
        ModePolicy::Merged => {
            let target = match starving.first() {
                Some(&i) => queue[i].adapter,
                None => sticky.unwrap_or(hot),
            };
            let own: Vec<usize> = starving.iter().copied().filter(|&i| queue[i].adapter == target).collect();
            let rest = active(queue).filter(|(_, r)| r.adapter == target).map(|(i, _)| i);
            Decision { mode: Mode::Merged(target), batch: fill(&own, rest, cfg.max_bs), starving: n_starve }
        }
        ModePolicy::Mixture => {
            let target = sticky.unwrap_or(hot);
            Decision {
                mode: Mode::Mixture(target),
                batch: fill(&starving, active(queue).map(|(i, _)| i), cfg.max_bs),
                starving: n_starve,
            }
        }
    }
}
