//! Runtime control plane: request credits, the scheduling policy, mode
//! switching and the continuous serving loop.

mod credit;
mod request;
mod scheduler;
mod serve;
mod switch;

pub use credit::{update_credits, Estimates, Ewma, DEFAULT_EWMA_ALPHA};
pub use request::{Request, RequestId, RequestState};
pub use scheduler::{decide, schedule, Decision, ModePolicy, SchedulerConfig};
pub use serve::{
    serve_loop, AdapterCacheConfig, Metrics, ModeOccupancy, ModeSpan, RequestRecord, ServeConfig, ServeError,
    ThetaPolicy,
};
pub use switch::{init_delora, mode_switch, SwitchReport};
