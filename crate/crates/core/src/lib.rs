//! Distributed primal-dual tone and power allocation for uplink OFDM.
//!
//! Users compute local per-tone power best responses under self-noise and
//! a maximum-SNR cap and report only demand bits; the base station prices
//! tones with a projected subgradient that skips tones already satisfying
//! feasibility and complementary slackness. A centralized relaxed-dual solver
//! and an exhaustive search serve as references.

pub mod bs_agent;
pub mod compare;
pub mod error;
pub mod model;
pub mod oracle;
pub mod protocol;
pub mod scenario_io;
pub mod trace;
pub mod user_agent;

pub use bs_agent::{Allocation, PriceState, StepSchedule};
pub use error::{Error, Result};
pub use model::{Link, RawScenario, Scenario, UserProfile};
pub use protocol::{run_until_converged, NetworkModel, RunConfig, RunOutcome, World};
pub use trace::TraceRecord;
pub use user_agent::{BestResponse, UserState};

/// Crate version recorded in trace metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
