//! Policy optimization for SD-WAN overlays.
//!
//! * [`queueing`]: M/M/1/K closed forms and their inversion.
//! * [`sabe`]: passive available-bandwidth estimation per overlay link.
//! * [`spr`]: split-ratio (load balancing) optimization and the device rule.
//! * [`qos`]: per-link rate allocation for flow groups.
//! * [`sim`]: flow-level closed-loop simulator used to compare policies.
//! * [`io`]: CSV formats shared with the command-line tool.

pub mod io;
pub mod model;
pub mod qos;
pub mod queueing;
pub mod sabe;
pub mod sim;
pub mod spr;

pub use model::{Scenario, ScenarioError, ValidationError};
