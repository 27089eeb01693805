//! Highway slow-traffic "trap" scenario simulator and demonstration-guided
//! reinforcement learning.
//!
//! The crate bundles a small 2 Hz traffic microsimulation (kinematic bicycle
//! ego, IDM/MOBIL traffic, two slow trap vehicles boxing the ego in), a
//! rule-based overtaking controller that escapes the trap by merging into the
//! backward gap of the adjacent lane, and a discrete soft actor-critic that
//! can be guided by that controller through a KL soft constraint and a mixed
//! demonstration replay buffer.

pub mod demos;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod heuristic;
pub mod metrics;
pub mod mlp;
pub mod rng;
pub mod sac;
pub mod traffic;
pub mod train;

pub use error::{Error, Result};
