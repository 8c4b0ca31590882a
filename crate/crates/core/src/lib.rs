//! Stochastic mirror descent (SMD) with biased, noisy subgradients.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: norm pairs, mirror maps, Bregman divergences and the exact
//!   mirror-step solver for the supported (map, set) pairings.
//! - [`problems`]: benchmark convex objectives with analytic optimal values.
//! - [`oracle`]: biased stochastic subgradients, zeroth-order estimates and
//!   empirical moment diagnostics.
//! - [`smd`]: the iteration loop, ergodic averaging and per-step audits.
//! - [`bounds`]: closed-form concentration bounds and iteration thresholds.
//! - [`harness`]: parallel Monte Carlo trials, exact binomial tail estimates
//!   and rate fitting.

pub mod bounds;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod oracle;
pub mod problems;
pub mod rng;
pub mod smd;
pub mod stats;

pub use error::{Result, SmdError};
