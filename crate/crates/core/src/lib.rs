//! Exact tabular laboratory for cross-embodiment unsupervised RL.
//!
//! The crate provides finite CE-MDPs with per-embodiment action projectors,
//! exact occupancy and return computations, occupancy-set geometry probes,
//! embodiment inference (exact Bayesian and learned), intrinsic reward
//! families, small tabular agents, and brute-force oracles that check the
//! variational identities the intrinsic rewards are built on.

pub mod agents;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod mdp;
pub mod oracle;
pub mod rewards;
mod softmax;
pub mod util;

pub use error::CoreError;
