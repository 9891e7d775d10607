//! Risk-averse control of transient Markov models.
//!
//! Costs accumulate until the chain reaches an absorbing state, and are
//! aggregated with nested coherent risk mappings instead of expectations.
//! The crate provides the model type, the one-step risk mappings and their
//! dual envelopes, a transience check based on the robust (multikernel)
//! operator, finite- and infinite-horizon dynamic programming with
//! deterministic or randomized decision rules, and two worked applications.

pub mod applications;
pub mod dp;
pub mod error;
pub mod mdp;
pub mod model_file;
pub mod multikernel;
pub mod random_models;
pub mod randomized;
pub mod risk;

pub use error::{Error, Result};
pub use mdp::{DeterministicPolicy, MdpBuilder, Policy, RandomizedPolicy, TransientMdp, ValueFunction, WeightFunction};
pub use risk::{RiskSpec, StateParam};
