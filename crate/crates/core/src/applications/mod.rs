//! Builders and solvers for two worked decision problems.

pub mod asset_selling;
pub mod transplant;
