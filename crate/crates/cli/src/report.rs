use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Machine-readable result of `solve`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Report {
    pub method: String,
    pub risk: String,
    pub states: Vec<String>,
    /// Aligned with `states`.
    pub values: Vec<f64>,
    pub policy: PolicyReport,
    pub iterations: usize,
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum PolicyReport {
    /// State name to control name.
    Deterministic(BTreeMap<String, String>),
    /// State name to control probabilities.
    Randomized(BTreeMap<String, BTreeMap<String, f64>>),
}

/// Fixed nine-decimal rendering used for every printed value.
pub fn fmt_value(v: f64) -> String {
    format!("{v:.9}")
}
