//! Risk-averse asset selling with integer offers.
//!
//! States are the best offer so far `0..=S_max` plus the absorbing state
//! `sold`. Waiting costs `c₀` and moves to `max(x, S)`; selling costs `−x`.
//! With a state-independent law-invariant risk map the optimal rule is a
//! threshold: sell once the best offer reaches the critical level, where
//! the least favorable tail `g(x) = min_{μ ∈ A} Σ_s (s − x)₊ μ(s)` drops
//! to `c₀`.

use crate::dp::apply_bellman;
use crate::error::{Error, Result};
use crate::mdp::{check_distribution, MdpBuilder, TransientMdp, ValueFunction};
use crate::risk::{RiskSpec, StateParam};

#[derive(Debug, Clone, PartialEq)]
pub struct AssetSellingSpec {
    /// `P(s)` for `s = 0..offer_pmf.len()`.
    pub offer_pmf: Vec<f64>,
    pub waiting_cost: f64,
    pub risk: RiskSpec,
}

impl AssetSellingSpec {
    pub fn new(offer_pmf: Vec<f64>, waiting_cost: f64, risk: RiskSpec) -> Result<Self> {
        let spec = AssetSellingSpec { offer_pmf, waiting_cost, risk };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.offer_pmf.is_empty() {
            return Err(Error::InvalidInput("offer distribution is empty".into()));
        }
        check_distribution(&self.offer_pmf, self.offer_pmf.len()).map_err(Error::InvalidInput)?;
        if !(self.waiting_cost > 0.0 && self.waiting_cost.is_finite()) {
            return Err(Error::InvalidInput(format!("waiting cost must be positive, got {}", self.waiting_cost)));
        }
        match &self.risk {
            RiskSpec::MeanSemideviation { kappa: StateParam::PerState(_) }
            | RiskSpec::AverageValueAtRisk { alpha: StateParam::PerState(_) } => {
                return Err(Error::InvalidRisk("asset selling needs a state-independent risk map".into()))
            }
            _ => {}
        }
        self.risk.validate()
    }

    pub fn max_offer(&self) -> usize {
        self.offer_pmf.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssetThreshold {
    /// Smallest integer `x` with `g(x) ≤ c₀`.
    pub x_star: usize,
    /// Real root of `g = c₀` in `[x* − 1, x*]`, or 0 when `x* = 0`.
    pub critical_level: f64,
    /// `x* = S_max`: no offer below the maximum is worth taking.
    pub at_support_edge: bool,
    /// `g(x)` for `x = 0..=S_max`.
    pub tail_values: Vec<f64>,
}

impl AssetThreshold {
    /// `v*(x) = −max(x, critical level)`.
    pub fn value(&self, x: usize) -> f64 {
        -(x as f64).max(self.critical_level)
    }

    /// `v*` on the asset MDP, with 0 at `sold`.
    pub fn value_function(&self, model: &TransientMdp) -> ValueFunction {
        let a = model.absorbing();
        ValueFunction::from_raw((0..model.n_states()).map(|x| if x == a { 0.0 } else { self.value(x) }).collect())
    }
}

/// `g(x) = −σ(−(s − x)₊, P)` at a real level `x`.
pub fn least_favorable_tail(spec: &AssetSellingSpec, x: f64) -> Result<f64> {
    let phi: Vec<f64> = (0..spec.offer_pmf.len()).map(|s| -(s as f64 - x).max(0.0)).collect();
    Ok(-spec.risk.sigma(0, &phi, &spec.offer_pmf)?)
}

pub fn asset_threshold(spec: &AssetSellingSpec) -> Result<AssetThreshold> {
    spec.validate()?;
    // equality at integer levels is common, so the crossing test allows rounding slack
    let c0 = spec.waiting_cost * (1.0 + 1e-12);
    let tail_values = (0..=spec.max_offer()).map(|x| least_favorable_tail(spec, x as f64)).collect::<Result<Vec<_>>>()?;
    // g(S_max) = 0 < c₀, so the scan always stops
    let x_star = tail_values.iter().position(|&g| g <= c0).unwrap_or(spec.max_offer());
    let critical_level = if x_star == 0 {
        0.0
    } else {
        // g is continuous and nonincreasing, g(x* − 1) > c₀ ≥ g(x*)
        let (mut lo, mut hi) = (x_star as f64 - 1.0, x_star as f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if least_favorable_tail(spec, mid)? > c0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    Ok(AssetThreshold { x_star, critical_level, at_support_edge: x_star == spec.max_offer(), tail_values })
}

/// The asset selling model: states `0..=S_max` then `sold`; control 0 waits,
/// control 1 sells.
pub fn asset_selling_mdp(spec: &AssetSellingSpec) -> Result<TransientMdp> {
    spec.validate()?;
    let n = spec.offer_pmf.len();
    let mut names: Vec<String> = (0..n).map(|x| x.to_string()).collect();
    names.push("sold".into());
    let mut b = MdpBuilder::new(names, n);
    for x in 0..n {
        let wait = b.add_control(x, "wait");
        let below: f64 = spec.offer_pmf[..=x].iter().sum();
        b.set_transition(x, wait, x, below);
        for y in x + 1..n {
            b.set_transition(x, wait, y, spec.offer_pmf[y]);
        }
        b.set_control_cost(x, wait, spec.waiting_cost);
        let sell = b.add_control(x, "sell");
        b.set_transition(x, sell, n, 1.0).set_control_cost(x, sell, -(x as f64));
    }
    b.add_absorbing_loop("stay");
    b.build()
}

/// `max_x |(𝔇v*)(x) − v*(x)|` on the asset MDP.
pub fn fixed_point_residual(spec: &AssetSellingSpec, threshold: &AssetThreshold) -> Result<f64> {
    let model = asset_selling_mdp(spec)?;
    let v = threshold.value_function(&model);
    let (next, _) = apply_bellman(&model, &spec.risk, &v)?;
    Ok(next.as_slice().iter().zip(v.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}
