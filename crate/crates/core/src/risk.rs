//! One-step risk transition mappings `σ(φ, x, m)` and their risk envelopes.
//!
//! Three law-invariant coherent families are supported:
//!
//! - expectation, `σ = ⟨φ, m⟩`, whose envelope is the singleton `{m}`;
//! - first-order mean-semideviation with weight `κ ∈ [0, 1]`,
//!   `σ = ⟨φ, m⟩ + κ ⟨(φ − ⟨φ, m⟩)₊, m⟩`;
//! - Average Value at Risk at level `α ∈ (0, 1]`,
//!   `σ = inf_η { η + ⟨(φ − η)₊, m⟩ / α }`, the mean of the worst `α`-tail.
//!
//! Every mapping has the dual form `σ(φ, x, m) = max_{μ ∈ A(x, m)} ⟨φ, μ⟩`.
//! [`RiskSpec::max_selector`] returns an element of the envelope attaining
//! the maximum, which is what the robust operators in
//! [`multikernel`](crate::multikernel) are built from.
//!
//! Parameters may vary by state. `α = 1` is accepted and coincides with the
//! expectation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Slack allowed on the total mass of the reference measure `m`.
pub const MEASURE_TOL: f64 = 1e-10;

/// A risk parameter that is either constant or given per state.
#[derive(Debug, Clone, PartialEq)]
pub enum StateParam {
    Constant(f64),
    PerState(Vec<f64>),
}

impl StateParam {
    pub fn at(&self, x: usize) -> Result<f64> {
        match self {
            StateParam::Constant(v) => Ok(*v),
            StateParam::PerState(v) => v.get(x).copied().ok_or_else(|| {
                Error::InvalidRisk(format!("no parameter for state index {x} ({} given)", v.len()))
            }),
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            StateParam::Constant(v) => std::slice::from_ref(v),
            StateParam::PerState(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RiskSpec {
    Expectation,
    MeanSemideviation { kappa: StateParam },
    AverageValueAtRisk { alpha: StateParam },
}

/// A risk mapping with its parameter resolved at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Local {
    Expectation,
    Semideviation(f64),
    Avar(f64),
}

/// Value of `σ` together with a maximizing envelope element.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskValue {
    pub sigma: f64,
    /// Probability vector on the same index set as `m`, zero off its support.
    pub maximizer: Vec<f64>,
}

impl RiskSpec {
    pub fn semideviation(kappa: f64) -> Self {
        RiskSpec::MeanSemideviation { kappa: StateParam::Constant(kappa) }
    }

    pub fn avar(alpha: f64) -> Self {
        RiskSpec::AverageValueAtRisk { alpha: StateParam::Constant(alpha) }
    }

    /// Parameter range checks: `κ ∈ [0, 1]`, `α ∈ (0, 1]`.
    pub fn validate(&self) -> Result<()> {
        match self {
            RiskSpec::Expectation => Ok(()),
            RiskSpec::MeanSemideviation { kappa } => {
                for &k in kappa.values() {
                    if !(0.0..=1.0).contains(&k) {
                        return Err(Error::InvalidRisk(format!("kappa must lie in [0, 1], got {k}")));
                    }
                }
                Ok(())
            }
            RiskSpec::AverageValueAtRisk { alpha } => {
                for &a in alpha.values() {
                    if !(a > 0.0 && a <= 1.0) {
                        return Err(Error::InvalidRisk(format!("alpha must lie in (0, 1], got {a}")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Range checks plus, for per-state parameters, a length check.
    pub fn validate_for(&self, n_states: usize) -> Result<()> {
        self.validate()?;
        let per_state = match self {
            RiskSpec::MeanSemideviation { kappa: StateParam::PerState(v) } => Some(v.len()),
            RiskSpec::AverageValueAtRisk { alpha: StateParam::PerState(v) } => Some(v.len()),
            _ => None,
        };
        match per_state {
            Some(len) if len != n_states => Err(Error::InvalidRisk(format!(
                "per-state parameter has {len} entries for {n_states} states"
            ))),
            _ => Ok(()),
        }
    }

    pub(crate) fn local(&self, x: usize) -> Result<Local> {
        Ok(match self {
            RiskSpec::Expectation => Local::Expectation,
            RiskSpec::MeanSemideviation { kappa } => Local::Semideviation(kappa.at(x)?),
            RiskSpec::AverageValueAtRisk { alpha } => Local::Avar(alpha.at(x)?),
        })
    }

    fn checked_local(&self, x: usize, phi: &[f64], m: &[f64]) -> Result<Local> {
        self.validate()?;
        if phi.len() != m.len() {
            return Err(Error::LengthMismatch { expected: m.len(), found: phi.len() });
        }
        check_measure(m)?;
        self.local(x)
    }

    /// `σ(φ, x, m)`.
    pub fn sigma(&self, x: usize, phi: &[f64], m: &[f64]) -> Result<f64> {
        Ok(self.checked_local(x, phi, m)?.sigma(phi, m))
    }

    /// `σ(φ, x, m)` and a maximizer `μ* ∈ A(x, m)` with `⟨φ, μ*⟩ = σ`.
    ///
    /// Semideviation uses `h_j = κ` where `φ_j` exceeds the mean and `0`
    /// elsewhere (including ties). AVaR fills density `1/α` greedily from the
    /// largest outcome down, ties broken by lower index first.
    pub fn max_selector(&self, x: usize, phi: &[f64], m: &[f64]) -> Result<RiskValue> {
        let local = self.checked_local(x, phi, m)?;
        let mut maximizer = vec![0.0; m.len()];
        let sigma = local.selector(phi, m, &mut maximizer);
        Ok(RiskValue { sigma, maximizer })
    }

    /// `(min μ(B), max μ(B))` over `μ ∈ A(x, m)`, for a set `B` of indices.
    pub fn envelope_mass_bounds(&self, x: usize, m: &[f64], target: &[usize]) -> Result<(f64, f64)> {
        let mut ind = vec![0.0; m.len()];
        for &j in target {
            *ind.get_mut(j).ok_or_else(|| Error::InvalidInput(format!("target index {j} out of range")))? = 1.0;
        }
        let upper = self.sigma(x, &ind, m)?;
        ind.iter_mut().for_each(|v| *v = -*v);
        let lower = -self.sigma(x, &ind, m)?;
        Ok((lower, upper))
    }

    /// Membership test `μ ∈ A(x, m)` up to `tol`.
    ///
    /// For semideviation the envelope is the set of probability measures
    /// `μ ≪ m` whose density ratio spread `max dμ/dm − min dμ/dm` is at most
    /// `κ`; for AVaR it is `{μ : dμ/dm ≤ 1/α}`.
    pub fn envelope_contains(&self, x: usize, m: &[f64], mu: &[f64], tol: f64) -> Result<bool> {
        if mu.len() != m.len() {
            return Err(Error::LengthMismatch { expected: m.len(), found: mu.len() });
        }
        check_measure(m)?;
        self.validate()?;
        let total: f64 = mu.iter().sum();
        if mu.iter().any(|&v| v < -tol) || (total - 1.0).abs() > tol {
            return Ok(false);
        }
        if mu.iter().zip(m).any(|(&a, &b)| b == 0.0 && a.abs() > tol) {
            return Ok(false);
        }
        Ok(match self.local(x)? {
            Local::Expectation => mu.iter().zip(m).all(|(a, b)| (a - b).abs() <= tol),
            Local::Avar(alpha) => mu.iter().zip(m).all(|(a, b)| *a <= b / alpha + tol),
            Local::Semideviation(kappa) => {
                // tol is on μ, so the ratio slack scales with the smallest atom
                let ratios: Vec<f64> =
                    mu.iter().zip(m).filter(|(_, b)| **b > 0.0).map(|(a, b)| a / b).collect();
                let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let m_min = m.iter().cloned().filter(|&b| b > 0.0).fold(f64::INFINITY, f64::min);
                hi - lo <= kappa + tol / m_min
            }
        })
    }
}

impl Local {
    pub(crate) fn sigma(&self, phi: &[f64], m: &[f64]) -> f64 {
        match *self {
            Local::Expectation => dot(phi, m),
            Local::Semideviation(kappa) => {
                let mean = dot(phi, m);
                let upper: f64 = phi.iter().zip(m).map(|(f, p)| p * (f - mean).max(0.0)).sum();
                mean + kappa * upper
            }
            Local::Avar(alpha) => avar_fill(phi, m, alpha, None),
        }
    }

    /// Writes a maximizer into `out` and returns `⟨φ, out⟩`.
    pub(crate) fn selector(&self, phi: &[f64], m: &[f64], out: &mut [f64]) -> f64 {
        match *self {
            Local::Expectation => {
                out.copy_from_slice(m);
                dot(phi, m)
            }
            Local::Semideviation(kappa) => {
                let mean = dot(phi, m);
                let h_mean: f64 = phi.iter().zip(m).filter(|(f, _)| **f > mean).map(|(_, p)| kappa * p).sum();
                for ((o, f), p) in out.iter_mut().zip(phi).zip(m) {
                    let h = if *f > mean { kappa } else { 0.0 };
                    *o = p * (1.0 + h - h_mean);
                }
                dot(phi, out)
            }
            Local::Avar(alpha) => avar_fill(phi, m, alpha, Some(out)),
        }
    }
}

/// Greedy fill of the AVaR envelope: mass `min(m_j / α, remaining)` to atoms
/// in decreasing order of `φ`.
fn avar_fill(phi: &[f64], m: &[f64], alpha: f64, mut out: Option<&mut [f64]>) -> f64 {
    let mut order: Vec<usize> = (0..phi.len()).filter(|&j| m[j] > 0.0).collect();
    order.sort_by(|&a, &b| phi[b].total_cmp(&phi[a]).then(a.cmp(&b)));
    if let Some(o) = out.as_deref_mut() {
        o.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut remaining = 1.0;
    let mut value = 0.0;
    for j in order {
        if remaining <= 0.0 {
            break;
        }
        let take = (m[j] / alpha).min(remaining);
        value += take * phi[j];
        remaining -= take;
        if let Some(o) = out.as_deref_mut() {
            o[j] = take;
        }
    }
    value
}

fn check_measure(m: &[f64]) -> Result<()> {
    if m.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::InvalidInput("measure has a negative or NaN entry".into()));
    }
    let s: f64 = m.iter().sum();
    if (s - 1.0).abs() > MEASURE_TOL {
        return Err(Error::InvalidInput(format!("measure sums to {s}, not 1")));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

impl FromStr for RiskSpec {
    type Err = Error;

    /// `expectation`, `semidev:KAPPA` or `avar:ALPHA`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let spec = match s.split_once(':') {
            None if s.eq_ignore_ascii_case("expectation") => RiskSpec::Expectation,
            Some((family, value)) => {
                let v: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidRisk(format!("bad parameter in {s:?}")))?;
                match family.trim().to_ascii_lowercase().as_str() {
                    "semidev" => RiskSpec::semideviation(v),
                    "avar" => RiskSpec::avar(v),
                    _ => return Err(Error::InvalidRisk(format!("unknown risk family in {s:?}"))),
                }
            }
            None => return Err(Error::InvalidRisk(format!("unknown risk spec {s:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for RiskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RiskSpec::Expectation => write!(f, "expectation"),
            RiskSpec::MeanSemideviation { kappa: StateParam::Constant(k) } => write!(f, "semidev:{k}"),
            RiskSpec::MeanSemideviation { .. } => write!(f, "semidev:per-state"),
            RiskSpec::AverageValueAtRisk { alpha: StateParam::Constant(a) } => write!(f, "avar:{a}"),
            RiskSpec::AverageValueAtRisk { .. } => write!(f, "avar:per-state"),
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    /// `inf_η {η + E(φ−η)₊/α}` evaluated at every atom; the infimum of this
    /// piecewise-linear convex function sits at one of them.
    fn avar_by_eta(phi: &[f64], m: &[f64], alpha: f64) -> f64 {
        phi.iter()
            .map(|&eta| eta + phi.iter().zip(m).map(|(f, p)| p * (f - eta).max(0.0)).sum::<f64>() / alpha)
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn semideviation_hand_value() {
        let s = RiskSpec::semideviation(1.0);
        assert_abs_diff_eq!(s.sigma(0, &[1.0, 0.0], &[0.5, 0.5]).unwrap(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn avar_hand_value() {
        let s = RiskSpec::avar(0.5);
        assert_abs_diff_eq!(s.sigma(0, &[1.0, 0.0], &[0.5, 0.5]).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(avar_by_eta(&[1.0, 0.0], &[0.5, 0.5], 0.5), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn constants_pass_through() {
        for s in [RiskSpec::Expectation, RiskSpec::semideviation(0.7), RiskSpec::avar(0.2)] {
            assert_abs_diff_eq!(s.sigma(0, &[3.5; 3], &[0.2, 0.3, 0.5]).unwrap(), 3.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn expectation_is_the_mean() {
        let s = RiskSpec::Expectation;
        assert_abs_diff_eq!(s.sigma(0, &[1.0, -2.0, 4.0], &[0.2, 0.3, 0.5]).unwrap(), 1.6, epsilon = 1e-15);
        let r = s.max_selector(0, &[1.0, -2.0, 4.0], &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(r.maximizer, vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn semideviation_selector_matches_grid_search() {
        let s = RiskSpec::semideviation(1.0);
        let r = s.max_selector(0, &[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(r.maximizer[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(r.maximizer[1], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(r.sigma, 0.75, epsilon = 1e-15);

        // max over h ∈ [0,1]² of ⟨φ, m(1 + h − ⟨h,m⟩)⟩
        let mut best = f64::NEG_INFINITY;
        for i in 0..=100 {
            for j in 0..=100 {
                let h = [i as f64 / 100.0, j as f64 / 100.0];
                let hm = 0.5 * h[0] + 0.5 * h[1];
                let mu0 = 0.5 * (1.0 + h[0] - hm);
                best = best.max(mu0);
            }
        }
        assert_abs_diff_eq!(best, r.sigma, epsilon = 1e-12);
    }

    #[test]
    fn avar_selector_is_vertex_of_capped_simplex() {
        let s = RiskSpec::avar(0.5);
        let r = s.max_selector(0, &[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert_eq!(r.maximizer, vec![1.0, 0.0]);
        assert_eq!(r.sigma, 1.0);
    }

    #[test]
    fn avar_ties_prefer_lower_index() {
        let s = RiskSpec::avar(0.5);
        let r = s.max_selector(0, &[2.0, 2.0, 0.0], &[0.3, 0.3, 0.4]).unwrap();
        assert_abs_diff_eq!(r.maximizer[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(r.maximizer[1], 0.4, epsilon = 1e-15);
        assert_eq!(r.maximizer[2], 0.0);
    }

    #[test]
    fn semideviation_ties_keep_reference_measure() {
        let s = RiskSpec::semideviation(0.8);
        let r = s.max_selector(0, &[2.0, 2.0], &[0.25, 0.75]).unwrap();
        assert_eq!(r.maximizer, vec![0.25, 0.75]);
    }

    #[test]
    fn mass_bounds_for_two_point_measure() {
        let m = [0.5, 0.5];
        let (lo, hi) = RiskSpec::avar(0.25).envelope_mass_bounds(0, &m, &[0]).unwrap();
        assert_abs_diff_eq!(lo, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hi, 1.0, epsilon = 1e-15);
        // each atom carries at most m_j / α = 2/3, so the other carries at least 1/3
        let (lo, hi) = RiskSpec::avar(0.75).envelope_mass_bounds(0, &m, &[0]).unwrap();
        assert_abs_diff_eq!(lo, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hi, 2.0 / 3.0, epsilon = 1e-15);
        let (lo, hi) = RiskSpec::semideviation(1.0).envelope_mass_bounds(0, &m, &[0]).unwrap();
        assert_abs_diff_eq!(lo, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(hi, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn input_errors() {
        let s = RiskSpec::semideviation(0.5);
        assert!(matches!(s.sigma(0, &[1.0], &[0.5, 0.5]), Err(Error::LengthMismatch { .. })));
        assert!(s.sigma(0, &[1.0, 2.0], &[0.5, 0.6]).is_err());
        assert!(RiskSpec::semideviation(1.5).sigma(0, &[1.0], &[1.0]).is_err());
        assert!(RiskSpec::avar(0.0).validate().is_err());
        assert!(RiskSpec::avar(1.0).validate().is_ok());
        let per = RiskSpec::MeanSemideviation { kappa: StateParam::PerState(vec![0.1, 0.2]) };
        assert!(per.sigma(2, &[1.0], &[1.0]).is_err());
        assert!(per.validate_for(3).is_err());
        assert!(per.validate_for(2).is_ok());
    }

    #[test]
    fn per_state_parameters() {
        let per = RiskSpec::AverageValueAtRisk { alpha: StateParam::PerState(vec![1.0, 0.5]) };
        let phi = [1.0, 0.0];
        let m = [0.5, 0.5];
        assert_abs_diff_eq!(per.sigma(0, &phi, &m).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(per.sigma(1, &phi, &m).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn parses_command_line_grammar() {
        assert_eq!("expectation".parse::<RiskSpec>().unwrap(), RiskSpec::Expectation);
        assert_eq!("semidev:0.5".parse::<RiskSpec>().unwrap(), RiskSpec::semideviation(0.5));
        assert_eq!("avar:0.75".parse::<RiskSpec>().unwrap(), RiskSpec::avar(0.75));
        assert!("avar:1.5".parse::<RiskSpec>().is_err());
        assert!("cvar:0.5".parse::<RiskSpec>().is_err());
        assert_eq!(RiskSpec::avar(0.75).to_string(), "avar:0.75");
    }

    fn spec_strategy() -> impl Strategy<Value = RiskSpec> {
        prop_oneof![
            Just(RiskSpec::Expectation),
            (0.0..=1.0f64).prop_map(RiskSpec::semideviation),
            (0.01..=1.0f64).prop_map(RiskSpec::avar),
        ]
    }

    fn case_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..7).prop_flat_map(|n| {
            (
                prop::collection::vec(-10.0..10.0f64, n),
                prop::collection::vec(0.0..1.0f64, n).prop_filter("nonzero mass", |w| w.iter().sum::<f64>() > 1e-3),
            )
                .prop_map(|(phi, w)| {
                    let s: f64 = w.iter().sum();
                    (phi, w.iter().map(|v| v / s).collect())
                })
        })
    }

    proptest! {
        #[test]
        fn avar_matches_eta_formula((phi, m) in case_strategy(), alpha in 0.01..=1.0f64) {
            let s = RiskSpec::avar(alpha);
            let got = s.sigma(0, &phi, &m).unwrap();
            let support: Vec<f64> = phi.iter().zip(&m).filter(|(_, p)| **p > 0.0).map(|(f, _)| *f).collect();
            let ms: Vec<f64> = m.iter().cloned().filter(|p| *p > 0.0).collect();
            prop_assert!((got - avar_by_eta(&support, &ms, alpha)).abs() <= 1e-10 * (1.0 + got.abs()));
        }

        #[test]
        fn selector_is_feasible_and_attains_sigma(spec in spec_strategy(), (phi, m) in case_strategy()) {
            let r = spec.max_selector(0, &phi, &m).unwrap();
            prop_assert!((dot(&phi, &r.maximizer) - r.sigma).abs() <= 1e-10);
            prop_assert!((r.sigma - spec.sigma(0, &phi, &m).unwrap()).abs() <= 1e-12);
            prop_assert!(spec.envelope_contains(0, &m, &r.maximizer, 1e-12).unwrap());
        }

        #[test]
        fn bounded_below_by_mean(spec in spec_strategy(), (phi, m) in case_strategy()) {
            prop_assert!(spec.sigma(0, &phi, &m).unwrap() >= dot(&phi, &m) - 1e-12);
            prop_assert!(spec.envelope_contains(0, &m, &m, 1e-12).unwrap());
        }
    }
}
