//! Wait-or-transplant decision with a risk-adjusted post-transplant lifetime.
//!
//! The top-level model has states `S` (waiting for an organ), `L` (life after
//! transplant) and the absorbing state `D`. Rewards are months of life, so
//! costs are their negatives: waiting costs −1 per month, transplanting costs
//! nothing, and `L` is absorbed immediately at cost `−r(L)`, where `r(L)` is
//! the certainty-equivalent lifetime of a separate survival chain.
//!
//! The survival chain has states `1..=n`; state `i` stands for month
//! `age_offset + i − 1` of age, earns one month, and dies with probability
//! `p_i`. The last state dies surely.

use statrs::function::erf::erfc;

use crate::dp::{evaluate_stationary_policy, value_iteration, InfiniteHorizonSolution, SolverOptions};
use crate::error::{Error, Result};
use crate::mdp::{DeterministicPolicy, MdpBuilder, TransientMdp};
use crate::randomized::{randomized_bellman_solve, RandomizedOptions, RandomizedSolution};
use crate::risk::RiskSpec;

pub const S: usize = 0;
pub const L: usize = 1;
pub const D: usize = 2;
pub const WAIT: usize = 0;
pub const TRANSPLANT: usize = 1;

/// Weibull, lognormal and Gompertz mixture for lifetime in years.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifetimeMixture {
    pub delta: f64,
    pub beta: f64,
    pub w1: f64,
    pub m: f64,
    pub sigma: f64,
    pub w2: f64,
    pub b: f64,
    pub alpha_g: f64,
    pub w3: f64,
}

impl Default for LifetimeMixture {
    fn default() -> Self {
        LifetimeMixture {
            delta: 0.297,
            beta: 0.225,
            w1: 0.0170,
            m: 3.11,
            sigma: 0.218,
            w2: 0.0092,
            b: 0.0000812,
            alpha_g: 0.0844,
            w3: 0.9737,
        }
    }
}

impl LifetimeMixture {
    pub fn total_weight(&self) -> f64 {
        self.w1 + self.w2 + self.w3
    }

    fn validate(&self) -> Result<()> {
        let positive = [self.delta, self.beta, self.sigma, self.b, self.alpha_g];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !self.m.is_finite() {
            return Err(Error::InvalidInput("lifetime mixture parameters must be positive and finite".into()));
        }
        let weights = [self.w1, self.w2, self.w3];
        if weights.iter().any(|w| !(*w >= 0.0)) || self.total_weight() > 1.0 + 1e-9 {
            return Err(Error::InvalidInput("mixture weights must be nonnegative with total at most 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransplantSpec {
    pub q_ss_w: f64,
    pub q_sd_w: f64,
    pub q_sl_t: f64,
    pub q_sd_t: f64,
    pub kappa: f64,
    pub n_survival: usize,
    pub age_offset_months: usize,
    pub max_lifetime_months: usize,
    pub mixture: LifetimeMixture,
}

impl Default for TransplantSpec {
    fn default() -> Self {
        TransplantSpec {
            q_ss_w: 0.99882,
            q_sd_w: 0.00118,
            q_sl_t: 0.90782,
            q_sd_t: 0.09218,
            kappa: 1.0,
            n_survival: 900,
            age_offset_months: 300,
            max_lifetime_months: 1200,
            mixture: LifetimeMixture::default(),
        }
    }
}

impl TransplantSpec {
    pub fn with_kappa(kappa: f64) -> Self {
        TransplantSpec { kappa, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.q_ss_w, self.q_sd_w, self.q_sl_t, self.q_sd_t];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidInput("transition probabilities must lie in [0, 1]".into()));
        }
        if (self.q_ss_w + self.q_sd_w - 1.0).abs() > 1e-9 || (self.q_sl_t + self.q_sd_t - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("transition rows from S must sum to 1".into()));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::InvalidRisk(format!("kappa must lie in [0, 1], got {}", self.kappa)));
        }
        if self.n_survival == 0 || self.age_offset_months == 0 {
            return Err(Error::InvalidInput("survival chain needs a positive length and start month".into()));
        }
        if self.age_offset_months + self.n_survival - 1 > self.max_lifetime_months {
            return Err(Error::InvalidInput(format!(
                "survival months {}..{} exceed the maximum lifetime {}",
                self.age_offset_months,
                self.age_offset_months + self.n_survival - 1,
                self.max_lifetime_months
            )));
        }
        self.mixture.validate()
    }

    /// Expectation for `κ = 0`, mean-semideviation otherwise.
    pub fn risk(&self) -> RiskSpec {
        if self.kappa == 0.0 {
            RiskSpec::Expectation
        } else {
            RiskSpec::semideviation(self.kappa)
        }
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `F(x)` at age `x ≥ 0` in years.
pub fn lifetime_cdf(mixture: &LifetimeMixture, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::InvalidInput(format!("age must be nonnegative, got {x}")));
    }
    let weibull = -(-(x / mixture.delta).powf(mixture.beta)).exp_m1();
    let lognormal = if x > 0.0 { std_normal_cdf((x.ln() - mixture.m) / mixture.sigma) } else { 0.0 };
    let gompertz = -(-(mixture.b / mixture.alpha_g) * (mixture.alpha_g * x).exp_m1()).exp_m1();
    Ok(mixture.w1 * weibull + mixture.w2 * lognormal + mixture.w3 * gompertz)
}

/// Death probability in month `k ≥ 1` given survival to its start.
pub fn death_prob(mixture: &LifetimeMixture, k: usize) -> f64 {
    let lo = k as f64 / 12.0 - 1.0 / 24.0;
    let hi = k as f64 / 12.0 + 1.0 / 24.0;
    let f_lo = lifetime_cdf(mixture, lo.max(0.0)).unwrap_or(0.0);
    let f_hi = lifetime_cdf(mixture, hi).unwrap_or(1.0);
    let tail = 1.0 - f_lo;
    if tail <= 1e-15 {
        return 1.0;
    }
    ((f_hi - f_lo) / tail).clamp(0.0, 1.0)
}

/// `p_k` for `k = 1..=max_lifetime_months`; the last month is fatal.
pub fn monthly_death_probs(spec: &TransplantSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut p: Vec<f64> = (1..=spec.max_lifetime_months).map(|k| death_prob(&spec.mixture, k)).collect();
    if let Some(last) = p.last_mut() {
        *last = 1.0;
    }
    Ok(p)
}

/// Death probabilities of survival states `1..=n`, the last forced to 1.
pub fn survival_death_probs(spec: &TransplantSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let first = spec.age_offset_months;
    let mut p: Vec<f64> = (first..first + spec.n_survival).map(|k| death_prob(&spec.mixture, k)).collect();
    *p.last_mut().expect("n_survival > 0") = 1.0;
    Ok(p)
}

/// Certainty-equivalent months of life `r(L) = −v(1)` of the survival chain
/// under mean-semideviation with weight `kappa`.
pub fn survival_value(spec: &TransplantSpec, kappa: f64) -> Result<f64> {
    let p = survival_death_probs(spec)?;
    let risk = RiskSpec::semideviation(kappa);
    risk.validate()?;
    let mut v = -1.0;
    for &pi in p.iter().rev().skip(1) {
        v = risk.sigma(0, &[-1.0, -1.0 + v], &[pi, 1.0 - pi])?;
    }
    Ok(-v)
}

/// The survival chain as a transient model: states `1..=n` then `D`.
pub fn survival_mdp(spec: &TransplantSpec) -> Result<TransientMdp> {
    let p = survival_death_probs(spec)?;
    let n = p.len();
    let mut names: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
    names.push("D".into());
    let mut b = MdpBuilder::new(names, n);
    for (i, &pi) in p.iter().enumerate() {
        let u = b.add_control(i, "continue");
        b.set_transition(i, u, n, pi).set_control_cost(i, u, -1.0);
        if i + 1 < n {
            b.set_transition(i, u, i + 1, 1.0 - pi);
        }
    }
    b.add_absorbing_loop("continue");
    b.build()
}

/// The three-state model `S, L, D` with `L` absorbed at cost `−r_l`.
pub fn transplant_mdp(spec: &TransplantSpec, r_l: f64) -> Result<TransientMdp> {
    spec.validate()?;
    let mut b = MdpBuilder::new(["S", "L", "D"], D);
    let w = b.add_control(S, "W");
    b.set_transition(S, w, S, spec.q_ss_w).set_transition(S, w, D, spec.q_sd_w).set_control_cost(S, w, -1.0);
    let t = b.add_control(S, "T");
    b.set_transition(S, t, L, spec.q_sl_t).set_transition(S, t, D, spec.q_sd_t);
    let c = b.add_control(L, "continue");
    b.set_transition(L, c, D, 1.0).set_control_cost(L, c, -r_l);
    b.add_absorbing_loop("continue");
    b.build()
}

#[derive(Debug, Clone)]
pub struct TransplantReport {
    pub r_l: f64,
    pub model: TransientMdp,
    pub deterministic: InfiniteHorizonSolution,
    /// `"W"` or `"T"`.
    pub deterministic_action: String,
    /// `J∞(S)` of always waiting and of transplanting at once.
    pub always_wait: f64,
    pub transplant_now: f64,
    pub randomized: Option<RandomizedSolution>,
}

impl TransplantReport {
    pub fn lambda_wait(&self) -> Option<f64> {
        self.randomized.as_ref().map(|r| r.policy.distribution(S)[WAIT])
    }
}

/// Solves the deterministic problem, and the randomized one if asked.
pub fn solve_transplant(spec: &TransplantSpec, randomized: bool) -> Result<TransplantReport> {
    let r_l = survival_value(spec, spec.kappa)?;
    let model = transplant_mdp(spec, r_l)?;
    let risk = spec.risk();
    let options = SolverOptions::default();
    let deterministic = value_iteration(&model, &risk, &options)?;
    let deterministic_action = model.controls(S)[deterministic.policy.control(S)].clone();
    let fixed = |u: usize| -> Result<f64> {
        let policy = DeterministicPolicy::new(vec![u, 0, 0]);
        Ok(evaluate_stationary_policy(&model, &risk, &policy, &options)?.value[S])
    };
    let always_wait = fixed(WAIT)?;
    let transplant_now = fixed(TRANSPLANT)?;
    let randomized = if randomized {
        let ro = RandomizedOptions { solver: options.trusting_transience(), ..Default::default() };
        Some(randomized_bellman_solve(&model, &risk, &ro)?)
    } else {
        None
    };
    Ok(TransplantReport { r_l, model, deterministic, deterministic_action, always_wait, transplant_now, randomized })
}
