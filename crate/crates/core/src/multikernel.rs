//! Risk multikernels and the risk-transience test.
//!
//! For a decision rule `π` the risk multikernel maps a state to the envelope
//! `A(x, Q(x, π(x)))`. The robust operator
//!
//! ```text
//! (Gv)(x) = max_{μ ∈ A(x, Q(x, π(x)))} ⟨w̄ + v, μ⟩,   (Gv)(x_A) = 0
//! ```
//!
//! iterated from `v = 0` yields the largest partial sums `Σ_{j ≤ k} M̃^j w`
//! over selectors `M` of the effective multikernel. The model is
//! risk-transient exactly when these stay bounded.
//!
//! The iteration is accelerated by periodically solving the linear system of
//! the current maximizing selector: if `(I − M̃) y = w` has a positive
//! solution, `y − w` is a valid lower bound on the limit and the iterate is
//! lifted to it; if it has none, `M̃` has spectral radius at least one and
//! its partial sums diverge, which certifies non-transience.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::mdp::{DeterministicPolicy, TransientMdp, ValueFunction, WeightFunction};
use crate::risk::{Local, RiskSpec};

/// Which decision rules the robust operator ranges over.
#[derive(Debug, Clone, Copy)]
pub enum Scope<'a> {
    /// One stationary deterministic policy.
    Policy(&'a DeterministicPolicy),
    /// Every deterministic decision rule; the operator also maximizes over
    /// `u ∈ U(x)` at each state.
    AllPolicies,
}

/// Maximizing selector of the effective multikernel for one argument.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskKernelSelector {
    /// Substochastic matrix over effective states, in the order of
    /// [`TransientMdp::effective_states`].
    pub matrix: DMatrix<f64>,
    /// Control used at each state (full state indexing).
    pub controls: Vec<usize>,
}

pub(crate) fn local_specs(model: &TransientMdp, spec: &RiskSpec) -> Result<Vec<Local>> {
    spec.validate_for(model.n_states())?;
    (0..model.n_states()).map(|x| spec.local(x)).collect()
}

pub(crate) fn check_scope(model: &TransientMdp, scope: &Scope<'_>) -> Result<()> {
    match scope {
        Scope::Policy(p) => p.check(model),
        Scope::AllPolicies => Ok(()),
    }
}

/// One application of the robust operator, writing the new function and the
/// selector matrix.
fn robust_step(
    model: &TransientMdp,
    locals: &[Local],
    scope: &Scope<'_>,
    w_bar: &[f64],
    v: &[f64],
    out: &mut [f64],
    selector: &mut DMatrix<f64>,
    controls: &mut [usize],
) {
    let n = model.n_states();
    let eff = model.effective_states();
    let arg: Vec<f64> = w_bar.iter().zip(v).map(|(w, v)| w + v).collect();
    let mut mu = vec![0.0; n];
    let mut best_mu = vec![0.0; n];
    for (i, &x) in eff.iter().enumerate() {
        let candidates: Vec<usize> = match scope {
            Scope::Policy(p) => vec![p.control(x)],
            Scope::AllPolicies => (0..model.n_controls(x)).collect(),
        };
        let mut best = f64::NEG_INFINITY;
        for u in candidates {
            let val = locals[x].selector(&arg, model.kernel_row(x, u), &mut mu);
            if val > best {
                best = val;
                controls[x] = u;
                std::mem::swap(&mut mu, &mut best_mu);
            }
        }
        out[x] = best;
        for (j, &y) in eff.iter().enumerate() {
            selector[(i, j)] = best_mu[y];
        }
    }
    out[model.absorbing()] = 0.0;
}

/// `v ↦ max_{μ ∈ A(x, Q(x,π(x)))} ⟨w̄ + v, μ⟩` on effective states, with the
/// attaining selector.
pub fn robust_apply(
    model: &TransientMdp,
    spec: &RiskSpec,
    scope: Scope<'_>,
    weight: &WeightFunction,
    v: &ValueFunction,
) -> Result<(ValueFunction, RiskKernelSelector)> {
    let locals = local_specs(model, spec)?;
    check_scope(model, &scope)?;
    let n = model.n_states();
    let k = model.effective_states().len();
    let mut out = vec![0.0; n];
    let mut matrix = DMatrix::zeros(k, k);
    let mut controls = match scope {
        Scope::Policy(p) => p.as_slice().to_vec(),
        Scope::AllPolicies => vec![0; n],
    };
    robust_step(model, &locals, &scope, weight.extended(), v.as_slice(), &mut out, &mut matrix, &mut controls);
    Ok((ValueFunction::from_raw(out), RiskKernelSelector { matrix, controls }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransienceVerdict {
    Transient,
    NonTransient,
    /// Neither converged nor diverged within the iteration budget.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransienceReport {
    pub verdict: TransienceVerdict,
    /// `‖d‖_w` of the last iterate: the bound `K` when transient.
    pub bound: f64,
    pub iterations: usize,
    pub divergence_detected_at: Option<usize>,
    /// Whether the check ranged over all decision rules.
    pub uniform: bool,
    /// `‖d_{k+1} − d_k‖_w` at exit.
    pub last_increment: f64,
    /// Limit of the partial-sum recursion, over all states (absorbing = 0).
    pub partial_sums: Vec<f64>,
}

impl TransienceReport {
    pub fn is_transient(&self) -> bool {
        self.verdict == TransienceVerdict::Transient
    }
}

#[derive(Debug, Clone)]
pub struct TransienceOptions {
    /// Convergence tolerance on `‖d_{k+1} − d_k‖_w`, relative to
    /// `max(1, ‖d_{k+1}‖_w)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Defaults to `1e12 · max w`.
    pub blowup_threshold: Option<f64>,
    /// Iterations between selector solves; 0 turns acceleration off.
    pub acceleration_period: usize,
}

impl Default for TransienceOptions {
    fn default() -> Self {
        TransienceOptions { tol: 1e-10, max_iter: 100_000, blowup_threshold: None, acceleration_period: 32 }
    }
}

/// Solves `(I − M̃) y = w` and returns `y − w = Σ_{j ≥ 1} M̃^j w` when the
/// solution is finite, positive and below `limit`.
fn selector_partial_sum(matrix: &DMatrix<f64>, w_eff: &DVector<f64>, limit: f64) -> Option<DVector<f64>> {
    let k = matrix.nrows();
    let system = DMatrix::identity(k, k) - matrix;
    let y = system.lu().solve(w_eff)?;
    let ok = y.iter().zip(w_eff.iter()).all(|(y, w)| y.is_finite() && *y > 0.0 && y / w <= limit);
    ok.then(|| y - w_eff)
}

/// Decides risk-transience of `(model, σ)` under one policy or uniformly.
pub fn check_risk_transient(
    model: &TransientMdp,
    spec: &RiskSpec,
    scope: Scope<'_>,
    weight: &WeightFunction,
    options: &TransienceOptions,
) -> Result<TransienceReport> {
    let locals = local_specs(model, spec)?;
    check_scope(model, &scope)?;
    let n = model.n_states();
    let eff = model.effective_states();
    let k = eff.len();
    let blowup = options.blowup_threshold.unwrap_or(1e12 * weight.max());
    let w_eff = DVector::from_iterator(k, eff.iter().map(|&x| weight.at(x)));
    let uniform = matches!(scope, Scope::AllPolicies);

    let mut d = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut matrix = DMatrix::zeros(k, k);
    let mut controls = match scope {
        Scope::Policy(p) => p.as_slice().to_vec(),
        Scope::AllPolicies => vec![0; n],
    };
    let mut increment = f64::INFINITY;
    let report = |verdict, d: &[f64], it, at, inc| TransienceReport {
        verdict,
        bound: weight.norm(d),
        iterations: it,
        divergence_detected_at: at,
        uniform,
        last_increment: inc,
        partial_sums: d.to_vec(),
    };

    for it in 1..=options.max_iter {
        robust_step(model, &locals, &scope, weight.extended(), &d, &mut next, &mut matrix, &mut controls);
        let norm = weight.norm(&next);
        increment = weight.distance(&next, &d);
        std::mem::swap(&mut d, &mut next);
        if !(norm <= blowup) {
            return Ok(report(TransienceVerdict::NonTransient, &d, it, Some(it), increment));
        }
        if increment <= options.tol * norm.max(1.0) {
            return Ok(report(TransienceVerdict::Transient, &d, it, None, increment));
        }
        if options.acceleration_period > 0 && it % options.acceleration_period == 0 {
            match selector_partial_sum(&matrix, &w_eff, blowup) {
                None => return Ok(report(TransienceVerdict::NonTransient, &d, it, Some(it), increment)),
                Some(lower) => {
                    for (i, &x) in eff.iter().enumerate() {
                        d[x] = d[x].max(lower[i]);
                    }
                }
            }
        }
    }
    Ok(report(TransienceVerdict::Inconclusive, &d, options.max_iter, None, increment))
}
