//! Finite- and infinite-horizon risk-averse dynamic programming.
//!
//! The two operators used throughout are
//!
//! ```text
//! (𝔇_π v)(x) = σ(c(x, π(x), ·) + v(·), x, Q(x, π(x)))
//! (𝔇 v)(x)   = min_{u ∈ U(x)} σ(c(x, u, ·) + v(·), x, Q(x, u))
//! ```
//!
//! with `v(x_A) = 0`. Finite-horizon problems are solved by backward
//! recursion. Infinite-horizon values are fixed points of these operators,
//! reached by iterating from zero; convergence is measured in the weighted
//! sup norm `‖·‖_w`.

use crate::error::{Error, Result};
use crate::mdp::{DeterministicPolicy, TransientMdp, ValueFunction, WeightFunction};
use crate::multikernel::{check_risk_transient, local_specs, Scope, TransienceOptions, TransienceReport, TransienceVerdict};
use crate::risk::{Local, RiskSpec};

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Defaults to `w ≡ 1`.
    pub weight: Option<WeightFunction>,
    /// Defaults to `1e12 · max w`.
    pub blowup_threshold: Option<f64>,
    /// Skip the risk-transience precheck.
    pub assume_transient: bool,
    /// Keep every iterate in [`InfiniteHorizonSolution::trace`].
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            max_iter: 100_000,
            weight: None,
            blowup_threshold: None,
            assume_transient: false,
            record_trace: false,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_weight(mut self, weight: WeightFunction) -> Self {
        self.weight = Some(weight);
        self
    }

    pub fn trusting_transience(mut self) -> Self {
        self.assume_transient = true;
        self
    }

    pub fn recording(mut self) -> Self {
        self.record_trace = true;
        self
    }

    pub(crate) fn weight_for(&self, model: &TransientMdp) -> WeightFunction {
        self.weight.clone().unwrap_or_else(|| WeightFunction::unit(model))
    }

    pub(crate) fn blowup(&self, weight: &WeightFunction) -> f64 {
        self.blowup_threshold.unwrap_or(1e12 * weight.max())
    }

    pub(crate) fn transience_options(&self) -> TransienceOptions {
        TransienceOptions { max_iter: self.max_iter, blowup_threshold: self.blowup_threshold, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct FiniteHorizonSolution {
    /// `values[t - 1]` is `v_t` for stages `t = 1..=T`.
    pub values: Vec<ValueFunction>,
    /// `policies[t - 1]` is the decision rule used at stage `t`.
    pub policies: Vec<DeterministicPolicy>,
    pub terminal: ValueFunction,
}

impl FiniteHorizonSolution {
    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn first_stage(&self) -> &ValueFunction {
        &self.values[0]
    }

    /// Largest deviation from the stage-wise DP equations, recomputed.
    pub fn dp_error(&self, model: &TransientMdp, spec: &RiskSpec) -> Result<f64> {
        let locals = local_specs(model, spec)?;
        let mut err: f64 = 0.0;
        for t in 0..self.horizon() {
            let next = if t + 1 < self.horizon() { &self.values[t + 1] } else { &self.terminal };
            let (v, _) = bellman_min(model, &locals, next.as_slice(), None, 0.0);
            for (a, b) in v.iter().zip(self.values[t].as_slice()) {
                err = err.max((a - b).abs());
            }
        }
        Ok(err)
    }
}

#[derive(Debug, Clone)]
pub struct InfiniteHorizonSolution {
    pub value: ValueFunction,
    pub policy: DeterministicPolicy,
    /// Sweeps for value iteration and evaluation; improvement steps for
    /// policy iteration.
    pub iterations: usize,
    /// `‖𝔇v − v‖_w` (or `‖𝔇_π v − v‖_w` for policy evaluation), recomputed
    /// after the solve.
    pub residual: f64,
    /// Result of the risk-transience precheck, when one was run.
    pub transience: Option<TransienceReport>,
    /// Iterates, when [`SolverOptions::record_trace`] is set.
    pub trace: Vec<Vec<f64>>,
}

fn policy_operator(model: &TransientMdp, locals: &[Local], policy: &DeterministicPolicy, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; model.n_states()];
    for &x in model.effective_states() {
        let u = policy.control(x);
        out[x] = locals[x].sigma(&model.cost_to_go(x, u, v), model.kernel_row(x, u));
    }
    out
}

/// `𝔇 v` and its minimizing controls. With an incumbent the incumbent
/// control is kept unless another one is better by more than `margin`;
/// otherwise ties go to the lowest index.
fn bellman_min(
    model: &TransientMdp,
    locals: &[Local],
    v: &[f64],
    incumbent: Option<&DeterministicPolicy>,
    margin: f64,
) -> (Vec<f64>, Vec<usize>) {
    let n = model.n_states();
    let mut out = vec![0.0; n];
    let mut arg = vec![0; n];
    if let Some(p) = incumbent {
        arg[model.absorbing()] = p.control(model.absorbing());
    }
    for &x in model.effective_states() {
        let q: Vec<f64> = (0..model.n_controls(x))
            .map(|u| locals[x].sigma(&model.cost_to_go(x, u, v), model.kernel_row(x, u)))
            .collect();
        let mut best = 0;
        for (u, &val) in q.iter().enumerate() {
            if val < q[best] {
                best = u;
            }
        }
        if let Some(p) = incumbent {
            let keep = p.control(x);
            if q[keep] <= q[best] + margin * (1.0 + q[keep].abs()) {
                best = keep;
            }
        }
        out[x] = q[best];
        arg[x] = best;
    }
    (out, arg)
}

/// One application of `𝔇`, with the greedy (lowest-index) policy.
pub fn apply_bellman(model: &TransientMdp, spec: &RiskSpec, v: &ValueFunction) -> Result<(ValueFunction, DeterministicPolicy)> {
    let locals = local_specs(model, spec)?;
    let (out, arg) = bellman_min(model, &locals, v.as_slice(), None, 0.0);
    Ok((ValueFunction::from_raw(out), DeterministicPolicy::new(arg)))
}

/// One application of `𝔇_π`.
pub fn apply_policy(model: &TransientMdp, spec: &RiskSpec, policy: &DeterministicPolicy, v: &ValueFunction) -> Result<ValueFunction> {
    let locals = local_specs(model, spec)?;
    policy.check(model)?;
    Ok(ValueFunction::from_raw(policy_operator(model, &locals, policy, v.as_slice())))
}

/// `‖𝔇v − v‖_w`.
pub fn bellman_residual(model: &TransientMdp, spec: &RiskSpec, v: &ValueFunction, weight: &WeightFunction) -> Result<f64> {
    let (next, _) = apply_bellman(model, spec, v)?;
    Ok(weight.distance(next.as_slice(), v.as_slice()))
}

fn check_terminal(model: &TransientMdp, terminal: &ValueFunction) -> Result<()> {
    if terminal.as_slice().len() != model.n_states() {
        return Err(Error::LengthMismatch { expected: model.n_states(), found: terminal.as_slice().len() });
    }
    if terminal[model.absorbing()] != 0.0 {
        return Err(Error::InvalidInput("terminal value must vanish at the absorbing state".into()));
    }
    Ok(())
}

/// Nested risk `J_T` of a Markov policy: `stages[t - 1]` acts at stage `t`.
pub fn evaluate_markov_policy(
    model: &TransientMdp,
    spec: &RiskSpec,
    stages: &[DeterministicPolicy],
    terminal: &ValueFunction,
) -> Result<ValueFunction> {
    let locals = local_specs(model, spec)?;
    if stages.is_empty() {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    check_terminal(model, terminal)?;
    for p in stages {
        p.check(model)?;
    }
    let mut v = terminal.as_slice().to_vec();
    for p in stages.iter().rev() {
        v = policy_operator(model, &locals, p, &v);
    }
    Ok(ValueFunction::from_raw(v))
}

/// Nested risk `J_T(Π, ·)` of a stationary policy over `horizon` stages.
pub fn evaluate_nested_risk(
    model: &TransientMdp,
    spec: &RiskSpec,
    policy: &DeterministicPolicy,
    horizon: usize,
    terminal: &ValueFunction,
) -> Result<ValueFunction> {
    let stages = vec![policy.clone(); horizon];
    evaluate_markov_policy(model, spec, &stages, terminal)
}

/// Backward recursion `v_t = 𝔇 v_{t+1}`, `v_{T+1} = terminal`.
pub fn solve_finite_horizon(
    model: &TransientMdp,
    spec: &RiskSpec,
    horizon: usize,
    terminal: &ValueFunction,
) -> Result<FiniteHorizonSolution> {
    let locals = local_specs(model, spec)?;
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    check_terminal(model, terminal)?;
    let mut values = Vec::with_capacity(horizon);
    let mut policies = Vec::with_capacity(horizon);
    let mut v = terminal.as_slice().to_vec();
    for _ in 0..horizon {
        let (next, arg) = bellman_min(model, &locals, &v, None, 0.0);
        values.push(ValueFunction::from_raw(next.clone()));
        policies.push(DeterministicPolicy::new(arg));
        v = next;
    }
    values.reverse();
    policies.reverse();
    Ok(FiniteHorizonSolution { values, policies, terminal: terminal.clone() })
}

fn precheck(
    model: &TransientMdp,
    spec: &RiskSpec,
    scope: Scope<'_>,
    weight: &WeightFunction,
    options: &SolverOptions,
) -> Result<Option<TransienceReport>> {
    if options.assume_transient {
        return Ok(None);
    }
    let report = check_risk_transient(model, spec, scope, weight, &options.transience_options())?;
    if report.verdict == TransienceVerdict::NonTransient {
        let (reason, policy) = match scope {
            Scope::Policy(p) => ("policy is not risk-transient".to_string(), Some(p.as_slice().to_vec())),
            Scope::AllPolicies => ("model is not uniformly risk-transient".to_string(), None),
        };
        return Err(Error::Divergence {
            iteration: report.divergence_detected_at.unwrap_or(report.iterations),
            reason,
            policy,
        });
    }
    Ok(Some(report))
}

/// Iterates `v ← T v` from zero until `‖Δ‖_w ≤ tol`.
fn fixed_point(
    mut step: impl FnMut(&[f64]) -> Vec<f64>,
    n: usize,
    weight: &WeightFunction,
    options: &SolverOptions,
    policy: Option<&DeterministicPolicy>,
    trace: &mut Vec<Vec<f64>>,
) -> Result<(Vec<f64>, usize)> {
    let blowup = options.blowup(weight);
    let mut v = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 1..=options.max_iter {
        let next = step(&v);
        residual = weight.distance(&next, &v);
        let norm = weight.norm(&next);
        if options.record_trace {
            trace.push(next.clone());
        }
        v = next;
        if !(norm <= blowup) {
            return Err(Error::Divergence {
                iteration: it,
                reason: format!("value norm {norm:e} exceeded {blowup:e}"),
                policy: policy.map(|p| p.as_slice().to_vec()),
            });
        }
        if residual <= options.tol {
            return Ok((v, it));
        }
    }
    Err(Error::Inconclusive { iterations: options.max_iter, residual })
}

/// Infinite-horizon risk `J_∞(Π, ·)` of a stationary policy, as the fixed
/// point of `𝔇_π` reached from zero.
pub fn evaluate_stationary_policy(
    model: &TransientMdp,
    spec: &RiskSpec,
    policy: &DeterministicPolicy,
    options: &SolverOptions,
) -> Result<InfiniteHorizonSolution> {
    let locals = local_specs(model, spec)?;
    policy.check(model)?;
    let weight = options.weight_for(model);
    let transience = precheck(model, spec, Scope::Policy(policy), &weight, options)?;
    let mut trace = Vec::new();
    let (v, iterations) = fixed_point(
        |v| policy_operator(model, &locals, policy, v),
        model.n_states(),
        &weight,
        options,
        Some(policy),
        &mut trace,
    )?;
    let residual = weight.distance(&policy_operator(model, &locals, policy, &v), &v);
    Ok(InfiniteHorizonSolution {
        value: ValueFunction::from_raw(v),
        policy: policy.clone(),
        iterations,
        residual,
        transience,
        trace,
    })
}

/// Risk-averse policy iteration: evaluate, then improve greedily keeping the
/// incumbent control on ties. Stops when the policy repeats or the value
/// decreases by less than `tol`.
///
/// With `record_trace` the trace holds the value of each evaluated policy.
pub fn policy_iteration(
    model: &TransientMdp,
    spec: &RiskSpec,
    initial: &DeterministicPolicy,
    options: &SolverOptions,
) -> Result<InfiniteHorizonSolution> {
    let locals = local_specs(model, spec)?;
    initial.check(model)?;
    let weight = options.weight_for(model);
    let inner = SolverOptions { record_trace: false, ..options.clone() };
    let mut policy = initial.clone();
    let mut trace = Vec::new();
    let mut current = evaluate_stationary_policy(model, spec, &policy, &inner)?;
    let transience = current.transience.clone();
    if options.record_trace {
        trace.push(current.value.as_slice().to_vec());
    }
    for round in 1..=options.max_iter {
        let (_, arg) = bellman_min(model, &locals, current.value.as_slice(), Some(&policy), 1e-12);
        let improved = DeterministicPolicy::new(arg);
        if improved == policy {
            return finish_pi(model, &locals, policy, current.value, round, &weight, transience, trace);
        }
        let next = evaluate_stationary_policy(model, spec, &improved, &inner)?;
        if options.record_trace {
            trace.push(next.value.as_slice().to_vec());
        }
        let decrease = current
            .value
            .as_slice()
            .iter()
            .zip(next.value.as_slice())
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max);
        policy = improved;
        current = next;
        if decrease < options.tol {
            return finish_pi(model, &locals, policy, current.value, round, &weight, transience, trace);
        }
    }
    Err(Error::Inconclusive { iterations: options.max_iter, residual: f64::NAN })
}

#[allow(clippy::too_many_arguments)]
fn finish_pi(
    model: &TransientMdp,
    locals: &[Local],
    policy: DeterministicPolicy,
    value: ValueFunction,
    iterations: usize,
    weight: &WeightFunction,
    transience: Option<TransienceReport>,
    trace: Vec<Vec<f64>>,
) -> Result<InfiniteHorizonSolution> {
    let (next, _) = bellman_min(model, locals, value.as_slice(), None, 0.0);
    let residual = weight.distance(&next, value.as_slice());
    Ok(InfiniteHorizonSolution { value, policy, iterations, residual, transience, trace })
}

/// Value iteration `v^{k+1} = 𝔇 v^k` from `v^0 = 0`, followed by the greedy
/// policy of the limit.
pub fn value_iteration(model: &TransientMdp, spec: &RiskSpec, options: &SolverOptions) -> Result<InfiniteHorizonSolution> {
    let locals = local_specs(model, spec)?;
    let weight = options.weight_for(model);
    let transience = precheck(model, spec, Scope::AllPolicies, &weight, options)?;
    let mut trace = Vec::new();
    let (v, iterations) = fixed_point(
        |v| bellman_min(model, &locals, v, None, 0.0).0,
        model.n_states(),
        &weight,
        options,
        None,
        &mut trace,
    )?;
    let (next, arg) = bellman_min(model, &locals, &v, None, 0.0);
    let residual = weight.distance(&next, &v);
    Ok(InfiniteHorizonSolution {
        value: ValueFunction::from_raw(v),
        policy: DeterministicPolicy::new(arg),
        iterations,
        residual,
        transience,
        trace,
    })
}
