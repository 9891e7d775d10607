//! Randomized decision rules.
//!
//! Under a randomized rule `λ` at state `x` both the control and the next
//! state are random, with joint law `[λ ∘ Q]_x(u, y) = λ(u) Q(y | x, u)`.
//! The one-step risk is the same mapping `σ` applied on the product space,
//! and the Bellman equation minimizes over the simplex `P(U(x))`:
//!
//! ```text
//! v(x) = min_{λ ∈ P(U(x))} σ(c(x, ·, ·) + v(·), x, [λ ∘ Q]_x)
//! ```
//!
//! The map `λ ↦ σ(…)` is nonlinear, so the inner problem is solved by a
//! derivative-free search: a barycentric grid over the simplex, then rounds
//! of local lattice refinement around the incumbent. The final lattice
//! spacing is reported as a proxy for the optimality gap. When a vertex of
//! the simplex ties with the best point found, the vertex wins.
//!
//! Cost of one inner solve grows quickly with `|U(x)|`: for three controls
//! the coarse grid has about 5000 points, and coarse resolution is reduced
//! for four or more so the grid stays near 20000 points.

use crate::error::{Error, Result};
use crate::mdp::{check_distribution, RandomizedPolicy, TransientMdp, ValueFunction, WeightFunction};
use crate::multikernel::{check_risk_transient, local_specs, Scope, TransienceReport, TransienceVerdict};
use crate::risk::{Local, RiskSpec};
use crate::dp::SolverOptions;

/// Probability measure on `(control, next state)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMeasure {
    pub support: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl JointMeasure {
    /// Evaluates `f(u, y)` on the support.
    pub fn lift(&self, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        self.support.iter().map(|&(u, y)| f(u, y)).collect()
    }

    /// Marginal law of the control, over `0..n_controls`.
    pub fn control_marginal(&self, n_controls: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_controls];
        for (&(u, _), w) in self.support.iter().zip(&self.weights) {
            out[u] += w;
        }
        out
    }

    /// Conditional law of the next state given control `u`.
    pub fn conditional(&self, u: usize, n_states: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_states];
        let mut total = 0.0;
        for (&(c, y), w) in self.support.iter().zip(&self.weights) {
            if c == u {
                out[y] += w;
                total += w;
            }
        }
        if total > 0.0 {
            out.iter_mut().for_each(|p| *p /= total);
        }
        out
    }
}

/// `[λ ∘ Q]_x`, keeping only pairs of positive weight.
pub fn compose_measure(model: &TransientMdp, x: usize, lambda: &[f64]) -> Result<JointMeasure> {
    check_distribution(lambda, model.n_controls(x)).map_err(|e| Error::InvalidPolicy(e))?;
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for (u, &l) in lambda.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        for (y, &q) in model.kernel_row(x, u).iter().enumerate() {
            if q > 0.0 {
                support.push((u, y));
                weights.push(l * q);
            }
        }
    }
    Ok(JointMeasure { support, weights })
}

/// `σ(φ, x, joint)` with `φ` given on the joint support.
pub fn sigma_joint(spec: &RiskSpec, x: usize, phi: &[f64], joint: &JointMeasure) -> Result<f64> {
    spec.sigma(x, phi, &joint.weights)
}

/// Best point found on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexMinimum {
    pub point: Vec<f64>,
    pub value: f64,
    /// Lattice spacing of the last round.
    pub spacing: f64,
}

/// Grid-plus-refinement minimization of `f` over the probability simplex
/// in `k` dimensions. `grid` is the number of points per edge for `k = 2`.
pub fn minimize_over_simplex(k: usize, grid: usize, refinements: usize, mut f: impl FnMut(&[f64]) -> f64) -> SimplexMinimum {
    assert!(k >= 1 && grid >= 2);
    if k == 1 {
        let value = f(&[1.0]);
        return SimplexMinimum { point: vec![1.0], value, spacing: 0.0 };
    }
    let resolution = coarse_resolution(k, grid - 1);
    let mut best_point = vec![0.0; k];
    let mut best = f64::INFINITY;
    let mut counts = vec![0usize; k];
    for_each_composition(resolution, &mut counts, 0, &mut |c| {
        let p: Vec<f64> = c.iter().map(|&n| n as f64 / resolution as f64).collect();
        let v = f(&p);
        if v < best {
            best = v;
            best_point = p;
        }
    });

    let mut spacing = 1.0 / resolution as f64;
    let radius_steps: i64 = match k {
        2 => ((grid - 1) / 2) as i64,
        3 => 10,
        _ => 4,
    };
    for _ in 0..refinements {
        let step = 2.0 * spacing / radius_steps as f64;
        let center = best_point.clone();
        let mut offsets = vec![-radius_steps; k - 1];
        loop {
            let mut p = vec![0.0; k];
            let mut free = 0.0;
            for i in 0..k - 1 {
                p[i] = center[i] + offsets[i] as f64 * step;
                free += p[i];
            }
            p[k - 1] = 1.0 - free;
            if p.iter().all(|&v| v >= -1e-15) {
                p.iter_mut().for_each(|v| *v = v.max(0.0));
                let v = f(&p);
                if v < best {
                    best = v;
                    best_point = p;
                }
            }
            if !advance(&mut offsets, radius_steps) {
                break;
            }
        }
        spacing = step;
    }

    // prefer a deterministic rule when it is as good as the best point
    for u in 0..k {
        let mut e = vec![0.0; k];
        e[u] = 1.0;
        let v = f(&e);
        if v <= best + 1e-12 * (1.0 + best.abs()) {
            return SimplexMinimum { point: e, value: v, spacing };
        }
    }
    SimplexMinimum { point: best_point, value: best, spacing }
}

fn coarse_resolution(k: usize, max: usize) -> usize {
    // number of compositions of n into k parts is C(n + k − 1, k − 1)
    let count = |n: usize| -> f64 { (1..k).map(|i| (n + i) as f64 / i as f64).product() };
    let mut n = max;
    while n > 1 && count(n) > 20_000.0 {
        n -= 1;
    }
    n
}

fn for_each_composition(n: usize, counts: &mut [usize], i: usize, f: &mut impl FnMut(&[usize])) {
    let used: usize = counts[..i].iter().sum();
    if i == counts.len() - 1 {
        counts[i] = n - used;
        f(counts);
        return;
    }
    for c in 0..=(n - used) {
        counts[i] = c;
        for_each_composition(n, counts, i + 1, f);
    }
}

fn advance(offsets: &mut [i64], r: i64) -> bool {
    for o in offsets.iter_mut() {
        if *o < r {
            *o += 1;
            return true;
        }
        *o = -r;
    }
    false
}

#[derive(Debug, Clone)]
pub struct RandomizedOptions {
    pub solver: SolverOptions,
    /// Points per simplex edge for two controls.
    pub grid: usize,
    pub refinements: usize,
}

impl Default for RandomizedOptions {
    fn default() -> Self {
        RandomizedOptions { solver: SolverOptions::default(), grid: 101, refinements: 3 }
    }
}

#[derive(Debug, Clone)]
pub struct RandomizedSolution {
    pub value: ValueFunction,
    pub policy: RandomizedPolicy,
    pub iterations: usize,
    /// `‖𝔇v − v‖_w` of the randomized operator, recomputed after the solve.
    pub residual: f64,
    /// Largest final lattice spacing over states in the last sweep.
    pub inner_gap: f64,
    pub transience: Option<TransienceReport>,
}

struct Sweep {
    values: Vec<f64>,
    rules: Vec<Vec<f64>>,
    gap: f64,
}

fn randomized_sweep(model: &TransientMdp, locals: &[Local], v: &[f64], grid: usize, refinements: usize) -> Sweep {
    let n = model.n_states();
    let mut values = vec![0.0; n];
    let mut rules: Vec<Vec<f64>> = (0..n)
        .map(|x| {
            let mut r = vec![0.0; model.n_controls(x)];
            r[0] = 1.0;
            r
        })
        .collect();
    let mut gap: f64 = 0.0;
    for &x in model.effective_states() {
        let k = model.n_controls(x);
        // full support (u, y) with Q(y|x,u) > 0; zero weights are ignored by σ
        let mut pairs = Vec::new();
        let mut phi = Vec::new();
        let mut q = Vec::new();
        for u in 0..k {
            let row = model.kernel_row(x, u);
            let cost = model.cost_row(x, u);
            for y in 0..n {
                if row[y] > 0.0 {
                    pairs.push(u);
                    phi.push(cost[y] + v[y]);
                    q.push(row[y]);
                }
            }
        }
        let mut weights = vec![0.0; q.len()];
        let best = minimize_over_simplex(k, grid, refinements, |lambda| {
            for ((w, &u), &qy) in weights.iter_mut().zip(&pairs).zip(&q) {
                *w = lambda[u] * qy;
            }
            locals[x].sigma(&phi, &weights)
        });
        values[x] = best.value;
        gap = gap.max(best.spacing);
        rules[x] = best.point;
    }
    Sweep { values, rules, gap }
}

/// Value iteration for the randomized Bellman equation.
///
/// Unless transience is assumed, the model is first checked for uniform
/// risk-transience over deterministic rules.
pub fn randomized_bellman_solve(model: &TransientMdp, spec: &RiskSpec, options: &RandomizedOptions) -> Result<RandomizedSolution> {
    let locals = local_specs(model, spec)?;
    let solver = &options.solver;
    let weight: WeightFunction = solver.weight_for(model);
    let transience = if solver.assume_transient {
        None
    } else {
        let r = check_risk_transient(model, spec, Scope::AllPolicies, &weight, &solver.transience_options())?;
        if r.verdict == TransienceVerdict::NonTransient {
            return Err(Error::Divergence {
                iteration: r.divergence_detected_at.unwrap_or(r.iterations),
                reason: "model is not uniformly risk-transient".into(),
                policy: None,
            });
        }
        Some(r)
    };
    let blowup = solver.blowup(&weight);
    let mut v = vec![0.0; model.n_states()];
    let mut residual = f64::INFINITY;
    for it in 1..=solver.max_iter {
        let sweep = randomized_sweep(model, &locals, &v, options.grid, options.refinements);
        residual = weight.distance(&sweep.values, &v);
        let norm = weight.norm(&sweep.values);
        v = sweep.values;
        if !(norm <= blowup) {
            return Err(Error::Divergence {
                iteration: it,
                reason: format!("value norm {norm:e} exceeded {blowup:e}"),
                policy: None,
            });
        }
        if residual <= solver.tol {
            let check = randomized_sweep(model, &locals, &v, options.grid, options.refinements);
            return Ok(RandomizedSolution {
                residual: weight.distance(&check.values, &v),
                value: ValueFunction::from_raw(v),
                policy: RandomizedPolicy::from_raw(check.rules),
                iterations: it,
                inner_gap: check.gap,
                transience,
            });
        }
    }
    Err(Error::Inconclusive { iterations: solver.max_iter, residual })
}

/// `‖𝔇v − v‖_w` for the randomized operator with the given inner settings.
pub fn randomized_residual(
    model: &TransientMdp,
    spec: &RiskSpec,
    v: &ValueFunction,
    weight: &WeightFunction,
    grid: usize,
    refinements: usize,
) -> Result<f64> {
    let locals = local_specs(model, spec)?;
    let sweep = randomized_sweep(model, &locals, v.as_slice(), grid, refinements);
    Ok(weight.distance(&sweep.values, v.as_slice()))
}
