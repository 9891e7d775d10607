//! Finite transient controlled Markov models.
//!
//! A model has finitely many states, one of which is absorbing: every control
//! available there keeps the chain in place at zero cost. All other states are
//! the *effective* states. Models are assembled with [`MdpBuilder`], which
//! reports structural problems as a list of [`Violation`]s, and frozen into an
//! immutable [`TransientMdp`] once they validate.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tolerance on kernel row sums.
pub const PROBABILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    TooFewStates,
    AbsorbingOutOfRange,
    NoControls,
    NegativeProbability(f64),
    RowNotStochastic(f64),
    AbsorbingNotAbsorbing,
    AbsorbingCostNonzero(f64),
    NonFiniteCost,
}

/// One broken invariant, with the coordinates where it was found.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub state: Option<usize>,
    pub control: Option<usize>,
    pub target: Option<usize>,
}

impl Violation {
    fn at(kind: ViolationKind, state: usize, control: Option<usize>, target: Option<usize>) -> Self {
        Violation { kind, state: Some(state), control, target }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::TooFewStates => write!(f, "model needs at least two states")?,
            ViolationKind::AbsorbingOutOfRange => write!(f, "absorbing state index out of range")?,
            ViolationKind::NoControls => write!(f, "state has no controls")?,
            ViolationKind::NegativeProbability(p) => write!(f, "negative probability {p}")?,
            ViolationKind::RowNotStochastic(s) => write!(f, "row not stochastic (sum {s})")?,
            ViolationKind::AbsorbingNotAbsorbing => write!(f, "absorbing state can be left")?,
            ViolationKind::AbsorbingCostNonzero(c) => write!(f, "absorbing cost nonzero ({c})")?,
            ViolationKind::NonFiniteCost => write!(f, "cost is not finite")?,
        }
        let mut coords = Vec::new();
        if let Some(x) = self.state {
            coords.push(format!("x={x}"));
        }
        if let Some(u) = self.control {
            coords.push(format!("u={u}"));
        }
        if let Some(y) = self.target {
            coords.push(format!("y={y}"));
        }
        if !coords.is_empty() {
            write!(f, " at ({})", coords.join(", "))?;
        }
        Ok(())
    }
}

/// Mutable model description. Unset transitions are 0 and unset costs are 0.
#[derive(Debug, Clone)]
pub struct MdpBuilder {
    states: Vec<String>,
    absorbing: usize,
    controls: Vec<Vec<String>>,
    kernel: Vec<Vec<Vec<f64>>>,
    cost: Vec<Vec<Vec<f64>>>,
}

impl MdpBuilder {
    pub fn new<S: Into<String>>(states: impl IntoIterator<Item = S>, absorbing: usize) -> Self {
        let states: Vec<String> = states.into_iter().map(Into::into).collect();
        let n = states.len();
        MdpBuilder {
            states,
            absorbing,
            controls: vec![Vec::new(); n],
            kernel: vec![Vec::new(); n],
            cost: vec![Vec::new(); n],
        }
    }

    /// States named `0..n`.
    pub fn with_indexed_states(n: usize, absorbing: usize) -> Self {
        Self::new((0..n).map(|i| i.to_string()), absorbing)
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// Adds a control at state `x` and returns its index within `U(x)`.
    pub fn add_control(&mut self, x: usize, name: impl Into<String>) -> usize {
        let n = self.states.len();
        self.controls[x].push(name.into());
        self.kernel[x].push(vec![0.0; n]);
        self.cost[x].push(vec![0.0; n]);
        self.controls[x].len() - 1
    }

    /// Adds the zero-cost self loop at the absorbing state.
    pub fn add_absorbing_loop(&mut self, name: impl Into<String>) -> usize {
        let a = self.absorbing;
        let u = self.add_control(a, name);
        self.kernel[a][u][a] = 1.0;
        u
    }

    pub fn set_transition(&mut self, x: usize, u: usize, y: usize, p: f64) -> &mut Self {
        self.kernel[x][u][y] = p;
        self
    }

    pub fn set_cost(&mut self, x: usize, u: usize, y: usize, c: f64) -> &mut Self {
        self.cost[x][u][y] = c;
        self
    }

    /// Sets the same cost on every transition out of `(x, u)`.
    pub fn set_control_cost(&mut self, x: usize, u: usize, c: f64) -> &mut Self {
        self.cost[x][u].iter_mut().for_each(|v| *v = c);
        self
    }

    pub fn set_row(&mut self, x: usize, u: usize, row: &[f64]) -> &mut Self {
        self.kernel[x][u].copy_from_slice(row);
        self
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn control_index(&self, x: usize, name: &str) -> Option<usize> {
        self.controls[x].iter().position(|s| s == name)
    }

    pub fn control_count(&self, x: usize) -> usize {
        self.controls[x].len()
    }

    /// All invariant violations; empty means the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.states.len();
        if n < 2 {
            out.push(Violation { kind: ViolationKind::TooFewStates, state: None, control: None, target: None });
        }
        if self.absorbing >= n {
            out.push(Violation {
                kind: ViolationKind::AbsorbingOutOfRange,
                state: Some(self.absorbing),
                control: None,
                target: None,
            });
        }
        for x in 0..n {
            if self.controls[x].is_empty() {
                out.push(Violation::at(ViolationKind::NoControls, x, None, None));
            }
            for u in 0..self.controls[x].len() {
                let row = &self.kernel[x][u];
                let mut sum = 0.0;
                for (y, &p) in row.iter().enumerate() {
                    if !(p >= 0.0) {
                        out.push(Violation::at(ViolationKind::NegativeProbability(p), x, Some(u), Some(y)));
                    } else {
                        sum += p;
                    }
                }
                if (sum - 1.0).abs() > PROBABILITY_TOL {
                    out.push(Violation::at(ViolationKind::RowNotStochastic(sum), x, Some(u), None));
                }
                for (y, c) in self.cost[x][u].iter().enumerate() {
                    if !c.is_finite() {
                        out.push(Violation::at(ViolationKind::NonFiniteCost, x, Some(u), Some(y)));
                    }
                }
                if x == self.absorbing {
                    if (row[x] - 1.0).abs() > PROBABILITY_TOL {
                        out.push(Violation::at(ViolationKind::AbsorbingNotAbsorbing, x, Some(u), None));
                    }
                    let c = self.cost[x][u][x];
                    if c != 0.0 {
                        out.push(Violation::at(ViolationKind::AbsorbingCostNonzero(c), x, Some(u), Some(x)));
                    }
                }
            }
        }
        out
    }

    /// Validates and freezes the model. Kernel rows are renormalized to sum
    /// to exactly one after passing the tolerance check.
    pub fn build(mut self) -> Result<TransientMdp> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidModel(violations));
        }
        for rows in &mut self.kernel {
            for row in rows {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= s);
            }
        }
        let a = self.absorbing;
        for row in &mut self.kernel[a] {
            row.iter_mut().for_each(|p| *p = 0.0);
            row[a] = 1.0;
        }
        let effective = (0..self.states.len()).filter(|&x| x != a).collect();
        Ok(TransientMdp {
            states: self.states,
            absorbing: a,
            controls: self.controls,
            kernel: self.kernel,
            cost: self.cost,
            effective,
        })
    }
}

/// A validated, immutable transient model.
#[derive(Debug, Clone)]
pub struct TransientMdp {
    states: Vec<String>,
    absorbing: usize,
    controls: Vec<Vec<String>>,
    kernel: Vec<Vec<Vec<f64>>>,
    cost: Vec<Vec<Vec<f64>>>,
    effective: Vec<usize>,
}

impl TransientMdp {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn absorbing(&self) -> usize {
        self.absorbing
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn state_name(&self, x: usize) -> &str {
        &self.states[x]
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    /// Non-absorbing states in increasing index order.
    pub fn effective_states(&self) -> &[usize] {
        &self.effective
    }

    pub fn controls(&self, x: usize) -> &[String] {
        &self.controls[x]
    }

    pub fn n_controls(&self, x: usize) -> usize {
        self.controls[x].len()
    }

    pub fn control_index(&self, x: usize, name: &str) -> Option<usize> {
        self.controls[x].iter().position(|s| s == name)
    }

    /// `Q(·|x,u)` over all states.
    pub fn kernel_row(&self, x: usize, u: usize) -> &[f64] {
        &self.kernel[x][u]
    }

    /// `c(x,u,·)` over all states.
    pub fn cost_row(&self, x: usize, u: usize) -> &[f64] {
        &self.cost[x][u]
    }

    /// Always empty for a built model; kept so callers can re-check.
    pub fn validate(&self) -> Vec<Violation> {
        self.to_builder().validate()
    }

    pub fn to_builder(&self) -> MdpBuilder {
        MdpBuilder {
            states: self.states.clone(),
            absorbing: self.absorbing,
            controls: self.controls.clone(),
            kernel: self.kernel.clone(),
            cost: self.cost.clone(),
        }
    }

    /// `c(x,u,·) + v(·)`, the argument of the one-step risk mapping.
    pub fn cost_to_go(&self, x: usize, u: usize, v: &[f64]) -> Vec<f64> {
        self.cost[x][u].iter().zip(v).map(|(c, v)| c + v).collect()
    }

    /// Substochastic kernel `Q̃^π` over effective states, in the order of
    /// [`effective_states`](Self::effective_states).
    pub fn effective_restriction(&self, policy: &DeterministicPolicy) -> Result<DMatrix<f64>> {
        policy.check(self)?;
        let eff = &self.effective;
        Ok(DMatrix::from_fn(eff.len(), eff.len(), |i, j| {
            let x = eff[i];
            self.kernel[x][policy.control(x)][eff[j]]
        }))
    }

    /// Number of deterministic stationary policies.
    pub fn policy_count(&self) -> usize {
        self.controls.iter().map(Vec::len).product()
    }
}

/// Real function on states with `v(x_A) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    values: Vec<f64>,
}

impl ValueFunction {
    pub fn zeros(model: &TransientMdp) -> Self {
        ValueFunction { values: vec![0.0; model.n_states()] }
    }

    /// Fails unless the vector has one entry per state and is exactly zero at
    /// the absorbing state.
    pub fn new(model: &TransientMdp, values: Vec<f64>) -> Result<Self> {
        if values.len() != model.n_states() {
            return Err(Error::LengthMismatch { expected: model.n_states(), found: values.len() });
        }
        if values[model.absorbing()] != 0.0 {
            return Err(Error::InvalidInput(format!(
                "value at absorbing state must be 0, got {}",
                values[model.absorbing()]
            )));
        }
        Ok(ValueFunction { values })
    }

    /// Same as [`new`](Self::new) but overwrites the absorbing entry with 0.
    pub fn pinned(model: &TransientMdp, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != model.n_states() {
            return Err(Error::LengthMismatch { expected: model.n_states(), found: values.len() });
        }
        values[model.absorbing()] = 0.0;
        Ok(ValueFunction { values })
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        ValueFunction { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize) -> f64 {
        self.values[x]
    }
}

impl std::ops::Index<usize> for ValueFunction {
    type Output = f64;
    fn index(&self, x: usize) -> &f64 {
        &self.values[x]
    }
}

/// Stationary deterministic decision rule: one control index per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DeterministicPolicy(Vec<usize>);

impl DeterministicPolicy {
    pub fn new(controls: Vec<usize>) -> Self {
        DeterministicPolicy(controls)
    }

    /// Picks control 0 everywhere.
    pub fn first_controls(model: &TransientMdp) -> Self {
        DeterministicPolicy(vec![0; model.n_states()])
    }

    pub fn control(&self, x: usize) -> usize {
        self.0[x]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn check(&self, model: &TransientMdp) -> Result<()> {
        if self.0.len() != model.n_states() {
            return Err(Error::LengthMismatch { expected: model.n_states(), found: self.0.len() });
        }
        for (x, &u) in self.0.iter().enumerate() {
            if u >= model.n_controls(x) {
                return Err(Error::InvalidPolicy(format!(
                    "control index {u} not available at state {}",
                    model.state_name(x)
                )));
            }
        }
        Ok(())
    }

    /// Every deterministic stationary policy, in lexicographic order.
    pub fn enumerate(model: &TransientMdp) -> Vec<DeterministicPolicy> {
        let mut out = vec![Vec::with_capacity(model.n_states())];
        for x in 0..model.n_states() {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..model.n_controls(x)).map(move |u| {
                        let mut p = prefix.clone();
                        p.push(u);
                        p
                    })
                })
                .collect();
        }
        out.into_iter().map(DeterministicPolicy).collect()
    }
}

/// Stationary randomized decision rule: a distribution over `U(x)` per state.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedPolicy(Vec<Vec<f64>>);

impl RandomizedPolicy {
    pub fn new(model: &TransientMdp, probs: Vec<Vec<f64>>) -> Result<Self> {
        let p = RandomizedPolicy(probs);
        p.check(model)?;
        Ok(p)
    }

    pub fn from_deterministic(model: &TransientMdp, policy: &DeterministicPolicy) -> Self {
        RandomizedPolicy(
            (0..model.n_states())
                .map(|x| {
                    let mut v = vec![0.0; model.n_controls(x)];
                    v[policy.control(x)] = 1.0;
                    v
                })
                .collect(),
        )
    }

    pub(crate) fn from_raw(probs: Vec<Vec<f64>>) -> Self {
        RandomizedPolicy(probs)
    }

    pub fn distribution(&self, x: usize) -> &[f64] {
        &self.0[x]
    }

    /// `Some(u)` when the rule at `x` is a Dirac measure.
    pub fn vertex(&self, x: usize) -> Option<usize> {
        let d = &self.0[x];
        d.iter().position(|&p| p == 1.0).filter(|_| d.iter().filter(|&&p| p != 0.0).count() == 1)
    }

    pub fn check(&self, model: &TransientMdp) -> Result<()> {
        if self.0.len() != model.n_states() {
            return Err(Error::LengthMismatch { expected: model.n_states(), found: self.0.len() });
        }
        for (x, d) in self.0.iter().enumerate() {
            check_distribution(d, model.n_controls(x))
                .map_err(|e| Error::InvalidPolicy(format!("state {}: {e}", model.state_name(x))))?;
        }
        Ok(())
    }
}

pub(crate) fn check_distribution(d: &[f64], len: usize) -> std::result::Result<(), String> {
    if d.len() != len {
        return Err(format!("expected {len} probabilities, found {}", d.len()));
    }
    if d.iter().any(|&p| !(p >= 0.0)) {
        return Err("negative or NaN probability".into());
    }
    let s: f64 = d.iter().sum();
    if (s - 1.0).abs() > PROBABILITY_TOL {
        return Err(format!("probabilities sum to {s}"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Deterministic(DeterministicPolicy),
    Randomized(RandomizedPolicy),
}

/// Weight function `w ≥ 1` on effective states, stored over all states with
/// the absorbing entry fixed at 0 (the extension `w̄`).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFunction {
    extended: Vec<f64>,
    absorbing: usize,
}

impl WeightFunction {
    pub fn unit(model: &TransientMdp) -> Self {
        let mut extended = vec![1.0; model.n_states()];
        extended[model.absorbing()] = 0.0;
        WeightFunction { extended, absorbing: model.absorbing() }
    }

    /// `values` has one entry per state; the absorbing entry is ignored.
    pub fn new(model: &TransientMdp, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != model.n_states() {
            return Err(Error::LengthMismatch { expected: model.n_states(), found: values.len() });
        }
        for &x in model.effective_states() {
            if !(values[x] >= 1.0) || !values[x].is_finite() {
                return Err(Error::InvalidInput(format!(
                    "weight at state {} must be a finite value >= 1, got {}",
                    model.state_name(x),
                    values[x]
                )));
            }
        }
        values[model.absorbing()] = 0.0;
        Ok(WeightFunction { extended: values, absorbing: model.absorbing() })
    }

    pub fn extended(&self) -> &[f64] {
        &self.extended
    }

    pub fn at(&self, x: usize) -> f64 {
        self.extended[x]
    }

    pub fn max(&self) -> f64 {
        self.extended.iter().cloned().fold(1.0, f64::max)
    }

    /// `‖v‖_w = sup over effective x of |v(x)| / w(x)`.
    pub fn norm(&self, v: &[f64]) -> f64 {
        v.iter()
            .zip(&self.extended)
            .enumerate()
            .filter(|(x, _)| *x != self.absorbing)
            .map(|(_, (v, w))| v.abs() / w)
            .fold(0.0, f64::max)
    }

    /// `‖a − b‖_w`.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.extended)
            .enumerate()
            .filter(|(x, _)| *x != self.absorbing)
            .map(|(_, ((a, b), w))| (a - b).abs() / w)
            .fold(0.0, f64::max)
    }
}
