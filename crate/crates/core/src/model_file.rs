//! JSON model documents.
//!
//! ```json
//! {
//!   "states": ["1", "2"],
//!   "absorbing": "2",
//!   "controls": {"1": ["go"], "2": ["stay"]},
//!   "transitions": [{"x": "1", "u": "go", "y": "1", "p": 0.5},
//!                   {"x": "1", "u": "go", "y": "2", "p": 0.5}],
//!   "costs": [{"x": "1", "u": "go", "y": "1", "c": 1.0},
//!             {"x": "1", "u": "go", "y": "2", "c": 1.0}],
//!   "weight": {"1": 1.0},
//!   "risk": {"family": "avar", "alpha": 0.75}
//! }
//! ```
//!
//! Unlisted transitions have probability 0 and unlisted costs are 0. If the
//! absorbing state lists no controls it gets a single `stay` loop. Risk
//! parameters are a number or a map from state name to number; states
//! missing from the map take the family's neutral value (κ = 0, α = 1).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{MdpBuilder, TransientMdp, WeightFunction};
use crate::risk::{RiskSpec, StateParam};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub states: Vec<String>,
    pub absorbing: String,
    #[serde(default)]
    pub controls: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub transitions: Vec<TransitionEntry>,
    #[serde(default)]
    pub costs: Vec<CostEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<RiskEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionEntry {
    pub x: String,
    pub u: String,
    pub y: String,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostEntry {
    pub x: String,
    pub u: String,
    pub y: String,
    pub c: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskEntry {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<ParamEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<ParamEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamEntry {
    Scalar(f64),
    PerState(BTreeMap<String, f64>),
}

/// A parsed document: the model, its risk map and its weight function.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: TransientMdp,
    /// `None` when the document has no `risk` key.
    pub risk: Option<RiskSpec>,
    pub weight: Option<WeightFunction>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    from_json(&text)
}

pub fn from_json(text: &str) -> Result<LoadedModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    file.into_model()
}

impl ModelFile {
    pub fn into_model(self) -> Result<LoadedModel> {
        let index = |name: &str| -> Result<usize> {
            self.states.iter().position(|s| s == name).ok_or_else(|| invalid(format!("unknown state {name:?}")))
        };
        for (i, s) in self.states.iter().enumerate() {
            if self.states[..i].contains(s) {
                return Err(invalid(format!("duplicate state {s:?}")));
            }
        }
        let a = index(&self.absorbing)?;
        let mut b = MdpBuilder::new(self.states.iter().cloned(), a);
        for name in self.controls.keys() {
            index(name)?;
        }
        for (x, name) in self.states.iter().enumerate() {
            let controls = self.controls.get(name).map(Vec::as_slice).unwrap_or(&[]);
            for (i, u) in controls.iter().enumerate() {
                if controls[..i].contains(u) {
                    return Err(invalid(format!("duplicate control {u:?} at state {name:?}")));
                }
                let c = b.add_control(x, u.clone());
                if x == a {
                    b.set_transition(x, c, a, 1.0);
                }
            }
            if x == a && controls.is_empty() {
                b.add_absorbing_loop("stay");
            }
        }
        let locate = |b: &MdpBuilder, x: &str, u: &str, y: &str| -> Result<(usize, usize, usize)> {
            let xi = index(x)?;
            let ui = b.control_index(xi, u).ok_or_else(|| invalid(format!("unknown control {u:?} at state {x:?}")))?;
            Ok((xi, ui, index(y)?))
        };
        let mut seen = std::collections::HashSet::new();
        for t in &self.transitions {
            let (x, u, y) = locate(&b, &t.x, &t.u, &t.y)?;
            if !seen.insert((x, u, y)) {
                return Err(invalid(format!("duplicate transition ({}, {}, {})", t.x, t.u, t.y)));
            }
            b.set_transition(x, u, y, t.p);
        }
        seen.clear();
        for c in &self.costs {
            let (x, u, y) = locate(&b, &c.x, &c.u, &c.y)?;
            if !seen.insert((x, u, y)) {
                return Err(invalid(format!("duplicate cost ({}, {}, {})", c.x, c.u, c.y)));
            }
            b.set_cost(x, u, y, c.c);
        }
        let model = b.build()?;

        let weight = match &self.weight {
            None => None,
            Some(map) => {
                let mut values = vec![1.0; model.n_states()];
                for (name, &w) in map {
                    values[index(name)?] = w;
                }
                Some(WeightFunction::new(&model, values)?)
            }
        };
        let risk = match &self.risk {
            None => None,
            Some(r) => Some(parse_risk(r, &self.states, &index)?),
        };
        if let Some(r) = &risk {
            r.validate_for(model.n_states())?;
        }
        Ok(LoadedModel { model, risk, weight })
    }
}

fn parse_risk(r: &RiskEntry, states: &[String], index: &impl Fn(&str) -> Result<usize>) -> Result<RiskSpec> {
    let param = |p: &Option<ParamEntry>, key: &str, neutral: f64| -> Result<StateParam> {
        match p {
            None => Err(Error::InvalidRisk(format!("risk family {:?} needs {key}", r.family))),
            Some(ParamEntry::Scalar(v)) => Ok(StateParam::Constant(*v)),
            Some(ParamEntry::PerState(map)) => {
                let mut values = vec![neutral; states.len()];
                for (name, &v) in map {
                    values[index(name)?] = v;
                }
                Ok(StateParam::PerState(values))
            }
        }
    };
    let spec = match r.family.to_ascii_lowercase().as_str() {
        "expectation" => RiskSpec::Expectation,
        "semidev" | "semideviation" | "mean_semideviation" | "mean-semideviation" => {
            RiskSpec::MeanSemideviation { kappa: param(&r.kappa, "kappa", 0.0)? }
        }
        "avar" | "cvar" => RiskSpec::AverageValueAtRisk { alpha: param(&r.alpha, "alpha", 1.0)? },
        other => return Err(Error::InvalidRisk(format!("unknown risk family {other:?}"))),
    };
    spec.validate()?;
    Ok(spec)
}

/// Document describing `model`, listing only positive transitions and
/// nonzero costs.
pub fn to_model_file(model: &TransientMdp, risk: Option<&RiskSpec>, weight: Option<&WeightFunction>) -> ModelFile {
    let names = model.states();
    let mut controls = BTreeMap::new();
    let mut transitions = Vec::new();
    let mut costs = Vec::new();
    for x in 0..model.n_states() {
        controls.insert(names[x].clone(), model.controls(x).to_vec());
        for u in 0..model.n_controls(x) {
            let un = &model.controls(x)[u];
            for y in 0..model.n_states() {
                let p = model.kernel_row(x, u)[y];
                if p > 0.0 {
                    transitions.push(TransitionEntry { x: names[x].clone(), u: un.clone(), y: names[y].clone(), p });
                }
                let c = model.cost_row(x, u)[y];
                if c != 0.0 {
                    costs.push(CostEntry { x: names[x].clone(), u: un.clone(), y: names[y].clone(), c });
                }
            }
        }
    }
    let weight = weight.map(|w| model.effective_states().iter().map(|&x| (names[x].clone(), w.at(x))).collect());
    let param = |p: &StateParam| match p {
        StateParam::Constant(v) => ParamEntry::Scalar(*v),
        StateParam::PerState(v) => ParamEntry::PerState(names.iter().cloned().zip(v.iter().copied()).collect()),
    };
    let risk = risk.map(|r| match r {
        RiskSpec::Expectation => RiskEntry { family: "expectation".into(), kappa: None, alpha: None },
        RiskSpec::MeanSemideviation { kappa } => {
            RiskEntry { family: "mean_semideviation".into(), kappa: Some(param(kappa)), alpha: None }
        }
        RiskSpec::AverageValueAtRisk { alpha } => RiskEntry { family: "avar".into(), kappa: None, alpha: Some(param(alpha)) },
    });
    ModelFile {
        states: names.to_vec(),
        absorbing: names[model.absorbing()].clone(),
        controls,
        transitions,
        costs,
        weight,
        risk,
    }
}

pub fn to_json(model: &TransientMdp, risk: Option<&RiskSpec>, weight: Option<&WeightFunction>) -> Result<String> {
    Ok(serde_json::to_string_pretty(&to_model_file(model, risk, weight))?)
}
