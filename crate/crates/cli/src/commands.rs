use std::collections::BTreeMap;
use std::path::Path;

use riskmdp::applications::asset_selling::{asset_threshold, fixed_point_residual, AssetSellingSpec};
use riskmdp::applications::transplant::{solve_transplant, TransplantSpec, S, TRANSPLANT, WAIT};
use riskmdp::dp::{policy_iteration, solve_finite_horizon, value_iteration, SolverOptions};
use riskmdp::model_file::{load_model, LoadedModel};
use riskmdp::multikernel::{check_risk_transient, Scope, TransienceOptions, TransienceVerdict};
use riskmdp::randomized::{randomized_bellman_solve, RandomizedOptions};
use riskmdp::{DeterministicPolicy, Error, RiskSpec, TransientMdp, ValueFunction, WeightFunction};

use crate::report::{fmt_value, PolicyReport, Report};
use crate::{AssetArgs, CheckArgs, SolveArgs, TransplantArgs, EXIT_DIVERGENCE, EXIT_INCONCLUSIVE, EXIT_INVALID, EXIT_OK};

pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence { .. } => EXIT_DIVERGENCE,
            Error::Inconclusive { .. } => EXIT_INCONCLUSIVE,
            _ => EXIT_INVALID,
        };
        Failure { code, message: e.to_string() }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_INVALID, message: message.into() }
}

type CmdResult = Result<u8, Failure>;

fn resolve_risk(flag: Option<&str>, loaded: &LoadedModel) -> Result<RiskSpec, Failure> {
    let spec = match flag {
        Some(s) => s.parse::<RiskSpec>()?,
        None => loaded.risk.clone().ok_or_else(|| invalid("no risk map: pass --risk or add \"risk\" to the model file"))?,
    };
    spec.validate_for(loaded.model.n_states())?;
    Ok(spec)
}

fn read_json(path: &Path) -> Result<serde_json::Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn print_table(model: &TransientMdp, values: &[f64], policy: &PolicyReport) {
    let width = model.states().iter().map(String::len).max().unwrap_or(5).max(5);
    println!("{:<width$}  {:>16}  policy", "state", "value");
    for (x, name) in model.states().iter().enumerate() {
        let rule = match policy {
            PolicyReport::Deterministic(map) => map[name].clone(),
            PolicyReport::Randomized(map) => {
                map[name].iter().map(|(u, p)| format!("{u}={}", fmt_value(*p))).collect::<Vec<_>>().join(" ")
            }
        };
        println!("{name:<width$}  {:>16}  {rule}", fmt_value(values[x]));
    }
}

fn deterministic_report(model: &TransientMdp, policy: &DeterministicPolicy) -> PolicyReport {
    PolicyReport::Deterministic(
        model.states().iter().enumerate().map(|(x, s)| (s.clone(), model.controls(x)[policy.control(x)].clone())).collect(),
    )
}

pub fn solve(args: &SolveArgs) -> CmdResult {
    let loaded = load_model(&args.model)?;
    let spec = resolve_risk(args.risk.as_deref(), &loaded)?;
    let model = &loaded.model;
    if !(args.tol > 0.0) {
        return Err(invalid("--tol must be positive"));
    }
    let mut options = SolverOptions::default().with_tol(args.tol).with_max_iter(args.max_iter);
    if let Some(w) = &loaded.weight {
        options = options.with_weight(w.clone());
    }
    let (values, policy, iterations, residual, inner_gap) = match args.method.as_str() {
        m if m.starts_with("finite:") => {
            let horizon: usize = m["finite:".len()..].parse().map_err(|_| invalid(format!("bad horizon in {m:?}")))?;
            let sol = solve_finite_horizon(model, &spec, horizon, &ValueFunction::zeros(model))?;
            let err = sol.dp_error(model, &spec)?;
            (sol.first_stage().as_slice().to_vec(), deterministic_report(model, &sol.policies[0]), horizon, err, None)
        }
        "value-iter" => {
            let sol = value_iteration(model, &spec, &options)?;
            (sol.value.into_vec(), deterministic_report(model, &sol.policy), sol.iterations, sol.residual, None)
        }
        "policy-iter" => {
            let sol = policy_iteration(model, &spec, &DeterministicPolicy::first_controls(model), &options)?;
            (sol.value.into_vec(), deterministic_report(model, &sol.policy), sol.iterations, sol.residual, None)
        }
        "randomized" => {
            let sol = randomized_bellman_solve(model, &spec, &RandomizedOptions { solver: options, ..Default::default() })?;
            let policy = PolicyReport::Randomized(
                model
                    .states()
                    .iter()
                    .enumerate()
                    .map(|(x, s)| {
                        let d = sol.policy.distribution(x);
                        (s.clone(), model.controls(x).iter().cloned().zip(d.iter().copied()).collect::<BTreeMap<_, _>>())
                    })
                    .collect(),
            );
            (sol.value.into_vec(), policy, sol.iterations, sol.residual, Some(sol.inner_gap))
        }
        other => return Err(invalid(format!("unknown method {other:?}; use finite:T, policy-iter, value-iter or randomized"))),
    };
    println!("method: {}", args.method);
    println!("risk: {spec}");
    println!("iterations: {iterations}");
    println!("residual: {residual:.3e}");
    if let Some(g) = inner_gap {
        println!("inner gap: {g:.3e}");
    }
    print_table(model, &values, &policy);
    if let Some(out) = &args.out {
        let report = Report {
            method: args.method.clone(),
            risk: spec.to_string(),
            states: model.states().to_vec(),
            values,
            policy,
            iterations,
            residual,
            inner_gap,
        };
        let text = serde_json::to_string_pretty(&report).map_err(|e| invalid(e.to_string()))?;
        std::fs::write(out, text).map_err(|e| invalid(format!("cannot write {}: {e}", out.display())))?;
    }
    Ok(EXIT_OK)
}

fn read_policy(path: &Path, model: &TransientMdp) -> Result<DeterministicPolicy, Failure> {
    let json = read_json(path)?;
    let map = json.get("policy").unwrap_or(&json);
    let map = map.as_object().ok_or_else(|| invalid("policy file must map state names to control names"))?;
    let mut controls = vec![0usize; model.n_states()];
    for (state, control) in map {
        let x = model.state_index(state).ok_or_else(|| invalid(format!("unknown state {state:?} in policy")))?;
        let name = control.as_str().ok_or_else(|| invalid(format!("policy at {state:?} is not a control name")))?;
        controls[x] = model.control_index(x, name).ok_or_else(|| invalid(format!("unknown control {name:?} at {state:?}")))?;
    }
    Ok(DeterministicPolicy::new(controls))
}

fn read_weight(path: &Path, model: &TransientMdp) -> Result<WeightFunction, Failure> {
    let json = read_json(path)?;
    let map = json.get("weight").unwrap_or(&json);
    let map = map.as_object().ok_or_else(|| invalid("weight file must map state names to numbers"))?;
    let mut values = vec![1.0; model.n_states()];
    for (state, w) in map {
        let x = model.state_index(state).ok_or_else(|| invalid(format!("unknown state {state:?} in weight")))?;
        values[x] = w.as_f64().ok_or_else(|| invalid(format!("weight at {state:?} is not a number")))?;
    }
    Ok(WeightFunction::new(model, values)?)
}

pub fn check_transient(args: &CheckArgs) -> CmdResult {
    let loaded = load_model(&args.model)?;
    let spec = resolve_risk(args.risk.as_deref(), &loaded)?;
    let model = &loaded.model;
    let weight = match args.weight.as_str() {
        "default" => loaded.weight.clone().unwrap_or_else(|| WeightFunction::unit(model)),
        path => read_weight(Path::new(path), model)?,
    };
    let policy = match &args.policy {
        Some(p) => Some(read_policy(p, model)?),
        None => None,
    };
    let scope = match &policy {
        Some(p) => Scope::Policy(p),
        None => Scope::AllPolicies,
    };
    let options = TransienceOptions { max_iter: args.max_iter, ..Default::default() };
    let r = check_risk_transient(model, &spec, scope, &weight, &options)?;
    let (line, code) = match r.verdict {
        TransienceVerdict::Transient => (format!("transient, K ≈ {}", fmt_value(r.bound)), EXIT_OK),
        TransienceVerdict::NonTransient => ("non-transient".to_string(), EXIT_DIVERGENCE),
        TransienceVerdict::Inconclusive => ("inconclusive".to_string(), EXIT_INCONCLUSIVE),
    };
    println!("{line}");
    println!("scope: {}", if r.uniform { "uniform" } else { "policy" });
    if r.verdict == TransienceVerdict::Transient {
        println!("bound_K: {}", fmt_value(r.bound));
    }
    println!("iterations: {}", r.iterations);
    if let Some(at) = r.divergence_detected_at {
        println!("divergence detected at iteration {at}");
    }
    Ok(code)
}

fn parse_pmf(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| invalid(format!("bad probability {t:?} in --pmf"))))
        .collect()
}

pub fn asset_selling(args: &AssetArgs) -> CmdResult {
    let risk: RiskSpec = args.risk.parse()?;
    let spec = AssetSellingSpec::new(parse_pmf(&args.pmf)?, args.c0, risk)?;
    let t = asset_threshold(&spec)?;
    let residual = fixed_point_residual(&spec, &t)?;
    println!("risk: {}", spec.risk);
    println!("x* = {}", t.x_star);
    println!("critical level: {}", fmt_value(t.critical_level));
    if t.at_support_edge {
        println!("threshold at the largest offer: sell only at the top of the support");
    }
    println!("fixed-point residual: {residual:.3e}");
    println!("{:>6}  {:>16}  {:>16}", "x", "tail", "value");
    for (x, g) in t.tail_values.iter().enumerate() {
        println!("{x:>6}  {:>16}  {:>16}", fmt_value(*g), fmt_value(t.value(x)));
    }
    Ok(EXIT_OK)
}

pub fn transplant(args: &TransplantArgs) -> CmdResult {
    let mut spec = TransplantSpec::with_kappa(args.kappa);
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut spec.q_ss_w, args.q_ss_w);
    set(&mut spec.q_sd_w, args.q_sd_w);
    set(&mut spec.q_sl_t, args.q_sl_t);
    set(&mut spec.q_sd_t, args.q_sd_t);
    let mix = &mut spec.mixture;
    set(&mut mix.delta, args.delta);
    set(&mut mix.beta, args.beta);
    set(&mut mix.w1, args.w1);
    set(&mut mix.m, args.m);
    set(&mut mix.sigma, args.sigma);
    set(&mut mix.w2, args.w2);
    set(&mut mix.b, args.b);
    set(&mut mix.alpha_g, args.alpha_g);
    set(&mut mix.w3, args.w3);
    if let Some(n) = args.n_survival {
        spec.n_survival = n;
    }
    if let Some(a) = args.age_offset {
        spec.age_offset_months = a;
    }
    if let Some(m) = args.max_lifetime {
        spec.max_lifetime_months = m;
    }
    let r = solve_transplant(&spec, args.randomized)?;
    println!("kappa: {}", spec.kappa);
    println!("r(L) = {}", fmt_value(r.r_l));
    println!("deterministic action at S: {}", r.deterministic_action);
    println!("v(S) deterministic: {}", fmt_value(r.deterministic.value[S]));
    println!("J(S) always W: {}", fmt_value(r.always_wait));
    println!("J(S) always T: {}", fmt_value(r.transplant_now));
    if let Some(rand) = &r.randomized {
        let d = rand.policy.distribution(S);
        println!("v(S) randomized: {}", fmt_value(rand.value[S]));
        println!("lambda_W = {}", fmt_value(d[WAIT]));
        println!("lambda_T = {}", fmt_value(d[TRANSPLANT]));
        println!("inner gap: {:.3e}", rand.inner_gap);
    }
    Ok(EXIT_OK)
}
