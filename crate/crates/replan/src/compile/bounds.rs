//! Variable bounds per (variable, time step) and interval arithmetic over
//! the network, used both for big-M derivation and for bound preprocessing
//! by auxiliary MILP subproblems.

use crate::error::CompileError;
use crate::milp::model::{MilpModel, Sense, SolveOptions, SolveStatus};
use crate::nn::network::Network;
use crate::planning::PlanningProblem;

/// Fallback big-M when interval arithmetic overflows to non-finite values.
pub const BIG_M_FALLBACK: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Declared,
    Preprocessed,
}

#[derive(Debug, Clone, Copy)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub provenance: Provenance,
}

impl Interval {
    pub fn declared(lower: f64, upper: f64) -> Self {
        Interval { lower, upper, provenance: Provenance::Declared }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Per-(variable, time) bounds. Action intervals cover t in {1..H}, state
/// intervals t in {1..H+1}; index [t-1].
#[derive(Debug, Clone)]
pub struct Bounds {
    pub horizon: usize,
    pub action: Vec<Vec<Interval>>,
    pub state: Vec<Vec<Interval>>,
}

impl Bounds {
    /// Declared variable boxes at every step; the initial state is pinned
    /// to the init vector.
    pub fn declared(problem: &PlanningProblem, horizon: usize) -> Bounds {
        let a_row: Vec<Interval> =
            problem.action_vars().map(|v| Interval::declared(v.lower, v.upper)).collect();
        let s_row: Vec<Interval> =
            problem.state_vars().map(|v| Interval::declared(v.lower, v.upper)).collect();
        let mut state = vec![s_row; horizon + 1];
        for (i, &v) in problem.init.iter().enumerate() {
            state[0][i] = Interval::declared(v, v);
        }
        Bounds { horizon, action: vec![a_row; horizon], state }
    }

    pub fn action_at(&self, t: usize, i: usize) -> Interval {
        self.action[t - 1][i]
    }

    pub fn state_at(&self, t: usize, i: usize) -> Interval {
        self.state[t - 1][i]
    }
}

/// Widen an interval endpoint outward so floating-point rounding in the
/// solver cannot cut off true feasible points.
pub fn inflate_up(x: f64) -> f64 {
    x + 1e-9 * (1.0 + x.abs())
}

pub fn inflate_down(x: f64) -> f64 {
    x - 1e-9 * (1.0 + x.abs())
}

#[derive(Debug, Clone, Copy)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
}

impl Span {
    fn relu(self) -> Span {
        Span { lo: self.lo.max(0.0), hi: self.hi.max(0.0) }
    }
}

/// Per-step interval propagation through the network: returns, for each
/// hidden layer, the pre-activation span of every unit, plus the output
/// span per state variable.
pub fn propagate_spans(net: &Network, state: &[Span], action: &[Span]) -> (Vec<Vec<Span>>, Vec<Span>) {
    let mut inputs: Vec<Span> = state.iter().chain(action.iter()).copied().collect();
    let mut preacts: Vec<Vec<Span>> = Vec::with_capacity(net.layers.len() - 1);
    for (k, layer) in net.layers.iter().enumerate() {
        let last = k + 1 == net.layers.len();
        let mut layer_pre = Vec::with_capacity(layer.out_width());
        for u in 0..layer.out_width() {
            let mut lo = layer.bias[u];
            let mut hi = layer.bias[u];
            for (j, &inp) in inputs.iter().enumerate() {
                let w = layer.weights.get(u, j);
                if w >= 0.0 {
                    lo += w * inp.lo;
                    hi += w * inp.hi;
                } else {
                    lo += w * inp.hi;
                    hi += w * inp.lo;
                }
            }
            layer_pre.push(Span { lo, hi });
        }
        if last {
            return (preacts, layer_pre);
        }
        inputs.extend(layer_pre.iter().map(|s| s.relu()));
        preacts.push(layer_pre);
    }
    unreachable!("network has at least one layer")
}

/// Budget per preprocessing subproblem: whichever limit is hit first.
#[derive(Debug, Clone)]
pub struct PreprocessBudget {
    pub time_limit: std::time::Duration,
    pub node_limit: usize,
}

impl Default for PreprocessBudget {
    fn default() -> Self {
        PreprocessBudget { time_limit: std::time::Duration::from_secs(2), node_limit: 500 }
    }
}

/// Tightest-bound preprocessing: for each action and state variable at each
/// step, minimize and maximize it over the base encoding, taking the best
/// dual bound found within the budget (always valid, even on early stop).
/// Actions are processed before states, in increasing t; each tightened
/// bound is written into the working model so later subproblems benefit.
pub fn preprocess_bounds(
    problem: &PlanningProblem,
    net: &Network,
    horizon: usize,
    budget: &PreprocessBudget,
) -> Result<Bounds, CompileError> {
    let mut bounds = Bounds::declared(problem, horizon);
    let (mut model, vars) = super::encode::compile_base(problem, net, horizon, &bounds)?;
    let options = SolveOptions {
        time_limit: Some(budget.time_limit),
        node_limit: Some(budget.node_limit),
        rel_gap_target: 1e-6,
    };

    let action_names: Vec<String> = problem.action_vars().map(|v| v.name.clone()).collect();
    let state_names: Vec<String> = problem.state_vars().map(|v| v.name.clone()).collect();

    for t in 1..=horizon {
        for (a, name) in action_names.iter().enumerate() {
            let col = vars.x[t - 1][a];
            let iv = tighten_var(&mut model, col, &options, name, t)?;
            bounds.action[t - 1][a] = iv;
        }
    }
    for t in 2..=horizon + 1 {
        for (s, name) in state_names.iter().enumerate() {
            let col = vars.y[t - 1][s];
            let iv = tighten_var(&mut model, col, &options, name, t)?;
            bounds.state[t - 1][s] = iv;
        }
    }
    Ok(bounds)
}

fn tighten_var(
    model: &mut MilpModel,
    col: usize,
    options: &SolveOptions,
    name: &str,
    t: usize,
) -> Result<Interval, CompileError> {
    let declared_lower = model.vars[col].lower;
    let declared_upper = model.vars[col].upper;

    model.objective.clear();
    model.objective_constant = 0.0;
    model.set_objective_coeff(col, 1.0);

    model.sense = Sense::Minimize;
    let min_res = crate::milp::branch_bound::solve(model, options)?;
    if min_res.status == SolveStatus::Infeasible {
        return Err(CompileError::Infeasible(name.to_string(), t));
    }
    // dual bound of the minimization: valid lower bound on the variable
    let mut lower = min_res.bound.max(declared_lower);

    model.sense = Sense::Maximize;
    let max_res = crate::milp::branch_bound::solve(model, options)?;
    if max_res.status == SolveStatus::Infeasible {
        return Err(CompileError::Infeasible(name.to_string(), t));
    }
    let mut upper = max_res.bound.min(declared_upper);

    lower = inflate_down(lower);
    upper = inflate_up(upper);
    if lower > upper {
        // numerically crossed point interval
        let mid = 0.5 * (lower + upper);
        lower = mid;
        upper = mid;
    }
    model.vars[col].lower = lower;
    model.vars[col].upper = upper;
    Ok(Interval { lower, upper, provenance: Provenance::Preprocessed })
}
